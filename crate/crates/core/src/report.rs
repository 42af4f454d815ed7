//! Serde helpers for JSON reports: floats are written with 6 significant
//! digits, and infinities (the PCE sentinel) as the strings `"inf"` /
//! `"-inf"`.

use serde::Serializer;

use crate::numeric::round_sig;

pub const REPORT_DIGITS: i32 = 6;

pub fn sig6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else {
        s.serialize_f64(round_sig(*v, REPORT_DIGITS))
    }
}

pub fn sig6_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => sig6(v, s),
        None => s.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use serde::Serialize;

    #[derive(Serialize)]
    struct T {
        #[serde(serialize_with = "super::sig6")]
        a: f64,
        #[serde(serialize_with = "super::sig6")]
        b: f64,
        #[serde(serialize_with = "super::sig6_opt")]
        c: Option<f64>,
    }

    #[test]
    fn writes_six_digits_and_inf() {
        let t = T {
            a: 1234.56789,
            b: f64::INFINITY,
            c: Some(2.0 / 3.0),
        };
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"a":1234.57,"b":"inf","c":0.666667}"#
        );
    }
}
