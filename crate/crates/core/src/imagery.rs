//! Image and frame-directory ingestion.
//!
//! Frames are expected as pre-decoded raster files (PNG, JPEG, PGM/PPM);
//! video containers are not parsed here.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{HsiError, Result};
use crate::plane::Plane;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub const DEFAULT_SATURATION_THRESHOLD: f64 = 250.0;

const SUPPORTED_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pgm", "ppm", "pnm"];

/// A decoded image: luminance plus the color channels when the source had them.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub luma: Plane,
    pub rgb: Option<[Plane; 3]>,
}

impl LoadedImage {
    pub fn gray(luma: Plane) -> Self {
        Self { luma, rgb: None }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.luma.dims()
    }
}

pub fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn decode_err(path: &Path, reason: impl ToString) -> HsiError {
    HsiError::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| HsiError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| HsiError::io(path, e))?;
    let img = reader.decode().map_err(|e| decode_err(path, e))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(HsiError::invalid(format!(
            "{} has a zero dimension",
            path.display()
        )));
    }
    Ok(img)
}

fn is_sixteen_bit(img: &DynamicImage) -> bool {
    matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    )
}

/// Decodes an image keeping the color channels (on the 0..=255 scale).
pub fn load_image(path: &Path) -> Result<LoadedImage> {
    let img = open_image(path)?;
    let (rows, cols) = (img.height() as usize, img.width() as usize);
    let has_color = img.color().has_color();
    let sixteen = is_sixteen_bit(&img);
    let k16 = 255.0 / 65535.0;

    if !has_color {
        let data: Vec<f64> = if sixteen {
            img.to_luma16().into_raw().iter().map(|&v| v as f64 * k16).collect()
        } else {
            img.to_luma8().into_raw().iter().map(|&v| v as f64).collect()
        };
        return Ok(LoadedImage::gray(Plane::from_vec(rows, cols, data)));
    }

    let samples: Vec<f64> = if sixteen {
        img.to_rgb16().into_raw().iter().map(|&v| v as f64 * k16).collect()
    } else {
        img.to_rgb8().into_raw().iter().map(|&v| v as f64).collect()
    };
    let mut channels = [
        Vec::with_capacity(rows * cols),
        Vec::with_capacity(rows * cols),
        Vec::with_capacity(rows * cols),
    ];
    let mut luma = Vec::with_capacity(rows * cols);
    for px in samples.chunks_exact(3) {
        for (ch, &v) in channels.iter_mut().zip(px) {
            ch.push(v);
        }
        luma.push(LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]);
    }
    let [r, g, b] = channels;
    Ok(LoadedImage {
        luma: Plane::from_vec(rows, cols, luma),
        rgb: Some([
            Plane::from_vec(rows, cols, r),
            Plane::from_vec(rows, cols, g),
            Plane::from_vec(rows, cols, b),
        ]),
    })
}

/// Loads an image as a luminance plane.
pub fn load_luma(path: &Path) -> Result<Plane> {
    load_image(path).map(|img| img.luma)
}

/// Binary mask: 0 where `img >= threshold`, 1 elsewhere.
pub fn saturation_mask(img: &Plane, threshold: f64) -> Plane {
    img.map(|v| if v >= threshold { 0.0 } else { 1.0 })
}

/// Writes a plane as an 8-bit grayscale PNG, rounding and clipping to 0..=255.
pub fn write_gray_png(plane: &Plane, path: &Path) -> Result<()> {
    let (rows, cols) = plane.dims();
    let buf: Vec<u8> = plane
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let img: GrayImage = image::ImageBuffer::<Luma<u8>, _>::from_raw(cols as u32, rows as u32, buf)
        .expect("buffer length matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}

#[derive(Debug, Clone)]
enum Frames {
    Files(Vec<PathBuf>),
    Memory(Arc<Vec<LoadedImage>>),
}

/// An ordered set of equally sized frames, either backed by files (loaded on
/// demand) or held in memory.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    source: Option<PathBuf>,
    rows: usize,
    cols: usize,
    frames: Frames,
}

impl FrameSequence {
    pub fn from_images(images: Vec<LoadedImage>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| HsiError::invalid("frame sequence needs at least one frame"))?;
        let (rows, cols) = first.dims();
        for (i, img) in images.iter().enumerate() {
            let (r, c) = img.dims();
            if (r, c) != (rows, cols) {
                return Err(HsiError::InconsistentSequence {
                    path: PathBuf::from(format!("<frame {i}>")),
                    rows,
                    cols,
                    found_rows: r,
                    found_cols: c,
                });
            }
        }
        Ok(Self {
            source: None,
            rows,
            cols,
            frames: Frames::Memory(Arc::new(images)),
        })
    }

    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        Self::from_images(planes.into_iter().map(LoadedImage::gray).collect())
    }

    pub fn len(&self) -> usize {
        match &self.frames {
            Frames::Files(p) => p.len(),
            Frames::Memory(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows, cols)` shared by every frame.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    /// File paths in sequence order; empty for in-memory sequences.
    pub fn paths(&self) -> &[PathBuf] {
        match &self.frames {
            Frames::Files(p) => p,
            Frames::Memory(_) => &[],
        }
    }

    pub fn load(&self, index: usize) -> Result<LoadedImage> {
        match &self.frames {
            Frames::Memory(m) => m
                .get(index)
                .cloned()
                .ok_or_else(|| HsiError::invalid(format!("frame index {index} out of range"))),
            Frames::Files(paths) => {
                let path = paths
                    .get(index)
                    .ok_or_else(|| HsiError::invalid(format!("frame index {index} out of range")))?;
                let img = load_image(path)?;
                if img.dims() != (self.rows, self.cols) {
                    let (r, c) = img.dims();
                    return Err(HsiError::InconsistentSequence {
                        path: path.clone(),
                        rows: self.rows,
                        cols: self.cols,
                        found_rows: r,
                        found_cols: c,
                    });
                }
                Ok(img)
            }
        }
    }

    pub fn luma(&self, index: usize) -> Result<Plane> {
        self.load(index).map(|img| img.luma)
    }

    /// Frames at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<FrameSequence> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(HsiError::invalid(format!("frame index {bad} out of range")));
        }
        let frames = match &self.frames {
            Frames::Files(p) => Frames::Files(indices.iter().map(|&i| p[i].clone()).collect()),
            Frames::Memory(m) => Frames::Memory(Arc::new(indices.iter().map(|&i| m[i].clone()).collect())),
        };
        Ok(FrameSequence {
            source: self.source.clone(),
            rows: self.rows,
            cols: self.cols,
            frames,
        })
    }

    /// The first `n` frames (or all, if fewer).
    pub fn take(&self, n: usize) -> FrameSequence {
        let frames = match &self.frames {
            Frames::Files(p) => Frames::Files(p.iter().take(n).cloned().collect()),
            Frames::Memory(m) => Frames::Memory(Arc::new(m.iter().take(n).cloned().collect())),
        };
        FrameSequence {
            source: self.source.clone(),
            rows: self.rows,
            cols: self.cols,
            frames,
        }
    }
}

/// Opens a directory of frame files in lexicographic filename order.
pub fn open_sequence(dir: &Path) -> Result<FrameSequence> {
    let entries = std::fs::read_dir(dir).map_err(|e| HsiError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HsiError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_supported(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(HsiError::NoFrames(dir.to_path_buf()));
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let (cols, rows) = image::image_dimensions(&paths[0]).map_err(|e| decode_err(&paths[0], e))?;
    let (rows, cols) = (rows as usize, cols as usize);
    if rows == 0 || cols == 0 {
        return Err(HsiError::invalid(format!(
            "{} has a zero dimension",
            paths[0].display()
        )));
    }
    for path in &paths[1..] {
        let (c, r) = image::image_dimensions(path).map_err(|e| decode_err(path, e))?;
        if (r as usize, c as usize) != (rows, cols) {
            return Err(HsiError::InconsistentSequence {
                path: path.clone(),
                rows,
                cols,
                found_rows: r as usize,
                found_cols: c as usize,
            });
        }
    }
    Ok(FrameSequence {
        source: Some(dir.to_path_buf()),
        rows,
        cols,
        frames: Frames::Files(paths),
    })
}
