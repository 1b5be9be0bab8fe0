//! Visual token extraction.
//!
//! Frames are resized to `image_size`², scaled to [-1, 1] per channel and
//! cut into non-overlapping `patch_size`² patches. The stub encoder is a
//! single bias-free linear patch embedding, so an all-zero frame maps to
//! all-zero tokens.
//!
//! Media references resolve as follows:
//! - `*.tokens.csv`: precomputed tokens, one comma-separated row per token
//! - a directory: image frames, sorted by file name, sampled with a uniform
//!   stride down to `max_frames`
//! - anything else: a single image file

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub max_frames: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 448,
            patch_size: 32,
            max_frames: 1,
        }
    }
}

impl EncoderConfig {
    pub fn patches_per_frame(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch_size == 0
            || self.image_size == 0
            || !self.image_size.is_multiple_of(self.patch_size)
        {
            return Err(ModelError::Config(format!(
                "image size {} must be a positive multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.max_frames == 0 {
            return Err(ModelError::Config("max_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// A normalized RGB frame, channel-major: `data[c][y][x]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    pub fn load(path: &Path, size: usize) -> Result<Self, ModelError> {
        let img = image::open(path).map_err(|e| ModelError::Media {
            media_ref: path.display().to_string(),
            message: e.to_string(),
        })?;
        let rgb = img
            .resize_exact(
                size as u32,
                size as u32,
                image::imageops::FilterType::Triangle,
            )
            .to_rgb8();
        let mut data = vec![0.0; 3 * size * size];
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[c * size * size + y as usize * size + x as usize] =
                    f64::from(px[c]) / 127.5 - 1.0;
            }
        }
        Ok(Self { size, data })
    }

    /// Row-major patch grid; each row is one flattened `3 × p × p` patch.
    pub fn patches(&self, patch: usize) -> Array2<f64> {
        let grid = self.size / patch;
        let plane = self.size * self.size;
        let mut out = Array2::zeros((grid * grid, 3 * patch * patch));
        for gy in 0..grid {
            for gx in 0..grid {
                let mut row = out.row_mut(gy * grid + gx);
                let mut k = 0;
                for c in 0..3 {
                    for py in 0..patch {
                        let start = c * plane + (gy * patch + py) * self.size + gx * patch;
                        for v in &self.data[start..start + patch] {
                            row[k] = *v;
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Visual input of one record before projection.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualInput {
    /// Raw patches; the patch embedding is applied inside the model.
    Patches(Array2<f64>),
    /// Precomputed tokens of width `d_vision`.
    Tokens(Array2<f64>),
}

impl VisualInput {
    pub fn rows(&self) -> usize {
        match self {
            VisualInput::Patches(p) | VisualInput::Tokens(p) => p.nrows(),
        }
    }
}

/// Encoder output: `num_tokens × d_vision`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTokens {
    pub tokens: Array2<f64>,
    pub provenance: String,
}

impl VisualTokens {
    pub fn new(tokens: Array2<f64>, provenance: impl Into<String>) -> Result<Self, ModelError> {
        if tokens.nrows() == 0 {
            return Err(ModelError::Shape(
                "visual tokens need at least one row".into(),
            ));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("visual tokens".into()));
        }
        Ok(Self {
            tokens,
            provenance: provenance.into(),
        })
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Indices of `k` frames spread with a uniform stride over `n`.
pub fn uniform_stride(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

fn read_token_csv(path: &Path) -> Result<Array2<f64>, ModelError> {
    let media_err = |message: String| ModelError::Media {
        media_ref: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| media_err(e.to_string()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| media_err(format!("`{v}`: {e}")))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != width) {
        return Err(media_err(
            "token rows must be non-empty and of equal width".into(),
        ));
    }
    Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| media_err(e.to_string()))
}

/// Loads the frames (or precomputed tokens) behind a media reference.
pub fn load_media(media_ref: &str, cfg: &EncoderConfig) -> Result<VisualInput, ModelError> {
    let path = Path::new(media_ref);
    if media_ref.ends_with(".tokens.csv") {
        return read_token_csv(path).map(VisualInput::Tokens);
    }
    let frames: Vec<Frame> = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| ModelError::Media {
                media_ref: media_ref.to_string(),
                message: e.to_string(),
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_image(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(ModelError::Media {
                media_ref: media_ref.to_string(),
                message: "directory holds no image frames".into(),
            });
        }
        uniform_stride(files.len(), cfg.max_frames)
            .into_iter()
            .map(|i| Frame::load(&files[i], cfg.image_size))
            .collect::<Result<_, _>>()?
    } else {
        vec![Frame::load(path, cfg.image_size)?]
    };
    let blocks: Vec<Array2<f64>> = frames.iter().map(|f| f.patches(cfg.patch_size)).collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let patches = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal patch widths");
    Ok(VisualInput::Patches(patches))
}
