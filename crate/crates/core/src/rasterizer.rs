//! Line-drawing rasterization of normalized signal windows.
//!
//! Successive samples are placed `dummy_spacing` columns apart and joined
//! with integer Bresenham segments on a zeroed canvas. When the canvas is
//! wider than the configured image, adjacent column groups are merged with
//! a logical OR so the output keeps the configured width.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::Window;

pub const INK: u8 = 255;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid raster config: {0}")]
    InvalidConfig(&'static str),
    #[error("window needs {needed} columns but the image is {width} wide")]
    WidthOverflow { needed: usize, width: usize },
    #[error("window must contain at least 2 samples")]
    WindowTooShort,
    #[error("amplitude {0} outside [0, 1]")]
    AmplitudeOutOfRange(f64),
    #[error("png export failed: {0}")]
    Png(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Integer Bresenham chain from `(x1, y1)` to `(x2, y2)`, both endpoints
/// included. Steps along the major axis; a zero decision parameter
/// advances diagonally.
pub fn bresenham(x1: i64, y1: i64, x2: i64, y2: i64) -> Vec<(i64, i64)> {
    let dx = (x2 - x1).abs();
    let dy = (y2 - y1).abs();
    let sx = if x2 >= x1 { 1 } else { -1 };
    let sy = if y2 >= y1 { 1 } else { -1 };

    let mut pixels = Vec::with_capacity(dx.max(dy) as usize + 1);
    let (mut x, mut y) = (x1, y1);

    if dy <= dx {
        // shallow: one pixel per column
        let mut rho = 2 * dy - dx;
        for _ in 0..=dx {
            pixels.push((x, y));
            if rho >= 0 {
                y += sy;
                rho -= 2 * dx;
            }
            rho += 2 * dy;
            x += sx;
        }
    } else {
        let mut rho = 2 * dx - dy;
        for _ in 0..=dy {
            pixels.push((x, y));
            if rho >= 0 {
                x += sx;
                rho -= 2 * dy;
            }
            rho += 2 * dx;
            y += sy;
        }
    }
    pixels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    /// Amplitude units per pixel row.
    pub y_resolution: f64,
    pub image_height: usize,
    pub image_width: usize,
    /// Columns between consecutive true samples (2 = one dummy pixel).
    pub dummy_spacing: usize,
    /// OR-merge column groups when the stroke canvas is wider than
    /// `image_width`; otherwise such windows are rejected.
    pub compress_columns: bool,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            y_resolution: 0.015625,
            image_height: 64,
            image_width: 1000,
            dummy_spacing: 2,
            compress_columns: true,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.y_resolution > 0.0) {
            return Err(RasterError::InvalidConfig("y_resolution must be > 0"));
        }
        if self.image_height < 2 {
            return Err(RasterError::InvalidConfig("image_height must be >= 2"));
        }
        if self.image_width < 1 {
            return Err(RasterError::InvalidConfig("image_width must be >= 1"));
        }
        if self.dummy_spacing < 1 {
            return Err(RasterError::InvalidConfig("dummy_spacing must be >= 1"));
        }
        Ok(())
    }

    /// Width of the uncompressed stroke canvas for a window of `len` samples.
    pub fn canvas_width(&self, len: usize) -> usize {
        (len.saturating_sub(1)) * self.dummy_spacing + 1
    }
}

/// Row 0 is the top of the image (highest amplitude).
pub fn amplitude_to_row(value: f64, config: &RasterConfig) -> usize {
    let top = config.image_height - 1;
    let level = (value / config.y_resolution).floor();
    let level = if level.is_nan() || level < 0.0 {
        0
    } else {
        (level as usize).min(top)
    };
    top - level
}

/// Row-major 8-bit single-channel image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    /// Sample offset of the source window in its recording.
    pub start_index: usize,
}

impl RasterImage {
    pub fn zeros(height: usize, width: usize, start_index: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
            start_index,
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<u8>, start_index: usize) -> Option<Self> {
        (pixels.len() == height * width).then_some(Self {
            height,
            width,
            pixels,
            start_index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            height: h as usize,
            width: w as usize,
            pixels: img.into_raw(),
            start_index: 0,
        })
    }
}

/// `<bearing>_<windowindex>.png`
pub fn png_file_name(bearing: &str, window_index: usize) -> String {
    format!("{bearing}_{window_index}.png")
}

/// Draws the full-resolution stroke canvas (`image_height` x
/// `canvas_width(len)`) without any column compression.
pub fn rasterize_canvas(window: &Window, config: &RasterConfig) -> Result<RasterImage> {
    config.validate()?;
    if window.len() < 2 {
        return Err(RasterError::WindowTooShort);
    }
    if let Some(&bad) = window.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(RasterError::AmplitudeOutOfRange(bad));
    }
    let width = config.canvas_width(window.len());
    let mut canvas = RasterImage::zeros(config.image_height, width, window.start_index);
    let rows: Vec<i64> = window
        .values
        .iter()
        .map(|&v| amplitude_to_row(v, config) as i64)
        .collect();
    let spacing = config.dummy_spacing as i64;

    for (k, pair) in rows.windows(2).enumerate() {
        let x1 = k as i64 * spacing;
        let x2 = x1 + spacing;
        for (x, y) in bresenham(x1, pair[0], x2, pair[1]) {
            canvas.set(y as usize, x as usize, INK);
        }
    }
    Ok(canvas)
}

/// Merges groups of `factor` adjacent columns with a logical OR and pads
/// with empty columns up to `width`.
pub fn compress_columns(canvas: &RasterImage, width: usize) -> RasterImage {
    let factor = canvas.width.div_ceil(width).max(1);
    let mut out = RasterImage::zeros(canvas.height, width, canvas.start_index);
    for row in 0..canvas.height {
        for col in 0..canvas.width {
            if canvas.get(row, col) != 0 {
                out.set(row, col / factor, INK);
            }
        }
    }
    out
}

/// Rasterizes a normalized window into an `image_height` x `image_width`
/// binary image.
pub fn rasterize_window(window: &Window, config: &RasterConfig) -> Result<RasterImage> {
    let canvas = rasterize_canvas(window, config)?;
    if canvas.width > config.image_width && !config.compress_columns {
        return Err(RasterError::WidthOverflow {
            needed: canvas.width,
            width: config.image_width,
        });
    }
    Ok(compress_columns(&canvas, config.image_width))
}
