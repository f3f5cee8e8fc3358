//! Raster loading and tiling.
//!
//! Large map scans are sliced into fixed-size patches so downstream stages
//! work within bounded memory. The pixel coordinate convention is fixed
//! project-wide: origin at the top-left corner, x rightward, y downward,
//! units of pixels. Edge patches are clipped to the image boundary, never
//! zero-padded, so detection coordinates always live in true image space.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// An 8-bit RGB pixel grid with an identifier. Immutable after load; safe to
/// share read-only across workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub id: String,
    pub width_px: u32,
    pub height_px: u32,
    /// Row-major RGB triples, length `width_px * height_px * 3`.
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(
        id: impl Into<String>,
        width_px: u32,
        height_px: u32,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::Input(format!(
                "raster dimensions must be positive, got {width_px}x{height_px}"
            )));
        }
        let expect = width_px as usize * height_px as usize * 3;
        if pixels.len() != expect {
            return Err(Error::Input(format!(
                "pixel buffer length {} does not match {width_px}x{height_px}x3 = {expect}",
                pixels.len()
            )));
        }
        Ok(RasterImage {
            id: id.into(),
            width_px,
            height_px,
            pixels,
        })
    }

    /// Uniform-fill constructor, used by the synthetic generator.
    pub fn filled(
        id: impl Into<String>,
        width_px: u32,
        height_px: u32,
        rgb: [u8; 3],
    ) -> Result<Self> {
        let n = width_px as usize * height_px as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        RasterImage::new(id, width_px, height_px, pixels)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width_px as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width_px as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width_px, self.height_px, self.pixels.clone())
            .expect("buffer length validated at construction")
    }
}

/// A planned patch position within a raster. Edge windows are clipped, so
/// `width_px`/`height_px` may be smaller than the configured patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchWindow {
    pub row_index: u32,
    pub col_index: u32,
    pub origin_x_px: u32,
    pub origin_y_px: u32,
    pub width_px: u32,
    pub height_px: u32,
}

/// Plans the tile grid for an image of the given dimensions. Window origins
/// are multiples of `stride`; windows are ordered row-major by
/// (row_index, col_index); every pixel is covered by at least one window.
pub fn plan_tiles(
    width_px: u32,
    height_px: u32,
    patch_size: u32,
    stride: u32,
) -> Result<Vec<PatchWindow>> {
    if width_px == 0 || height_px == 0 {
        return Err(Error::Input(format!(
            "image dimensions must be positive, got {width_px}x{height_px}"
        )));
    }
    if patch_size == 0 || stride == 0 {
        return Err(Error::Input(format!(
            "patch size and stride must be positive, got patch {patch_size}, stride {stride}"
        )));
    }
    if stride > patch_size {
        return Err(Error::Config(format!(
            "stride ({stride}) exceeds patch size ({patch_size}); tiles would leave gaps"
        )));
    }
    let origins = |dim: u32| -> Vec<u32> { (0..dim).step_by(stride as usize).collect() };
    let mut windows = Vec::new();
    for (row, &oy) in origins(height_px).iter().enumerate() {
        for (col, &ox) in origins(width_px).iter().enumerate() {
            windows.push(PatchWindow {
                row_index: row as u32,
                col_index: col as u32,
                origin_x_px: ox,
                origin_y_px: oy,
                width_px: patch_size.min(width_px - ox),
                height_px: patch_size.min(height_px - oy),
            });
        }
    }
    Ok(windows)
}

/// Copies the window's pixels into a new raster. The crop id encodes the
/// source id plus the window's grid position.
pub fn crop(image: &RasterImage, window: &PatchWindow) -> Result<RasterImage> {
    let x_end = window.origin_x_px as u64 + window.width_px as u64;
    let y_end = window.origin_y_px as u64 + window.height_px as u64;
    if x_end > image.width_px as u64 || y_end > image.height_px as u64 {
        return Err(Error::Input(format!(
            "window ({}, {}) {}x{} exceeds raster {}x{}",
            window.origin_x_px,
            window.origin_y_px,
            window.width_px,
            window.height_px,
            image.width_px,
            image.height_px
        )));
    }
    if window.width_px == 0 || window.height_px == 0 {
        return Err(Error::Input("window dimensions must be positive".into()));
    }
    let mut pixels = Vec::with_capacity(window.width_px as usize * window.height_px as usize * 3);
    let src_w = image.width_px as usize;
    for v in 0..window.height_px as usize {
        let y = window.origin_y_px as usize + v;
        let start = (y * src_w + window.origin_x_px as usize) * 3;
        pixels.extend_from_slice(&image.pixels[start..start + window.width_px as usize * 3]);
    }
    RasterImage::new(
        format!("{}_r{}_c{}", image.id, window.row_index, window.col_index),
        window.width_px,
        window.height_px,
        pixels,
    )
}

/// Loads a PNG or TIFF raster. Only 8-bit RGB content is accepted; other
/// color layouts are rejected rather than silently converted.
pub fn load_raster(path: &Path) -> Result<RasterImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Tiff) => {}
        Some(other) => {
            return Err(Error::Format(format!(
                "{}: {:?} is not supported (PNG and 8-bit RGB TIFF only)",
                path.display(),
                other
            )))
        }
        None => {
            return Err(Error::Format(format!(
                "{}: unrecognized raster format",
                path.display()
            )))
        }
    }
    let dynamic = reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rgb = match dynamic {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::Format(format!(
                "{}: {:?} pixels are not 8-bit RGB",
                path.display(),
                other.color()
            )))
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "raster".to_string());
    let (w, h) = (rgb.width(), rgb.height());
    RasterImage::new(id, w, h, rgb.into_raw())
}

/// Writes the raster as an 8-bit RGB PNG.
pub fn save_png(image: &RasterImage, path: &Path) -> Result<()> {
    image
        .to_rgb_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}
