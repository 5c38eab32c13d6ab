//! RGB rasters, PNG encoding and image grids.

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, ImageBuffer, ImageFormat, Rgb, Rgb32FImage, RgbImage};
use ndarray::{Array3, ArrayView3};

use crate::{Error, Result, Scalar};

/// Channel-first RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pixels: Array3<f32>,
}

impl Raster {
    /// Wraps a `(3, H, W)` array of `[0, 1]` values.
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::input(format!("raster must be (3, H, W), got {:?}", pixels.dim())));
        }
        Ok(Raster { pixels })
    }

    /// Converts a generator output in `[-1, 1]`.
    pub fn from_signed<T: Scalar>(x: ArrayView3<T>) -> Result<Self> {
        Self::new(x.mapv(|v| ((v.as_f64() as f32 + 1.0) * 0.5).clamp(0.0, 1.0)))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Input(msg) => Error::input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Decodes any supported encoded image; grayscale is replicated to RGB.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::input(format!("undecodable image: {e}")))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        });
        Raster { pixels }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn pixels(&self) -> ArrayView3<'_, f32> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    /// Values mapped to `[-1, 1]`.
    pub fn to_signed<T: Scalar>(&self) -> Array3<T> {
        self.pixels.mapv(|v| T::of(v as f64 * 2.0 - 1.0))
    }

    /// Bilinear (triangle filter) resize; a no-op when the size already matches.
    pub fn resized(&self, height: usize, width: usize) -> Raster {
        if self.height() == height && self.width() == width {
            return self.clone();
        }
        let (h, w) = (self.height(), self.width());
        let buf: Rgb32FImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([self.pixels[[0, y, x]], self.pixels[[1, y, x]], self.pixels[[2, y, x]]])
        });
        let out = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        let pixels = Array3::from_shape_fn((3, height, width), |(c, y, x)| {
            out.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
        });
        Raster { pixels }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| (self.pixels[[c, y as usize, x as usize]] * 255.0).round().clamp(0.0, 255.0) as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::format("png", e))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Tiles equally sized rasters row-major into a `rows × cols` grid.
pub fn grid(images: &[Raster], cols: usize) -> Result<Raster> {
    let first = images.first().ok_or_else(|| Error::input("empty image grid"))?;
    let (h, w) = (first.height(), first.width());
    if images.iter().any(|r| r.height() != h || r.width() != w) {
        return Err(Error::input("grid images differ in size"));
    }
    let cols = cols.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let mut pixels = Array3::zeros((3, rows * h, cols * w));
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        pixels
            .slice_mut(ndarray::s![.., r * h..(r + 1) * h, c * w..(c + 1) * w])
            .assign(&img.pixels);
    }
    Raster::new(pixels)
}
