//! Grayscale raster primitives: pixel buffers, integral images, rectangle
//! sums, Gaussian smoothing and block-mean downsampling.
//!
//! Everything here is pure over immutable inputs.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("buffer holds {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("rectangle {rect:?} exceeds {width}x{height} image")]
    OutOfBounds { rect: Rect, width: usize, height: usize },
    #[error("{path}: only 8-bit grayscale frames are supported (found {found})")]
    NotGrayscale { path: String, found: String },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
}

/// Row-major 8-bit grayscale image.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    /// Creates an image filled with `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(RasterError::BufferSize { expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel value, or `None` outside the image.
    #[inline]
    pub fn get_checked(&self, x: i32, y: i32) -> Option<u8> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    /// Copies out the pixels covered by `rect`, which is clamped to the image first.
    pub fn crop(&self, rect: Rect) -> GrayImage {
        let r = rect.clamped(self.width, self.height);
        let (w, h) = (r.w.max(1), r.h.max(1));
        let mut out = GrayImage::new(w, h);
        for y in 0..r.h {
            let src = (r.y + y) * self.width + r.x;
            out.data[y * w..y * w + r.w].copy_from_slice(&self.data[src..src + r.w]);
        }
        out
    }

    /// Loads an 8-bit grayscale PNG or binary PGM. Colour inputs are rejected.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let path = path.as_ref();
        let dynimg = image::ImageReader::open(path)
            .map_err(image::ImageError::IoError)?
            .with_guessed_format()
            .map_err(image::ImageError::IoError)?
            .decode()?;
        match dynimg {
            image::DynamicImage::ImageLuma8(buf) => {
                let (w, h) = buf.dimensions();
                Self::from_raw(w as usize, h as usize, buf.into_raw())
            }
            other => Err(RasterError::NotGrayscale {
                path: path.display().to_string(),
                found: format!("{:?}", other.color()),
            }),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Encodes as PNG into memory.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, RasterError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// Intersection with the `width`×`height` image.
    pub fn clamped(&self, width: usize, height: usize) -> Rect {
        let x = self.x.min(width);
        let y = self.y.min(height);
        Rect { x, y, w: self.right().min(width) - x, h: self.bottom().min(height) - y }
    }

    /// Rectangle of (rounded) size `w`×`h` centred on (`cx`, `cy`), clamped to the frame.
    pub fn centred(cx: f64, cy: f64, w: f64, h: f64, frame_w: usize, frame_h: usize) -> Rect {
        let x0 = (cx - w / 2.0).round();
        let y0 = (cy - h / 2.0).round();
        let x1 = (cx + w / 2.0).round() + 1.0;
        let y1 = (cy + h / 2.0).round() + 1.0;
        let cl = |v: f64, max: usize| v.clamp(0.0, max as f64) as usize;
        let (x0, x1) = (cl(x0, frame_w), cl(x1, frame_w));
        let (y0, y1) = (cl(y0, frame_h), cl(y1, frame_h));
        Rect { x: x0, y: y0, w: x1.saturating_sub(x0), h: y1.saturating_sub(y0) }
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            Rect::new(x0, y0, 0, 0)
        } else {
            Rect::new(x0, y0, x1 - x0, y1 - y0)
        }
    }
}

/// 2-D prefix sums with a zero first row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<u64>,
}

impl IntegralImage {
    pub fn build(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            let src = &img.data()[y * w..(y + 1) * w];
            for x in 0..w {
                row += src[x] as u64;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width: w, height: h, sums }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Prefix sum of the pixels in `[0, x) × [0, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.sums[y * (self.width + 1) + x]
    }

    /// Sum over `r` after clamping it to the image.
    #[inline]
    pub fn rect_sum(&self, r: Rect) -> u64 {
        let r = r.clamped(self.width, self.height);
        if r.w == 0 || r.h == 0 {
            return 0;
        }
        let (x1, y1) = (r.right(), r.bottom());
        self.at(x1, y1) + self.at(r.x, r.y) - self.at(r.x, y1) - self.at(x1, r.y)
    }

    /// Sum over `r`, rejecting rectangles that leave the image.
    pub fn rect_sum_strict(&self, r: Rect) -> Result<u64, RasterError> {
        if !r.fits_in(self.width, self.height) {
            return Err(RasterError::OutOfBounds { rect: r, width: self.width, height: self.height });
        }
        Ok(self.rect_sum(r))
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i32;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian smoothing with clamp-to-edge borders, returned as floats.
pub fn gaussian_blur_f32(img: &GrayImage, sigma: f64) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    if sigma <= 0.0 || w == 0 || h == 0 {
        return img.data().iter().map(|&v| v as f32).collect();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0f32; w * h];
    let ru = r as usize;
    let mut padded = vec![0f32; w + 2 * ru];
    for y in 0..h {
        let row = &img.data()[y * w..(y + 1) * w];
        padded[..ru].fill(row[0] as f32);
        for (d, &v) in padded[ru..ru + w].iter_mut().zip(row) {
            *d = v as f32;
        }
        padded[ru + w..].fill(row[w - 1] as f32);
        let dst = &mut tmp[y * w..(y + 1) * w];
        for (i, kv) in k.iter().enumerate() {
            for (d, s) in dst.iter_mut().zip(&padded[i..i + w]) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[sy * w..(sy + 1) * w];
            for (d, s) in out[y * w..(y + 1) * w].iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Separable Gaussian smoothing; `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let blurred = gaussian_blur_f32(img, sigma);
    let data = blurred.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::from_raw(img.width(), img.height(), data).expect("same dimensions")
}

/// Block-mean reduction by an integer factor. Output is `floor(w/f) × floor(h/f)`
/// (at least 1×1).
pub fn downsample(img: &GrayImage, factor: usize) -> GrayImage {
    assert!(factor >= 1, "downsample factor must be >= 1");
    if factor == 1 {
        return img.clone();
    }
    let ow = (img.width() / factor).max(1);
    let oh = (img.height() / factor).max(1);
    let n = (factor * factor) as u32;
    let (w, h) = (img.width(), img.height());
    let mut sums = vec![0u32; ow];
    let mut data = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        sums.fill(0);
        for y in oy * factor..((oy + 1) * factor).min(h) {
            let row = &img.data()[y * w..(y + 1) * w];
            if w < factor {
                sums[0] += row.iter().map(|&v| v as u32).sum::<u32>();
            } else if factor == 2 {
                for (s, pair) in sums.iter_mut().zip(row.chunks_exact(2)) {
                    *s += pair[0] as u32 + pair[1] as u32;
                }
            } else {
                for (s, block) in sums.iter_mut().zip(row.chunks_exact(factor)) {
                    *s += block.iter().map(|&v| v as u32).sum::<u32>();
                }
            }
        }
        if n.is_power_of_two() {
            let shift = n.trailing_zeros();
            data.extend(sums.iter().map(|&s| ((s + n / 2) >> shift) as u8));
        } else {
            data.extend(sums.iter().map(|&s| ((s + n / 2) / n) as u8));
        }
    }
    GrayImage::from_raw(ow, oh, data).expect("same dimensions")
}
