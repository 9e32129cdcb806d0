//! 8-bit grayscale frames, binary masks, resampling and PGM/PNG I/O.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("frame must be at least 1x1 with width*height bytes (got {width}x{height}, {len} bytes)")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("unsupported image format for {0} (expected .pgm or .png)")]
    UnsupportedFormat(String),
}

/// Row-major 8-bit single-channel image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImageError::BadDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty frame");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

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

    /// Copies the `w`x`h` region at (`x0`, `y0`). Panics if out of bounds.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayFrame {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayFrame {
            width: w,
            height: h,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> GrayFrame {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        GrayFrame {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear sample with edge clamping, in pixel-center coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xf = x.clamp(0.0, (self.width - 1) as f64);
        let yf = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xf.floor() as usize;
        let y0 = yf.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = xf - x0 as f64;
        let ty = yf - y0 as f64;
        let p = |xx: usize, yy: usize| self.get(xx, yy) as f64;
        let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
        let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Resamples the source rectangle `(x, y, w, h)` (may be fractional and may
    /// extend past the frame; edges clamp) to `out_w`x`out_h`, averaging a
    /// supersampling grid so that downscaling behaves like an area filter.
    pub fn resample_rect(&self, rect: (f64, f64, f64, f64), out_w: usize, out_h: usize) -> Vec<f64> {
        let (rx, ry, rw, rh) = rect;
        let sx = rw / out_w as f64;
        let sy = rh / out_h as f64;
        let nx = sx.ceil().max(1.0) as usize;
        let ny = sy.ceil().max(1.0) as usize;
        let norm = 1.0 / (nx * ny) as f64;
        let mut out = Vec::with_capacity(out_w * out_h);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for j in 0..ny {
                    let v = ry + (oy as f64 + (j as f64 + 0.5) / ny as f64) * sy - 0.5;
                    for i in 0..nx {
                        let u = rx + (ox as f64 + (i as f64 + 0.5) / nx as f64) * sx - 0.5;
                        acc += self.sample_bilinear(u, v);
                    }
                }
                out.push(acc * norm);
            }
        }
        out
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> GrayFrame {
        let vals = self.resample_rect((0.0, 0.0, self.width as f64, self.height as f64), out_w, out_h);
        GrayFrame {
            width: out_w,
            height: out_h,
            data: vals.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|e| ImageError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let luma = img.into_luma8();
        let (w, h) = luma.dimensions();
        GrayFrame::new(w as usize, h as usize, luma.into_raw())
    }

    /// Writes as binary PGM (P5) or PNG, chosen by the file extension.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let format = match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "pgm" => image::ImageFormat::Pnm,
            Some(e) if e == "png" => image::ImageFormat::Png,
            _ => return Err(ImageError::UnsupportedFormat(path.display().to_string())),
        };
        let io_err = |e: String| ImageError::Io {
            path: path.display().to_string(),
            message: e,
        };
        if format == image::ImageFormat::Pnm {
            // The pnm encoder picks P5 for 8-bit luma.
            let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
            bytes.extend_from_slice(&self.data);
            return std::fs::write(path, bytes).map_err(|e| io_err(e.to_string()));
        }
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
            format,
        )
        .map_err(|e| io_err(e.to_string()))
    }
}

/// Binary image; one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(GrayFrame::new(0, 3, vec![]).is_err());
        assert!(GrayFrame::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayFrame::new(2, 2, vec![0; 4]).is_ok());
    }

    #[test]
    fn crop_and_flip() {
        let f = GrayFrame::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(f.crop(1, 0, 2, 2).data(), &[2, 3, 5, 6]);
        assert_eq!(f.flip_horizontal().data(), &[3, 2, 1, 6, 5, 4]);
        assert_eq!(f.flip_horizontal().flip_horizontal(), f);
    }

    #[test]
    fn resize_identity_and_constant() {
        let f = GrayFrame::new(4, 2, vec![10, 20, 30, 40, 50, 60, 70, 80]).unwrap();
        assert_eq!(f.resize(4, 2), f);
        let c = GrayFrame::filled(64, 40, 77);
        assert!(c.resize(7, 5).data().iter().all(|&v| v == 77));
    }

    #[test]
    fn downscale_averages_blocks() {
        // 2x2 blocks of distinct constants -> exact block means.
        let mut f = GrayFrame::filled(4, 4, 0);
        for y in 0..4 {
            for x in 0..4 {
                f.set(x, y, if x < 2 { 100 } else { 200 });
            }
        }
        let r = f.resize(2, 2);
        assert_eq!(r.data(), &[100, 200, 100, 200]);
    }

    #[test]
    fn pgm_and_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let f = GrayFrame::new(3, 2, vec![0, 50, 100, 150, 200, 255]).unwrap();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            f.save(&p).unwrap();
            assert_eq!(GrayFrame::load(&p).unwrap(), f);
        }
        let raw = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert!(raw.starts_with(b"P5\n3 2\n255\n"));
        assert!(f.save(&dir.path().join("a.bmp")).is_err());
    }
}
