//! Row-major float rasters and binary PPM output.

use crate::{invalid, Result};
use std::io::Write;

/// Channel-interleaved raster, row-major with x fastest, values nominally in
/// [0, 1] for display purposes but unconstrained for intermediate math.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) * self.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[f64]) {
        let i = self.index(x, y);
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// Binary PPM (P6, maxval 255). Values are clamped to [0, 1] and
    /// quantized with round(255 * v); no gamma is applied.
    pub fn write_ppm<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.channels != 3 {
            return Err(invalid(format!("PPM needs 3 channels, image has {}", self.channels)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("cannot write an empty image"));
        }
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(invalid(format!(
            "image shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if a.data.is_empty() {
        return Err(invalid("cannot compare empty images"));
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// PSNR in dB against a unit signal peak; identical images give +inf.
pub fn psnr_db(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_quantization() {
        let mut img = Image::new(2, 1, 3);
        img.set_pixel(0, 0, &[0.0, 0.5, 1.0]);
        img.set_pixel(1, 0, &[-0.2, 1.7, 0.001]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        // round(255 * 0.5) = 128, out-of-range values clamp
        assert_eq!(&buf[11..], &[0, 128, 255, 0, 255, 0]);
    }

    #[test]
    fn ppm_rejects_non_rgb() {
        let img = Image::new(2, 2, 1);
        assert!(img.write_ppm(&mut Vec::new()).is_err());
    }

    #[test]
    fn psnr_of_known_error() {
        let a = Image::new(4, 4, 3);
        let mut b = Image::new(4, 4, 3);
        b.data.fill(0.1);
        let m = mse(&a, &b).unwrap();
        assert!((m - 0.01).abs() < 1e-15);
        assert!((psnr_db(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr_db(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        assert!(mse(&Image::new(2, 2, 3), &Image::new(2, 3, 3)).is_err());
        assert!(mse(&Image::new(0, 0, 3), &Image::new(0, 0, 3)).is_err());
    }

    #[test]
    fn horizontal_flip_involutes() {
        let mut img = Image::new(3, 2, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let flipped = img.flip_horizontal();
        assert_eq!(flipped.pixel(0, 0), img.pixel(2, 0));
        assert_eq!(flipped.flip_horizontal(), img);
    }
}
