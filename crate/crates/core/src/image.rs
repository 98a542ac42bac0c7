//! Float raster images with PNG and PFM input/output.
//!
//! Pixel `(x, y)` has row `y` counted from the top. PNG values are treated as
//! linear intensities (no sRGB transfer curve).

use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has no pixels".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, color: &[f64]) -> Self {
        let data = (0..width * height).flat_map(|_| color.iter().copied()).collect();
        Self::new(width, height, color.len(), data).expect("valid fill color")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize) -> Vec<f64>,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                assert_eq!(px.len(), channels);
                data.extend(px);
            }
        }
        Self::new(width, height, channels, data).expect("finite pixel values")
    }

    /// Single-channel image from a scalar field stored row-major.
    pub fn scalar(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Pixel by linear index `y * width + x`.
    #[inline]
    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Replicate a gray image into three channels, or pass through.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self { channels: 3, data, ..*self }
    }

    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch("images differ in shape".into()));
        }
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).expect("sized buffer").save(path)?,
            _ => image::RgbImage::from_raw(w, h, bytes).expect("sized buffer").save(path)?,
        }
        Ok(())
    }

    /// Grayscale PNGs load as one channel, everything else as RGB; alpha is
    /// dropped.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        use image::ColorType::*;
        let gray = matches!(img.color(), L8 | La8 | L16 | La16);
        if gray {
            let data = img.to_luma8().into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
            Self::new(w, h, 1, data)
        } else {
            let data = img.to_rgb8().into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
            Self::new(w, h, 3, data)
        }
    }

    /// Portable float map, little-endian, rows stored bottom to top.
    pub fn write_pfm<W: Write>(&self, mut w: W) -> Result<()> {
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        write!(w, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(4 * self.data.len());
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for &v in self.pixel(x, y) {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_pfm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = Vec::new();
        // three whitespace-terminated tokens after the tag line
        let mut line = String::new();
        while header.len() < 4 {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PFM header".into()));
            }
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        let channels = match header[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            t => return Err(Error::Format(format!("unknown PFM tag {t}"))),
        };
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad PFM field {s}")));
        let width = parse(&header[1])? as usize;
        let height = parse(&header[2])? as usize;
        let little = parse(&header[3])? < 0.0;
        let mut raw = vec![0u8; 4 * width * height * channels];
        r.read_exact(&mut raw)?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| {
                let b: [u8; 4] = c.try_into().expect("chunk of 4");
                if little {
                    f32::from_le_bytes(b) as f64
                } else {
                    f32::from_be_bytes(b) as f64
                }
            })
            .collect();
        let row = width * channels;
        let mut data = Vec::with_capacity(vals.len());
        for y in (0..height).rev() {
            data.extend_from_slice(&vals[y * row..(y + 1) * row]);
        }
        Self::new(width, height, channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize) -> ImageBuffer {
        ImageBuffer::from_fn(7, 5, channels, |x, y| {
            (0..channels).map(|c| (x as f64 + 7.0 * y as f64 + c as f64 * 0.25) / 40.0).collect()
        })
    }

    #[test]
    fn rejects_inconsistent_buffers() {
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 5]).is_err());
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn pfm_roundtrip_is_exact_for_f32_values() {
        for c in [1, 3] {
            let img = ramp(c);
            let mut buf = Vec::new();
            img.write_pfm(&mut buf).unwrap();
            let back = ImageBuffer::read_pfm(&buf[..]).unwrap();
            assert!(back.same_shape(&img));
            for (a, b) in img.data().iter().zip(back.data()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn png_roundtrip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let img = ramp(c);
            let path = dir.path().join(format!("r{c}.png"));
            img.write_png(&path).unwrap();
            let back = ImageBuffer::read_png(&path).unwrap();
            assert_eq!(back.channels(), c);
            assert!(img.mean_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
            assert_eq!(back.pixel(3, 0), img.pixel(3, 0).iter().map(|v| (v * 255.0).round() / 255.0).collect::<Vec<_>>().as_slice());
        }
    }

    #[test]
    fn rows_count_from_the_top() {
        let img = ramp(1);
        assert_eq!(img.pixel(0, 1)[0], 7.0 / 40.0);
        assert_eq!(img.at(8), img.pixel(1, 1));
    }
}
