use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage as Rgb8};

use super::RefError;

pub const MIN_SIDE: usize = 8;

/// Row-major `H x W x 3` image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Row-major `H x W` weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_dims(height: usize, width: usize, len: usize, channels: usize) -> Result<(), RefError> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(RefError::DimensionMismatch(format!(
            "{height}x{width} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    if len != height * width * channels {
        return Err(RefError::DimensionMismatch(format!(
            "{height}x{width}x{channels} needs {} values, got {len}",
            height * width * channels
        )));
    }
    Ok(())
}

fn check_range(data: &[f64]) -> Result<(), RefError> {
    match data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(RefError::OutOfRange(*v)),
        None => Ok(()),
    }
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, RefError> {
        check_dims(height, width, data.len(), 3)?;
        check_range(&data)?;
        Ok(Self { height, width, data })
    }

    /// Clamps every value into `[0, 1]`; NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self, RefError> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self, RefError> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self, y: usize, x: usize) -> f64 {
        let [r, g, b] = self.pixel(y, x);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    /// Sub-image `[y0, y0 + h) x [x0, x0 + w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self, RefError> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(RefError::DimensionMismatch(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = 3 * (y * self.width + x0);
            data.extend_from_slice(&self.data[start..start + 3 * w]);
        }
        Self::new(h, w, data)
    }

    fn to_rgb8(&self) -> Rgb8 {
        let bytes = self.data.iter().map(|v| quantize(*v)).collect();
        Rgb8::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size")
    }

    /// Binary PPM (P6, maxval 255).
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(
                self.to_rgb8().as_raw(),
                self.width as u32,
                self.height as u32,
                ExtendedColorType::Rgb8,
            )
            .expect("in-memory PPM encoding");
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self, RefError> {
        let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
            .map_err(|e| RefError::Decode(e.to_string()))?
            .to_rgb8();
        let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RefError> {
        std::fs::write(path, self.encode_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self, RefError> {
        Self::decode_ppm(&std::fs::read(path)?)
    }

    /// Rounds every value to the 8-bit level a PPM round trip keeps.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|&v| f64::from(quantize(v)) / 255.0).collect();
        Self { height: self.height, width: self.width, data }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self, RefError> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                data.extend_from_slice(&self.pixel(sy, sx));
            }
        }
        Self::new(height, width, data)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, RefError> {
        check_dims(height, width, data.len(), 1)?;
        check_range(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, RefError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Intersection over union after thresholding both masks at 0.5.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            let (a, b) = (*a >= 0.5, *b >= 0.5);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Tight bounding box `(y0, x0, y1, x1)` (exclusive ends) of pixels at or
    /// above 0.5.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.at(y, x) >= 0.5 {
                    bb = Some(match bb {
                        None => (y, x, y + 1, x + 1),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y + 1), x1.max(x + 1)),
                    });
                }
            }
        }
        bb
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self, RefError> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(self.at(y * self.height / height, x * self.width / width));
            }
        }
        Self::new(height, width, data)
    }

    /// Binary PGM (P5, maxval 255).
    pub fn encode_pgm(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|v| quantize(*v)).collect();
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, bytes).expect("size");
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.as_raw(), self.width as u32, self.height as u32, ExtendedColorType::L8)
            .expect("in-memory PGM encoding");
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self, RefError> {
        let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
            .map_err(|e| RefError::Decode(e.to_string()))?
            .to_luma8();
        let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), RefError> {
        std::fs::write(path, self.encode_pgm())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> RgbImage {
        let data = (0..h * w * 3).map(|i| (i % 256) as f64 / 255.0).collect();
        RgbImage::new(h, w, data).unwrap()
    }

    #[test]
    fn invariants_enforced() {
        assert!(RgbImage::new(4, 8, vec![0.0; 96]).is_err());
        assert!(RgbImage::new(8, 8, vec![0.0; 10]).is_err());
        assert!(matches!(
            RgbImage::new(8, 8, vec![1.5; 192]),
            Err(RefError::OutOfRange(_))
        ));
        assert!(Mask::new(8, 8, vec![-0.1; 64]).is_err());
    }

    #[test]
    fn ppm_round_trip_of_quantized_values() {
        let img = gradient(9, 11);
        let bytes = img.encode_ppm();
        assert!(bytes.starts_with(b"P6"));
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip() {
        let m = Mask::new(8, 9, (0..72).map(|i| f64::from(i % 2)).collect()).unwrap();
        let bytes = m.encode_pgm();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(Mask::decode_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn crop_and_bbox() {
        let img = gradient(10, 12);
        let c = img.crop(2, 3, 8, 9).unwrap();
        assert_eq!(c.pixel(0, 0), img.pixel(2, 3));
        assert!(img.crop(5, 5, 8, 8).is_err());

        let mut d = vec![0.0; 100];
        d[3 * 10 + 4] = 1.0;
        d[6 * 10 + 2] = 1.0;
        let m = Mask::new(10, 10, d).unwrap();
        assert_eq!(m.bounding_box(), Some((3, 2, 7, 5)));
        assert_eq!(Mask::filled(8, 8, 0.0).unwrap().bounding_box(), None);
    }
}
