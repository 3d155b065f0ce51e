//! Fixed linear map between 4-channel latents and RGB.
//!
//! Decoding takes `rgb = 0.5 + GAIN * B z` per pixel and repeats each latent
//! pixel over an `s x s` block. `B` has orthonormal rows, so encoding (block
//! average, then `z = B^T (rgb - 0.5) / GAIN`) inverts decoding exactly on
//! block-constant, unclamped images.

use crate::numeric::Tensor;
use crate::refs::{RefError, RgbImage};

pub const LATENT_CHANNELS: usize = 4;

const GAIN: f64 = 0.2;

const BASIS: [[f64; LATENT_CHANNELS]; 3] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, -0.5, -0.5],
];

fn dims(shape: &[usize]) -> Result<(usize, usize), RefError> {
    match shape {
        [LATENT_CHANNELS, h, w] => Ok((*h, *w)),
        s => Err(RefError::DimensionMismatch(format!("expected a [4, H, W] latent, got {s:?}"))),
    }
}

/// Decodes a `[4, H, W]` latent to an `(H s) x (W s)` image with 8-bit
/// levels, so writing and re-reading the frame is lossless.
pub fn decode_frame(latent: &Tensor, upsample: usize) -> Result<RgbImage, RefError> {
    let (h, w) = dims(latent.shape())?;
    let s = upsample.max(1);
    let z = latent.data();
    let plane = h * w;
    let mut data = Vec::with_capacity(h * w * s * s * 3);
    for y in 0..h * s {
        for x in 0..w * s {
            let p = (y / s) * w + x / s;
            for row in &BASIS {
                let v: f64 = row.iter().enumerate().map(|(k, b)| b * z[k * plane + p]).sum();
                data.push(0.5 + GAIN * v);
            }
        }
    }
    Ok(RgbImage::from_clamped(h * s, w * s, data)?.quantized())
}

/// Decodes every frame of a `[4, F, H, W]` clip.
pub fn decode_clip(clip: &Tensor, upsample: usize) -> Result<Vec<RgbImage>, RefError> {
    let &[c, frames, h, w] = clip.shape() else {
        return Err(RefError::DimensionMismatch(format!("expected a [4, F, H, W] clip, got {:?}", clip.shape())));
    };
    (0..frames)
        .map(|f| {
            let frame = crate::camera::clip_frame(clip, f).map_err(|e| RefError::DimensionMismatch(e.to_string()))?;
            debug_assert_eq!(frame.shape(), &[c, h, w]);
            decode_frame(&frame, upsample)
        })
        .collect()
}

/// Averages `factor x factor` blocks and applies the pseudo-inverse of the
/// colour map, giving a `[4, H / factor, W / factor]` latent.
pub fn encode_image(image: &RgbImage, factor: usize) -> Result<Tensor, RefError> {
    let f = factor.max(1);
    let (ih, iw) = (image.height(), image.width());
    if ih % f != 0 || iw % f != 0 {
        return Err(RefError::DimensionMismatch(format!("{ih}x{iw} is not divisible by {f}")));
    }
    let (h, w) = (ih / f, iw / f);
    let mut z = vec![0.0; LATENT_CHANNELS * h * w];
    let area = (f * f) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0.0; 3];
            for yy in y * f..(y + 1) * f {
                for xx in x * f..(x + 1) * f {
                    let px = image.pixel(yy, xx);
                    for c in 0..3 {
                        rgb[c] += px[c];
                    }
                }
            }
            for (k, out) in (0..LATENT_CHANNELS).map(|k| (k, k * h * w + y * w + x)) {
                z[out] = (0..3).map(|c| BASIS[c][k] * (rgb[c] / area - 0.5)).sum::<f64>() / GAIN;
            }
        }
    }
    Tensor::new(vec![LATENT_CHANNELS, h, w], z).map_err(|e| RefError::DimensionMismatch(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn basis_rows_are_orthonormal() {
        for (i, a) in BASIS.iter().enumerate() {
            for (j, b) in BASIS.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert_eq!(d, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn encode_inverts_decode_on_its_range() {
        let mut rng = Rng::new(1);
        let img = RgbImage::new(8, 8, (0..192).map(|_| 0.3 + 0.4 * rng.uniform()).collect()).unwrap();
        let z = encode_image(&img, 1).unwrap();
        let back = decode_frame(&z, 1).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn upsampling_repeats_blocks_and_encoding_averages_them() {
        let mut rng = Rng::new(2);
        let z = Tensor::randn(&[4, 8, 8], 0.3, &mut rng);
        let big = decode_frame(&z, 4).unwrap();
        assert_eq!((big.height(), big.width()), (32, 32));
        assert_eq!(big.pixel(5, 6), big.pixel(4, 7));
        let small = decode_frame(&z, 1).unwrap();
        assert!(encode_image(&big, 4).unwrap().max_abs_diff(&encode_image(&small, 1).unwrap()) < 1e-12);
    }

    #[test]
    fn decoded_frames_survive_ppm() {
        let z = Tensor::randn(&[4, 8, 8], 1.0, &mut Rng::new(3));
        let img = decode_frame(&z, 2).unwrap();
        assert_eq!(RgbImage::decode_ppm(&img.encode_ppm()).unwrap(), img);
    }

    #[test]
    fn shape_errors() {
        assert!(decode_frame(&Tensor::zeros(&[3, 8, 8]), 1).is_err());
        assert!(decode_clip(&Tensor::zeros(&[4, 8, 8]), 1).is_err());
        assert!(encode_image(&RgbImage::filled(10, 10, [0.5; 3]).unwrap(), 4).is_err());
        assert_eq!(decode_clip(&Tensor::zeros(&[4, 3, 8, 8]), 1).unwrap().len(), 3);
    }
}
