//! Image helpers shared by the data, attack, and model modules.
//!
//! Images move through the pipeline as `Array3<f32>` in HWC layout with
//! values in [0,1]. Model inputs use CHW; conversion happens at the model
//! boundary.

use crate::error::{Error, Result};
use ndarray::{Array3, ArrayView3};
use std::path::Path;

/// Bilinear resize with half-pixel sample centers.
///
/// Identity when the target shape equals the source shape.
pub fn resize_bilinear(img: &ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = img.dim();
    if h == out_h && w == out_w {
        return img.to_owned();
    }
    let mut out = Array3::<f32>::zeros((out_h, out_w, c));
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let v00 = img[[y0, x0, ch]];
                let v01 = img[[y0, x1, ch]];
                let v10 = img[[y1, x0, ch]];
                let v11 = img[[y1, x1, ch]];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[[oy, ox, ch]] = top + (bot - top) * wy;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatters an output-space gradient back to
/// input space. Resize is linear, so this is the exact transpose.
pub fn resize_bilinear_backward(
    grad_out: &ArrayView3<f32>,
    in_h: usize,
    in_w: usize,
) -> Array3<f32> {
    let (out_h, out_w, c) = grad_out.dim();
    if in_h == out_h && in_w == out_w {
        return grad_out.to_owned();
    }
    let mut grad_in = Array3::<f32>::zeros((in_h, in_w, c));
    let sy = in_h as f32 / out_h as f32;
    let sx = in_w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let g = grad_out[[oy, ox, ch]];
                grad_in[[y0, x0, ch]] += g * (1.0 - wy) * (1.0 - wx);
                grad_in[[y0, x1, ch]] += g * (1.0 - wy) * wx;
                grad_in[[y1, x0, ch]] += g * wy * (1.0 - wx);
                grad_in[[y1, x1, ch]] += g * wy * wx;
            }
        }
    }
    grad_in
}

/// Circular shift by integer pixel offsets (positive = down/right).
pub fn shift_wrap(img: &ArrayView3<f32>, dy: i64, dx: i64) -> Array3<f32> {
    let (h, w, c) = img.dim();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
        for x in 0..w {
            let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
            for ch in 0..c {
                out[[y, x, ch]] = img[[sy, sx, ch]];
            }
        }
    }
    out
}

/// Snap to the 8-bit grid used by PNG so in-memory pixels round-trip through
/// disk bit-exactly.
pub fn quantize_u8(img: &ArrayView3<f32>) -> Array3<f32> {
    img.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Encode an HWC [0,1] image (1 or 3 channels) as PNG bytes.
pub fn encode_png(img: &ArrayView3<f32>) -> Result<Vec<u8>> {
    let (h, w, c) = img.dim();
    if c != 1 && c != 3 {
        return Err(Error::input(format!("PNG encode expects 1 or 3 channels, got {c}")));
    }
    let mut raw = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                raw.push((img[[y, x, ch]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let mut bytes: Vec<u8> = Vec::new();
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut bytes),
        &raw,
        w as u32,
        h as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::stage(format!("PNG encode failed: {e}")))?;
    Ok(bytes)
}

/// Stack HWC images into an (N, C, H, W) model batch.
pub fn hwc_to_chw_batch(images: &[&Array3<f32>]) -> ndarray::Array4<f32> {
    assert!(!images.is_empty(), "empty batch");
    let (h, w, c) = images[0].dim();
    let mut out = ndarray::Array4::<f32>::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        assert_eq!(img.dim(), (h, w, c), "batch images must share one shape");
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[[n, ch, y, x]] = img[[y, x, ch]];
                }
            }
        }
    }
    out
}

/// One CHW plane back to HWC.
pub fn chw_to_hwc(chw: &ndarray::ArrayView3<f32>) -> Array3<f32> {
    let (c, h, w) = chw.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| chw[[ch, y, x]])
}

/// Decode a raster file (PNG/JPEG/BMP) into an HWC [0,1] array.
///
/// Grayscale stays single-channel; anything else is converted to RGB.
pub fn decode_image(bytes: &[u8]) -> Result<Array3<f32>> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::input(format!("image decode failed: {e}")))?;
    let arr = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
                g.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0
            })
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
                rgb.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
            })
        }
    };
    Ok(arr)
}

/// Decode an image file from disk.
pub fn load_image(path: &Path) -> Result<Array3<f32>> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn resize_identity() {
        let img = Array3::from_shape_fn((4, 4, 3), |(y, x, c)| (y * 16 + x * 4 + c) as f32 / 48.0);
        let out = resize_bilinear(&img.view(), 4, 4);
        assert_eq!(img, out);
    }

    #[test]
    fn resize_one_by_one_is_identity() {
        let img = array![[[0.7f32]]];
        let out = resize_bilinear(&img.view(), 1, 1);
        assert_eq!(out[[0, 0, 0]], 0.7);
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = Array3::from_elem((8, 6, 3), 0.25f32);
        let out = resize_bilinear(&img.view(), 3, 5);
        for v in out.iter() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_backward_is_adjoint() {
        // <R x, y> == <x, R^T y> for random x, y.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Array3::from_shape_fn((5, 7, 2), |_| rng.gen_range(-1.0f32..1.0));
        let y = Array3::from_shape_fn((3, 4, 2), |_| rng.gen_range(-1.0f32..1.0));
        let rx = resize_bilinear(&x.view(), 3, 4);
        let rty = resize_bilinear_backward(&y.view(), 5, 7);
        let lhs: f32 = rx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(rty.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn shift_round_trips() {
        let img = Array3::from_shape_fn((4, 4, 1), |(y, x, _)| (y * 4 + x) as f32);
        let shifted = shift_wrap(&img.view(), 1, -2);
        let back = shift_wrap(&shifted.view(), -1, 2);
        assert_eq!(img, back);
    }

    #[test]
    fn png_round_trip_after_quantize() {
        let img = Array3::from_shape_fn((6, 5, 3), |(y, x, c)| {
            ((y * 31 + x * 17 + c * 7) % 256) as f32 / 255.0
        });
        let q = quantize_u8(&img.view());
        let bytes = encode_png(&q.view()).unwrap();
        let decoded = decode_image(&bytes).unwrap();
        assert_eq!(q, decoded);
    }
}
