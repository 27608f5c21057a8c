//! Image I/O and resampling. PNG (8-bit) read/write, JPEG read, four resize
//! kernels shared by the degradation pipeline and the CLI.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use ndarray::{s, Array4};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{ImageTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    Bilinear,
    Bicubic,
    Area,
}

impl std::str::FromStr for ResizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            "bicubic" => Ok(ResizeMode::Bicubic),
            "area" => Ok(ResizeMode::Area),
            other => Err(arg_err!("unknown resize mode {other:?}")),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .decode()
        .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?;
    Ok(dynamic_to_tensor(&decoded))
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<ImageTensor> {
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Format(format!("cannot decode image bytes: {e}")))?;
    Ok(dynamic_to_tensor(&decoded))
}

fn dynamic_to_tensor(img: &DynamicImage) -> ImageTensor {
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let mut data = Array4::zeros((1, 1, h as usize, w as usize));
            for (x, y, p) in g.enumerate_pixels() {
                data[[0, 0, y as usize, x as usize]] = p.0[0] as f32 / 255.0;
            }
            ImageTensor::wrap(data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let mut data = Array4::zeros((1, 3, h as usize, w as usize));
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    data[[0, c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
                }
            }
            ImageTensor::wrap(data)
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn tensor_to_rgb8(img: &ImageTensor, batch: usize) -> image::RgbImage {
    let (_, c, h, w) = img.data.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| quantize(img.data[[batch, ch, y as usize, x as usize]]);
        if c == 1 {
            let v = px(0);
            image::Rgb([v, v, v])
        } else {
            image::Rgb([px(0), px(1), px(2)])
        }
    })
}

/// Write the first batch item as an 8-bit PNG (RGB, or grayscale for
/// single-channel tensors).
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (_, c, h, w) = img.data.dim();
    let res = if c == 1 {
        let gray = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([quantize(img.data[[0, 0, y as usize, x as usize]])])
        });
        gray.save_with_format(path, ImageFormat::Png)
    } else {
        tensor_to_rgb8(img, 0).save_with_format(path, ImageFormat::Png)
    };
    res.map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

/// Encode at the given JPEG quality and decode back; the lossy stage of the
/// degradation pipeline.
pub fn jpeg_roundtrip(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let (b, c, h, w) = img.data.dim();
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        let mut buf = Cursor::new(Vec::new());
        let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality);
        if c == 1 {
            let gray = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([quantize(img.data[[bi, 0, y as usize, x as usize]])])
            });
            gray.write_with_encoder(enc)
                .map_err(|e| Error::Format(format!("jpeg encode failed: {e}")))?;
        } else {
            tensor_to_rgb8(img, bi)
                .write_with_encoder(enc)
                .map_err(|e| Error::Format(format!("jpeg encode failed: {e}")))?;
        }
        let decoded = decode_image(buf.get_ref(), ImageFormat::Jpeg)?;
        let view = if decoded.channels() == c {
            decoded.data.slice(s![0, .., .., ..]).to_owned()
        } else if c == 3 && decoded.channels() == 1 {
            let g = decoded.data.slice(s![0, 0, .., ..]);
            let mut rgb = ndarray::Array3::zeros((3, h, w));
            for ch in 0..3 {
                rgb.slice_mut(s![ch, .., ..]).assign(&g);
            }
            rgb
        } else {
            return Err(shape_err!("jpeg roundtrip changed channel count"));
        };
        out.slice_mut(s![bi, .., .., ..]).assign(&view);
    }
    Ok(ImageTensor::wrap(out))
}

/// One output position expressed as taps into the source axis.
struct AxisTap {
    start: usize,
    weights: Vec<f32>,
}

fn cubic_kernel(x: f64) -> f64 {
    // convolution kernel with a = -0.5
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

fn axis_plan(n_in: usize, n_out: usize, mode: ResizeMode) -> Vec<AxisTap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| match mode {
            ResizeMode::Nearest => {
                let idx = ((o as f64 * scale).floor() as usize).min(n_in - 1);
                AxisTap {
                    start: idx,
                    weights: vec![1.0],
                }
            }
            ResizeMode::Bilinear => {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let i0 = src.floor();
                let frac = src - i0;
                let mut taps = vec![(i0 as i64, 1.0 - frac), (i0 as i64 + 1, frac)];
                clamp_taps(&mut taps, n_in);
                build_tap(taps)
            }
            ResizeMode::Bicubic => {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let i0 = src.floor() as i64;
                let mut taps: Vec<(i64, f64)> = (-1..=2)
                    .map(|d| {
                        let idx = i0 + d;
                        (idx, cubic_kernel(src - idx as f64))
                    })
                    .collect();
                clamp_taps(&mut taps, n_in);
                build_tap(taps)
            }
            ResizeMode::Area => {
                let lo = o as f64 * scale;
                let hi = (o as f64 + 1.0) * scale;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(n_in).max(first + 1);
                let mut taps = Vec::new();
                for idx in first..last {
                    let cover = (hi.min(idx as f64 + 1.0) - lo.max(idx as f64)).max(0.0);
                    if cover > 0.0 {
                        taps.push((idx.min(n_in - 1) as i64, cover));
                    }
                }
                if taps.is_empty() {
                    taps.push(((first.min(n_in - 1)) as i64, 1.0));
                }
                build_tap(taps)
            }
        })
        .collect()
}

fn clamp_taps(taps: &mut [(i64, f64)], n_in: usize) {
    for t in taps.iter_mut() {
        t.0 = t.0.clamp(0, n_in as i64 - 1);
    }
}

fn build_tap(taps: Vec<(i64, f64)>) -> AxisTap {
    let start = taps.iter().map(|t| t.0).min().unwrap() as usize;
    let end = taps.iter().map(|t| t.0).max().unwrap() as usize;
    let mut weights = vec![0.0f64; end - start + 1];
    for (idx, w) in &taps {
        weights[*idx as usize - start] += w;
    }
    let total: f64 = weights.iter().sum();
    AxisTap {
        start,
        weights: weights.iter().map(|w| (w / total) as f32).collect(),
    }
}

/// Resize by a positive scale factor; output dims are round(dim * scale).
pub fn resize(img: &ImageTensor, scale: f64, mode: ResizeMode) -> Result<ImageTensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(arg_err!("resize scale must be positive, got {scale}"));
    }
    let (_, _, h, w) = img.data.dim();
    let oh = (h as f64 * scale).round() as usize;
    let ow = (w as f64 * scale).round() as usize;
    if oh < 1 || ow < 1 {
        return Err(arg_err!(
            "resize scale {scale} collapses {h}x{w} below one pixel"
        ));
    }
    resize_to(img, oh, ow, mode)
}

/// Resize to explicit output dims.
pub fn resize_to(img: &ImageTensor, oh: usize, ow: usize, mode: ResizeMode) -> Result<ImageTensor> {
    if oh == 0 || ow == 0 {
        return Err(arg_err!("resize target must be at least 1x1"));
    }
    let (b, c, h, w) = img.data.dim();
    if (oh, ow) == (h, w) && mode == ResizeMode::Nearest {
        return Ok(img.clone());
    }
    let rows = axis_plan(h, oh, mode);
    let cols = axis_plan(w, ow, mode);

    let mut out = Array4::zeros((b, c, oh, ow));
    for bi in 0..b {
        for ci in 0..c {
            let plane = img.data.slice(s![bi, ci, .., ..]);
            // vertical pass
            let mut tmp = ndarray::Array2::<f32>::zeros((oh, w));
            for (oy, tap) in rows.iter().enumerate() {
                for (k, &wgt) in tap.weights.iter().enumerate() {
                    if wgt == 0.0 {
                        continue;
                    }
                    let src = plane.row(tap.start + k);
                    let mut dst = tmp.row_mut(oy);
                    dst.scaled_add(wgt, &src);
                }
            }
            // horizontal pass
            let mut dst = out.slice_mut(s![bi, ci, .., ..]);
            for (ox, tap) in cols.iter().enumerate() {
                for (k, &wgt) in tap.weights.iter().enumerate() {
                    if wgt == 0.0 {
                        continue;
                    }
                    let src = tmp.column(tap.start + k);
                    let mut col = dst.column_mut(ox);
                    col.scaled_add(wgt, &src);
                }
            }
        }
    }
    Ok(ImageTensor::wrap(out))
}

/// Random square crop; offsets drawn uniformly, inclusive of both extremes.
/// The same window is applied to every batch item.
pub fn extract_patch(img: &ImageTensor, size: usize, rng: &mut Rng) -> Result<ImageTensor> {
    let (_, _, h, w) = img.data.dim();
    if size == 0 || size > h || size > w {
        return Err(arg_err!("patch size {size} does not fit into {h}x{w}"));
    }
    let oy = rng.int_range(0, (h - size) as i64) as usize;
    let ox = rng.int_range(0, (w - size) as i64) as usize;
    let patch = img
        .data
        .slice(s![.., .., oy..oy + size, ox..ox + size])
        .to_owned();
    Ok(ImageTensor::wrap(patch))
}

/// Horizontal flip (width axis).
pub fn hflip(img: &ImageTensor) -> ImageTensor {
    ImageTensor::wrap(img.data.slice(s![.., .., .., ..;-1]).to_owned())
}

pub fn to_tensor(data: Tensor<f32>) -> Result<ImageTensor> {
    ImageTensor::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn load_all_white_png() {
        let dir = tmpdir();
        let path = dir.path().join("white.png");
        let img = ImageTensor::constant(1, 3, 2, 2, 1.0).unwrap();
        save_image(&img, &path).unwrap();
        let loaded = load_image(&path).unwrap();
        assert_eq!(loaded.data.dim(), (1, 3, 2, 2));
        assert!(loaded.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn load_all_black_png() {
        let dir = tmpdir();
        let path = dir.path().join("black.png");
        let img = ImageTensor::constant(1, 3, 2, 2, 0.0).unwrap();
        save_image(&img, &path).unwrap();
        let loaded = load_image(&path).unwrap();
        assert!(loaded.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_file_is_io_error() {
        match load_image("/nonexistent/nope.png") {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_png_is_format_error() {
        let dir = tmpdir();
        let path = dir.path().join("trunc.png");
        let img = ImageTensor::constant(1, 3, 8, 8, 0.5).unwrap();
        save_image(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_image(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_within_one_level() {
        let dir = tmpdir();
        let path = dir.path().join("rt.png");
        let mut rng = crate::rng::Rng::new(5);
        let data = Array4::from_shape_fn((1, 3, 9, 7), |_| rng.uniform() as f32);
        let img = ImageTensor::new(data).unwrap();
        save_image(&img, &path).unwrap();
        let loaded = load_image(&path).unwrap();
        let max_err = img
            .data
            .iter()
            .zip(loaded.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 255.0 + 1e-6, "max err {max_err}");
    }

    #[test]
    fn resize_constant_bilinear_half() {
        let img = ImageTensor::constant(1, 3, 8, 8, 0.5).unwrap();
        let out = resize(&img, 0.5, ResizeMode::Bilinear).unwrap();
        assert_eq!(out.data.dim(), (1, 3, 4, 4));
        for &v in out.data.iter() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_shape_contract() {
        let img = ImageTensor::constant(1, 3, 64, 64, 0.25).unwrap();
        let out = resize(&img, 0.5, ResizeMode::Bicubic).unwrap();
        assert_eq!(out.data.dim(), (1, 3, 32, 32));
    }

    #[test]
    fn area_checkerboard_average() {
        let mut data = Array4::zeros((1, 1, 2, 2));
        data[[0, 0, 0, 0]] = 1.0;
        data[[0, 0, 1, 1]] = 1.0;
        let img = ImageTensor::new(data).unwrap();
        let out = resize(&img, 0.5, ResizeMode::Area).unwrap();
        assert_eq!(out.data.dim(), (1, 1, 1, 1));
        assert!((out.data[[0, 0, 0, 0]] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nearest_scale_one_is_identity() {
        let mut rng = crate::rng::Rng::new(9);
        let data = Array4::from_shape_fn((1, 3, 5, 6), |_| rng.uniform() as f32);
        let img = ImageTensor::new(data).unwrap();
        let out = resize(&img, 1.0, ResizeMode::Nearest).unwrap();
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn resize_degenerate_errors() {
        let img = ImageTensor::constant(1, 3, 4, 4, 0.5).unwrap();
        assert!(resize(&img, 0.01, ResizeMode::Bilinear).is_err());
        assert!(resize(&img, 0.0, ResizeMode::Bilinear).is_err());
    }

    #[test]
    fn constants_survive_every_mode() {
        let img = ImageTensor::constant(2, 3, 12, 10, 0.37).unwrap();
        for mode in [
            ResizeMode::Nearest,
            ResizeMode::Bilinear,
            ResizeMode::Bicubic,
            ResizeMode::Area,
        ] {
            for scale in [0.5, 0.75, 1.3, 2.0] {
                let out = resize(&img, scale, mode).unwrap();
                for &v in out.data.iter() {
                    assert!((v - 0.37).abs() < 1e-5, "{mode:?} x{scale}: {v}");
                }
            }
        }
    }

    #[test]
    fn patch_full_size_is_identity() {
        let mut rng = crate::rng::Rng::new(2);
        let data = Array4::from_shape_fn((1, 3, 16, 16), |_| rng.uniform() as f32);
        let img = ImageTensor::new(data).unwrap();
        let patch = extract_patch(&img, 16, &mut rng).unwrap();
        assert_eq!(patch.data, img.data);
    }

    #[test]
    fn patch_same_seed_same_offset() {
        let mut rng_img = crate::rng::Rng::new(4);
        let data = Array4::from_shape_fn((1, 3, 32, 32), |_| rng_img.uniform() as f32);
        let img = ImageTensor::new(data).unwrap();
        let a = extract_patch(&img, 8, &mut crate::rng::Rng::new(77)).unwrap();
        let b = extract_patch(&img, 8, &mut crate::rng::Rng::new(77)).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn patch_too_large_errors() {
        let img = ImageTensor::constant(1, 3, 256, 256, 0.1).unwrap();
        assert!(extract_patch(&img, 300, &mut crate::rng::Rng::new(0)).is_err());
    }

    #[test]
    fn jpeg_quality_100_nearly_lossless_on_smooth_image() {
        let data = Array4::from_shape_fn((1, 3, 32, 32), |(_, c, y, x)| {
            0.2 + 0.2 * c as f32 + 0.005 * (x + y) as f32
        });
        let img = ImageTensor::new(data).unwrap();
        let rt = jpeg_roundtrip(&img, 100).unwrap();
        let max_err = img
            .data
            .iter()
            .zip(rt.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 2.0 / 255.0, "max err {max_err}");
    }
}
