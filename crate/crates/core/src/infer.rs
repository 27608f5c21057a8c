//! Whole-image and tiled 4x upscaling. Tiling bounds memory on large inputs;
//! overlapping tile outputs are averaged, which keeps seams invisible while
//! staying close to the single-shot result.

use ndarray::{s, Array4};

use crate::error::{arg_err, Result};
use crate::generator::Generator;
use crate::tensor::{ImageTensor, Tensor};

pub const DEFAULT_TILE: usize = 256;
pub const DEFAULT_OVERLAP: usize = 16;

fn to_rgb(x: &Tensor<f32>) -> Tensor<f32> {
    if x.dim().1 == 3 {
        return x.clone();
    }
    let (b, _, h, w) = x.dim();
    let mut out = Array4::zeros((b, 3, h, w));
    for c in 0..3 {
        out.slice_mut(s![.., c, .., ..]).assign(&x.slice(s![.., 0, .., ..]));
    }
    out
}

/// Single-shot 4x upscale; output clamped to [0, 1].
pub fn upscale(gen: &Generator<f32>, img: &ImageTensor) -> Result<ImageTensor> {
    let input = to_rgb(&img.data);
    let (_, _, h, w) = input.dim();
    if h < 8 || w < 8 {
        return Err(arg_err!("input {h}x{w} too small to upscale (needs 8x8)"));
    }
    let mut out = ImageTensor::wrap(gen.infer(&input).mapv(|v| v.clamp(0.0, 1.0)));
    out.clamp01();
    Ok(out)
}

fn tile_starts(extent: usize, tile: usize, step: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut at = 0;
    loop {
        if at + tile >= extent {
            starts.push(extent - tile);
            break;
        }
        starts.push(at);
        at += step;
    }
    starts
}

/// Tiled 4x upscale with overlap-averaged blending. `tile` and `overlap` are
/// in input pixels.
pub fn upscale_tiled(
    gen: &Generator<f32>,
    img: &ImageTensor,
    tile: usize,
    overlap: usize,
) -> Result<ImageTensor> {
    if tile < 16 || overlap >= tile {
        return Err(arg_err!(
            "tile must be >= 16 with overlap < tile, got tile {tile} overlap {overlap}"
        ));
    }
    let input = to_rgb(&img.data);
    let (b, _, h, w) = input.dim();
    if h < 8 || w < 8 {
        return Err(arg_err!("input {h}x{w} too small to upscale (needs 8x8)"));
    }
    if h <= tile && w <= tile {
        return upscale(gen, img);
    }
    let step = tile - overlap;
    let ys = tile_starts(h, tile.min(h), step);
    let xs = tile_starts(w, tile.min(w), step);
    let mut acc = Array4::<f32>::zeros((b, 3, 4 * h, 4 * w));
    let mut weight = ndarray::Array2::<f32>::zeros((4 * h, 4 * w));
    for &y0 in &ys {
        for &x0 in &xs {
            let th = tile.min(h);
            let tw = tile.min(w);
            let patch = input.slice(s![.., .., y0..y0 + th, x0..x0 + tw]).to_owned();
            let sr = gen.infer(&patch);
            let (oy, ox) = (4 * y0, 4 * x0);
            let mut dst = acc.slice_mut(s![.., .., oy..oy + 4 * th, ox..ox + 4 * tw]);
            dst += &sr;
            let mut wdst = weight.slice_mut(s![oy..oy + 4 * th, ox..ox + 4 * tw]);
            wdst += 1.0;
        }
    }
    for bi in 0..b {
        for c in 0..3 {
            let mut plane = acc.slice_mut(s![bi, c, .., ..]);
            plane /= &weight;
        }
    }
    acc.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(ImageTensor::wrap(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use crate::rng::Rng;

    fn small_gen(seed: u64) -> Generator<f32> {
        let cfg = GeneratorConfig {
            num_blocks: 2,
            base_channels: 12,
            growth_channels: 6,
            residual_scale: 0.2,
            lrelu_slope: 0.2,
        };
        Generator::init(&cfg, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn upscale_is_4x() {
        let gen = small_gen(1);
        let img = crate::synthimg::generate(32, 3);
        let out = upscale(&gen, &img).unwrap();
        assert_eq!(out.data.dim(), (1, 3, 128, 128));
    }

    #[test]
    fn tiled_matches_single_shot_within_a_quantization_level() {
        let gen = small_gen(2);
        let img = crate::synthimg::generate(128, 4);
        let direct = upscale(&gen, &img).unwrap();
        let tiled = upscale_tiled(&gen, &img, 64, 24).unwrap();
        assert_eq!(tiled.data.dim(), direct.data.dim());
        let max_err = direct
            .data
            .iter()
            .zip(tiled.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1.0 / 255.0, "max err {max_err}");
    }

    #[test]
    fn small_input_skips_tiling() {
        let gen = small_gen(3);
        let img = crate::synthimg::generate(48, 5);
        let a = upscale(&gen, &img).unwrap();
        let b = upscale_tiled(&gen, &img, 256, 16).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn bad_tile_settings_error() {
        let gen = small_gen(4);
        let img = crate::synthimg::generate(64, 6);
        assert!(upscale_tiled(&gen, &img, 8, 4).is_err());
        assert!(upscale_tiled(&gen, &img, 32, 32).is_err());
    }
}
