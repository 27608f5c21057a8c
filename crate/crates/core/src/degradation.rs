//! Seeded two-pass degradation pipeline for synthesizing LR training inputs:
//! each pass runs blur -> resize -> noise -> JPEG, then a final resize brings
//! the image to exactly 1/4 of the HR dims. Values are clamped to [0, 1]
//! after every stage and the whole chain is a pure function of
//! (image, config, seed).

use std::path::Path;

use ndarray::Array2;

use crate::error::{arg_err, config_err, Error, Result};
use crate::imageio::{self, ResizeMode};
use crate::rng::Rng;
use crate::tensor::ImageTensor;

/// Normalized odd-sized blur kernel; Gaussian family entries are nonnegative
/// and sum to one.
#[derive(Debug, Clone)]
pub struct BlurKernel {
    pub matrix: Array2<f64>,
}

impl BlurKernel {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let (h, w) = matrix.dim();
        if h != w || h % 2 == 0 {
            return Err(arg_err!("blur kernel must be square and odd, got {h}x{w}"));
        }
        let sum: f64 = matrix.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(arg_err!("blur kernel entries must sum to 1, got {sum}"));
        }
        Ok(BlurKernel { matrix })
    }

    pub fn size(&self) -> usize {
        self.matrix.dim().0
    }

    /// Isotropic or anisotropic Gaussian on a centered grid, normalized.
    pub fn gaussian(size: usize, sigma_x: f64, sigma_y: f64, theta: f64) -> Result<Self> {
        if size % 2 == 0 || size < 1 {
            return Err(arg_err!("kernel size must be odd, got {size}"));
        }
        if sigma_x <= 0.0 || sigma_y <= 0.0 {
            return Err(arg_err!("sigma must be positive"));
        }
        let r = (size / 2) as f64;
        let (sin_t, cos_t) = (libm::sin(theta), libm::cos(theta));
        // inverse covariance of R diag(sx^2, sy^2) R^T
        let (a, b) = (1.0 / (sigma_x * sigma_x), 1.0 / (sigma_y * sigma_y));
        let ixx = a * cos_t * cos_t + b * sin_t * sin_t;
        let iyy = a * sin_t * sin_t + b * cos_t * cos_t;
        let ixy = (a - b) * sin_t * cos_t;
        let mut m = Array2::zeros((size, size));
        for iy in 0..size {
            for ix in 0..size {
                let x = ix as f64 - r;
                let y = iy as f64 - r;
                let q = ixx * x * x + 2.0 * ixy * x * y + iyy * y * y;
                m[[iy, ix]] = libm::exp(-0.5 * q);
            }
        }
        let sum: f64 = m.iter().sum();
        m.mapv_inplace(|v| v / sum);
        Ok(BlurKernel { matrix: m })
    }

    /// Depthwise convolution with reflect padding (constant images stay
    /// constant).
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let (bs, cs, h, w) = img.data.dim();
        let k = self.size();
        if h < k || w < k {
            return Err(arg_err!("image {h}x{w} smaller than blur kernel {k}"));
        }
        let r = (k / 2) as isize;
        let mut out = img.data.clone();
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * n - 2 - i;
                }
            }
            i as usize
        };
        for b in 0..bs {
            for c in 0..cs {
                let plane = img.data.slice(ndarray::s![b, c, .., ..]);
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let mut acc = 0.0f64;
                        for ky in -r..=r {
                            for kx in -r..=r {
                                let wgt = self.matrix[[(ky + r) as usize, (kx + r) as usize]];
                                acc += wgt * plane[[reflect(y + ky, h), reflect(x + kx, w)]] as f64;
                            }
                        }
                        out[[b, c, y as usize, x as usize]] = acc as f32;
                    }
                }
            }
        }
        let mut out = ImageTensor::wrap(out);
        out.clamp01();
        Ok(out)
    }
}

/// Flat, file-loadable parameter ranges for both passes. Every range is
/// inclusive; `lo <= hi` is validated up front.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationConfig {
    pub seed: u64,
    /// Fixed at 4; the pipeline always emits (H/4, W/4).
    pub final_scale: u32,
    pub kernel_size_min: usize,
    pub kernel_size_max: usize,
    pub aniso_prob: f64,
    /// Probability of skipping the blur stage in the second pass.
    pub skip_blur2_prob: f64,
    /// Probability of Gaussian (vs Poisson) noise per pass.
    pub gaussian_noise_prob: f64,
    pub jpeg_quality_min: u8,
    pub jpeg_quality_max: u8,
    pub pass1_sigma_min: f64,
    pub pass1_sigma_max: f64,
    pub pass2_sigma_min: f64,
    pub pass2_sigma_max: f64,
    pub pass1_noise_sigma_min: f64,
    pub pass1_noise_sigma_max: f64,
    pub pass2_noise_sigma_min: f64,
    pub pass2_noise_sigma_max: f64,
    pub pass1_poisson_scale_min: f64,
    pub pass1_poisson_scale_max: f64,
    pub pass2_poisson_scale_min: f64,
    pub pass2_poisson_scale_max: f64,
    pub pass1_resize_min: f64,
    pub pass1_resize_max: f64,
    pub pass2_resize_min: f64,
    pub pass2_resize_max: f64,
    pub pass1_resize_modes: Vec<ResizeMode>,
    pub pass2_resize_modes: Vec<ResizeMode>,
    pub final_resize_modes: Vec<ResizeMode>,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            seed: 0,
            final_scale: 4,
            kernel_size_min: 7,
            kernel_size_max: 21,
            aniso_prob: 0.3,
            skip_blur2_prob: 0.2,
            gaussian_noise_prob: 0.5,
            jpeg_quality_min: 30,
            jpeg_quality_max: 95,
            pass1_sigma_min: 0.2,
            pass1_sigma_max: 3.0,
            pass2_sigma_min: 0.2,
            pass2_sigma_max: 1.5,
            pass1_noise_sigma_min: 0.0,
            pass1_noise_sigma_max: 0.06,
            pass2_noise_sigma_min: 0.0,
            pass2_noise_sigma_max: 0.05,
            pass1_poisson_scale_min: 0.05,
            pass1_poisson_scale_max: 2.5,
            pass2_poisson_scale_min: 0.05,
            pass2_poisson_scale_max: 2.0,
            pass1_resize_min: 0.5,
            pass1_resize_max: 1.5,
            pass2_resize_min: 0.8,
            pass2_resize_max: 1.2,
            pass1_resize_modes: vec![
                ResizeMode::Nearest,
                ResizeMode::Bilinear,
                ResizeMode::Bicubic,
                ResizeMode::Area,
            ],
            pass2_resize_modes: vec![
                ResizeMode::Nearest,
                ResizeMode::Bilinear,
                ResizeMode::Bicubic,
                ResizeMode::Area,
            ],
            final_resize_modes: vec![ResizeMode::Area, ResizeMode::Bilinear, ResizeMode::Bicubic],
        }
    }
}

impl DegradationConfig {
    /// Deterministic pass-through settings: delta blur, unit resize, zero
    /// noise, quality-100 JPEG, area final resize.
    pub fn benign() -> Self {
        DegradationConfig {
            kernel_size_min: 7,
            kernel_size_max: 7,
            aniso_prob: 0.0,
            skip_blur2_prob: 0.0,
            gaussian_noise_prob: 1.0,
            jpeg_quality_min: 100,
            jpeg_quality_max: 100,
            pass1_sigma_min: 1e-6,
            pass1_sigma_max: 1e-6,
            pass2_sigma_min: 1e-6,
            pass2_sigma_max: 1e-6,
            pass1_noise_sigma_min: 0.0,
            pass1_noise_sigma_max: 0.0,
            pass2_noise_sigma_min: 0.0,
            pass2_noise_sigma_max: 0.0,
            pass1_resize_min: 1.0,
            pass1_resize_max: 1.0,
            pass2_resize_min: 1.0,
            pass2_resize_max: 1.0,
            pass1_resize_modes: vec![ResizeMode::Area],
            pass2_resize_modes: vec![ResizeMode::Area],
            final_resize_modes: vec![ResizeMode::Area],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.final_scale != 4 {
            return Err(config_err!("final_scale is fixed at 4"));
        }
        if self.kernel_size_min % 2 == 0
            || self.kernel_size_max % 2 == 0
            || self.kernel_size_min < 3
            || self.kernel_size_min > self.kernel_size_max
        {
            return Err(config_err!(
                "kernel sizes must be odd with 3 <= min <= max, got {}..{}",
                self.kernel_size_min,
                self.kernel_size_max
            ));
        }
        let ranges = [
            ("pass1_sigma", self.pass1_sigma_min, self.pass1_sigma_max),
            ("pass2_sigma", self.pass2_sigma_min, self.pass2_sigma_max),
            (
                "pass1_noise_sigma",
                self.pass1_noise_sigma_min,
                self.pass1_noise_sigma_max,
            ),
            (
                "pass2_noise_sigma",
                self.pass2_noise_sigma_min,
                self.pass2_noise_sigma_max,
            ),
            (
                "pass1_poisson_scale",
                self.pass1_poisson_scale_min,
                self.pass1_poisson_scale_max,
            ),
            (
                "pass2_poisson_scale",
                self.pass2_poisson_scale_min,
                self.pass2_poisson_scale_max,
            ),
            ("pass1_resize", self.pass1_resize_min, self.pass1_resize_max),
            ("pass2_resize", self.pass2_resize_min, self.pass2_resize_max),
        ];
        for (name, lo, hi) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(config_err!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if self.jpeg_quality_min < 1
            || self.jpeg_quality_min > self.jpeg_quality_max
            || self.jpeg_quality_max > 100
        {
            return Err(config_err!(
                "jpeg quality range [{}, {}] is invalid",
                self.jpeg_quality_min,
                self.jpeg_quality_max
            ));
        }
        for (name, p) in [
            ("aniso_prob", self.aniso_prob),
            ("skip_blur2_prob", self.skip_blur2_prob),
            ("gaussian_noise_prob", self.gaussian_noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.pass1_resize_modes.is_empty()
            || self.pass2_resize_modes.is_empty()
            || self.final_resize_modes.is_empty()
        {
            return Err(config_err!("resize mode pools must be non-empty"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: DegradationConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn pass(&self, idx: usize) -> PassRanges<'_> {
        if idx == 0 {
            PassRanges {
                sigma: (self.pass1_sigma_min, self.pass1_sigma_max),
                noise_sigma: (self.pass1_noise_sigma_min, self.pass1_noise_sigma_max),
                poisson_scale: (self.pass1_poisson_scale_min, self.pass1_poisson_scale_max),
                resize: (self.pass1_resize_min, self.pass1_resize_max),
                resize_modes: &self.pass1_resize_modes,
                skip_blur_prob: 0.0,
            }
        } else {
            PassRanges {
                sigma: (self.pass2_sigma_min, self.pass2_sigma_max),
                noise_sigma: (self.pass2_noise_sigma_min, self.pass2_noise_sigma_max),
                poisson_scale: (self.pass2_poisson_scale_min, self.pass2_poisson_scale_max),
                resize: (self.pass2_resize_min, self.pass2_resize_max),
                resize_modes: &self.pass2_resize_modes,
                skip_blur_prob: self.skip_blur2_prob,
            }
        }
    }
}

struct PassRanges<'a> {
    sigma: (f64, f64),
    noise_sigma: (f64, f64),
    poisson_scale: (f64, f64),
    resize: (f64, f64),
    resize_modes: &'a [ResizeMode],
    skip_blur_prob: f64,
}

/// Sample one pass's blur kernel (isotropic or anisotropic Gaussian).
pub fn generate_blur_kernel(
    config: &DegradationConfig,
    pass_index: usize,
    rng: &mut Rng,
) -> Result<BlurKernel> {
    if pass_index > 1 {
        return Err(arg_err!("pass_index must be 0 or 1, got {pass_index}"));
    }
    config.validate()?;
    let ranges = config.pass(pass_index);
    let n_sizes = (config.kernel_size_max - config.kernel_size_min) / 2 + 1;
    let size = config.kernel_size_min + 2 * rng.int_range(0, n_sizes as i64 - 1) as usize;
    if rng.coin(config.aniso_prob) {
        let sx = rng.range(ranges.sigma.0, ranges.sigma.1);
        let sy = rng.range(ranges.sigma.0, ranges.sigma.1);
        let theta = rng.range(-std::f64::consts::PI, std::f64::consts::PI);
        BlurKernel::gaussian(size, sx.max(1e-6), sy.max(1e-6), theta)
    } else {
        let s = rng.range(ranges.sigma.0, ranges.sigma.1).max(1e-6);
        BlurKernel::gaussian(size, s, s, 0.0)
    }
}

fn add_gaussian_noise(img: &mut ImageTensor, sigma: f64, rng: &mut Rng) {
    if sigma <= 0.0 {
        return;
    }
    for v in img.data.iter_mut() {
        *v = (*v as f64 + sigma * rng.gauss()) as f32;
    }
    img.clamp01();
}

fn add_poisson_noise(img: &mut ImageTensor, scale: f64, rng: &mut Rng) {
    if scale <= 0.0 {
        return;
    }
    const LEVELS: f64 = 256.0;
    for v in img.data.iter_mut() {
        let x = (*v).clamp(0.0, 1.0) as f64;
        let shot = rng.poisson(x * LEVELS) as f64 / LEVELS;
        *v = (x + (shot - x) * scale) as f32;
    }
    img.clamp01();
}

/// One classical degradation pass: blur -> resize -> noise -> compression.
pub fn apply_degradation_pass(
    img: &ImageTensor,
    config: &DegradationConfig,
    pass_index: usize,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    if pass_index > 1 {
        return Err(arg_err!("pass_index must be 0 or 1, got {pass_index}"));
    }
    config.validate()?;
    let ranges = config.pass(pass_index);

    // blur
    let kernel = generate_blur_kernel(config, pass_index, rng)?;
    let skip_blur = ranges.skip_blur_prob > 0.0 && rng.coin(ranges.skip_blur_prob);
    let mut out = if skip_blur { img.clone() } else { kernel.apply(img)? };

    // resize
    let scale = rng.range(ranges.resize.0, ranges.resize.1);
    let mode = *rng.choice(ranges.resize_modes);
    if scale != 1.0 {
        out = imageio::resize(&out, scale, mode)?;
        out.clamp01();
    }

    // noise
    if rng.coin(config.gaussian_noise_prob) {
        let sigma = rng.range(ranges.noise_sigma.0, ranges.noise_sigma.1);
        add_gaussian_noise(&mut out, sigma, rng);
    } else {
        let scale = rng.range(ranges.poisson_scale.0, ranges.poisson_scale.1);
        add_poisson_noise(&mut out, scale, rng);
    }

    // compression
    let q = rng.int_range(config.jpeg_quality_min as i64, config.jpeg_quality_max as i64) as u8;
    let mut out = imageio::jpeg_roundtrip(&out, q)?;
    out.clamp01();
    Ok(out)
}

/// Full two-pass synthesis; output is exactly (B, C, H/4, W/4).
pub fn synthesize_lr(
    hr: &ImageTensor,
    config: &DegradationConfig,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    config.validate()?;
    let (_, _, h, w) = hr.data.dim();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(arg_err!("HR dims {h}x{w} must be divisible by 4"));
    }
    let mut out = apply_degradation_pass(hr, config, 0, rng)?;
    out = apply_degradation_pass(&out, config, 1, rng)?;
    let mode = *rng.choice(&config.final_resize_modes);
    let mut out = imageio::resize_to(&out, h / 4, w / 4, mode)?;
    out.clamp01();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn texture_image(n: usize, seed: u64) -> ImageTensor {
        let mut rng = Rng::new(seed);
        let mut base = Array4::zeros((1, 3, n, n));
        for c in 0..3 {
            let (fx, fy) = (rng.range(2.0, 6.0), rng.range(2.0, 6.0));
            let ph = rng.range(0.0, 6.28);
            for y in 0..n {
                for x in 0..n {
                    let v = 0.5
                        + 0.3
                            * libm::sin(fx * x as f64 / n as f64 * 6.28 + ph)
                            * libm::cos(fy * y as f64 / n as f64 * 6.28)
                        + 0.1 * (rng.uniform() - 0.5);
                    base[[0, c, y, x]] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        ImageTensor::new(base).unwrap()
    }

    #[test]
    fn near_delta_kernel_is_identity() {
        let k = BlurKernel::gaussian(7, 1e-6, 1e-6, 0.0).unwrap();
        assert!((k.matrix[[3, 3]] - 1.0).abs() < 1e-12);
        let off: f64 = k.matrix.iter().sum::<f64>() - k.matrix[[3, 3]];
        assert!(off.abs() < 1e-12);
    }

    #[test]
    fn sampled_kernels_are_normalized() {
        let cfg = DegradationConfig::default();
        let mut rng = Rng::new(1);
        for pass in 0..2 {
            for _ in 0..20 {
                let k = generate_blur_kernel(&cfg, pass, &mut rng).unwrap();
                let sum: f64 = k.matrix.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(k.matrix.iter().all(|&v| v >= 0.0));
                assert!(k.size() % 2 == 1 && (7..=21).contains(&k.size()));
            }
        }
    }

    #[test]
    fn isotropic_kernel_symmetry_and_peak() {
        let k = BlurKernel::gaussian(15, 2.0, 2.0, 0.0).unwrap();
        let m = &k.matrix;
        let center = m[[7, 7]];
        let max = m.iter().fold(0.0f64, |a, &v| a.max(v));
        assert_eq!(center, max);
        // 4-fold symmetry
        for y in 0..15 {
            for x in 0..15 {
                let v = m[[y, x]];
                assert!((v - m[[14 - y, x]]).abs() < 1e-12);
                assert!((v - m[[y, 14 - x]]).abs() < 1e-12);
                assert!((v - m[[x, y]]).abs() < 1e-12);
            }
        }
        // direct evaluation of the Gaussian at a sample point
        let want = libm::exp(-0.5 * (9.0 + 4.0) / 4.0);
        let want = want
            / (0..15)
                .flat_map(|y| (0..15).map(move |x| (y, x)))
                .map(|(y, x)| {
                    let (dy, dx) = (y as f64 - 7.0, x as f64 - 7.0);
                    libm::exp(-0.5 * (dy * dy + dx * dx) / 4.0)
                })
                .sum::<f64>();
        assert!((m[[7 + 2, 7 + 3]] - want).abs() < 1e-12);
    }

    #[test]
    fn constant_image_survives_benign_pass() {
        let img = ImageTensor::constant(1, 3, 32, 32, 0.5).unwrap();
        let cfg = DegradationConfig::benign();
        let mut rng = Rng::new(2);
        let out = apply_degradation_pass(&img, &cfg, 0, &mut rng).unwrap();
        assert_eq!(out.data.dim(), (1, 3, 32, 32));
        let max_err = out
            .data
            .iter()
            .map(|v| (v - 0.5).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 2.0 / 255.0, "max err {max_err}");
    }

    #[test]
    fn pass_is_deterministic() {
        let img = texture_image(32, 3);
        let cfg = DegradationConfig::default();
        let a = apply_degradation_pass(&img, &cfg, 0, &mut Rng::new(7)).unwrap();
        let b = apply_degradation_pass(&img, &cfg, 0, &mut Rng::new(7)).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn gaussian_noise_statistics() {
        let img = ImageTensor::constant(1, 1, 128, 128, 0.5).unwrap();
        let mut noisy = img.clone();
        add_gaussian_noise(&mut noisy, 0.1, &mut Rng::new(11));
        let n = noisy.data.len() as f64;
        let mean: f64 = noisy.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = noisy
            .data
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        assert!((0.09..=0.11).contains(&sd), "sd {sd}");
    }

    #[test]
    fn synthesize_shape_and_determinism() {
        let hr = texture_image(64, 5);
        let cfg = DegradationConfig::default();
        let a = synthesize_lr(&hr, &cfg, &mut Rng::new(100)).unwrap();
        assert_eq!(a.data.dim(), (1, 3, 16, 16));
        let b = synthesize_lr(&hr, &cfg, &mut Rng::new(100)).unwrap();
        assert_eq!(a.data, b.data);
        let c = synthesize_lr(&hr, &cfg, &mut Rng::new(101)).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn synthesize_requires_divisible_dims() {
        let hr = texture_image(62, 6);
        let cfg = DegradationConfig::benign();
        assert!(synthesize_lr(&hr, &cfg, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn benign_config_matches_area_resize() {
        let hr = texture_image(64, 8);
        let cfg = DegradationConfig::benign();
        let lr = synthesize_lr(&hr, &cfg, &mut Rng::new(13)).unwrap();
        let direct = imageio::resize(&hr, 0.25, ResizeMode::Area).unwrap();
        let max_err = lr
            .data
            .iter()
            .zip(direct.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 2.0 / 255.0, "max err {max_err}");
    }

    #[test]
    fn image_smaller_than_kernel_errors() {
        let img = texture_image(5, 9);
        let cfg = DegradationConfig::default(); // kernels start at 7
        let err = apply_degradation_pass(&img, &cfg, 0, &mut Rng::new(0));
        assert!(err.is_err());
    }

    #[test]
    fn output_stays_in_range_under_default_config() {
        let hr = texture_image(64, 10);
        let cfg = DegradationConfig::default();
        for seed in 0..8 {
            let lr = synthesize_lr(&hr, &cfg, &mut Rng::new(seed)).unwrap();
            for &v in lr.data.iter() {
                assert!((0.0..=1.0).contains(&v) && v.is_finite());
            }
        }
    }

    #[test]
    fn blur_reduces_high_frequency_energy() {
        let hr = texture_image(128, 12);
        let mut cfg = DegradationConfig::benign();
        cfg.pass1_sigma_min = 1.5;
        cfg.pass1_sigma_max = 1.5;
        cfg.pass2_sigma_min = 1.0;
        cfg.pass2_sigma_max = 1.0;
        let lr = synthesize_lr(&hr, &cfg, &mut Rng::new(21)).unwrap();
        let baseline = imageio::resize(&hr, 0.25, ResizeMode::Area).unwrap();
        let lap_energy = |img: &ImageTensor| -> f64 {
            let (_, c, h, w) = img.data.dim();
            let mut acc = 0.0;
            let mut count = 0usize;
            for ci in 0..c {
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let p = |yy: usize, xx: usize| img.data[[0, ci, yy, xx]] as f64;
                        let lap =
                            4.0 * p(y, x) - p(y - 1, x) - p(y + 1, x) - p(y, x - 1) - p(y, x + 1);
                        acc += lap.abs();
                        count += 1;
                    }
                }
            }
            acc / count as f64
        };
        let e_blur = lap_energy(&lr);
        let e_base = lap_energy(&baseline);
        assert!(
            e_blur < e_base,
            "blurred energy {e_blur} should be below baseline {e_base}"
        );
    }

    #[test]
    fn config_toml_roundtrip_and_unknown_key() {
        let cfg = DegradationConfig::default();
        let text = cfg.to_toml_string();
        let parsed: DegradationConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed.kernel_size_max, cfg.kernel_size_max);
        let bad = format!("{text}\nnot_a_key = 1\n");
        assert!(toml::from_str::<DegradationConfig>(&bad).is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = DegradationConfig::default();
        cfg.pass1_sigma_min = 2.0;
        cfg.pass1_sigma_max = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = DegradationConfig::default();
        cfg.final_scale = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = DegradationConfig::default();
        cfg.kernel_size_min = 8;
        assert!(cfg.validate().is_err());
    }
}
