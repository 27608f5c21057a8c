//! No-reference quality scoring from natural-scene statistics: locally
//! normalized luminance (MSCN) and its pairwise products are fitted with
//! (asymmetric) generalized Gaussians per patch at two scales; an image is
//! scored by the Mahalanobis-style distance between the multivariate Gaussian
//! fit of its patch features and a pristine-corpus model. Lower is better.
//!
//! Absolute values depend on the pristine corpus the model was fitted on, so
//! scores are only comparable against the same model file.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2};

use crate::error::{arg_err, Error, Result};
use crate::imageio;
use crate::tensor::ImageTensor;

pub const FEATURE_DIM: usize = 36;

/// Pristine-corpus model: mean and (ridge-regularized) covariance of
/// per-image aggregated features.
#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    pub patch_size: usize,
    pub sharpness_fraction: f64,
}

/// Aggregated features of one image plus the flag raised when no patch
/// passed sharpness selection and all patches were used instead.
#[derive(Debug, Clone)]
pub struct FeatureResult {
    pub features: Array1<f64>,
    pub used_fallback: bool,
}

const WINDOW: usize = 7;

fn gaussian_window() -> Array2<f64> {
    let sigma = WINDOW as f64 / 6.0;
    let r = (WINDOW / 2) as f64;
    let mut w = Array2::zeros((WINDOW, WINDOW));
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let (dy, dx) = (y as f64 - r, x as f64 - r);
            w[[y, x]] = libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    }
    let sum: f64 = w.iter().sum();
    w.mapv_inplace(|v| v / sum);
    w
}

/// ITU-R 601 luminance of one batch item, scaled to [0, 255].
pub fn to_luminance(img: &ImageTensor, batch: usize) -> Array2<f64> {
    let (_, c, h, w) = img.data.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let v = if c == 3 {
                0.299 * img.data[[batch, 0, y, x]] as f64
                    + 0.587 * img.data[[batch, 1, y, x]] as f64
                    + 0.114 * img.data[[batch, 2, y, x]] as f64
            } else {
                img.data[[batch, 0, y, x]] as f64
            };
            out[[y, x]] = v * 255.0;
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
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
}

fn window_filter(img: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let (h, wd) = img.dim();
    let r = (WINDOW / 2) as isize;
    let mut out = Array2::zeros((h, wd));
    for y in 0..h as isize {
        for x in 0..wd as isize {
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    acc += w[[(ky + r) as usize, (kx + r) as usize]]
                        * img[[reflect(y + ky, h), reflect(x + kx, wd)]];
                }
            }
            out[[y as usize, x as usize]] = acc;
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients and the local deviation
/// field: (I - mu) / (sigma + 1) with 7x7 Gaussian-weighted local moments.
pub fn compute_mscn_with_sigma(gray: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, w) = gray.dim();
    if h < 2 * WINDOW || w < 2 * WINDOW {
        return Err(arg_err!(
            "image {h}x{w} too small for MSCN (needs at least {0}x{0})",
            2 * WINDOW
        ));
    }
    let win = gaussian_window();
    let mu = window_filter(gray, &win);
    let sq = gray.mapv(|v| v * v);
    let mu_sq = window_filter(&sq, &win);
    let mut sigma = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            sigma[[y, x]] = (mu_sq[[y, x]] - mu[[y, x]] * mu[[y, x]]).max(0.0).sqrt();
        }
    }
    let mut mscn = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            mscn[[y, x]] = (gray[[y, x]] - mu[[y, x]]) / (sigma[[y, x]] + 1.0);
        }
    }
    Ok((mscn, sigma))
}

pub fn compute_mscn(gray: &Array2<f64>) -> Result<Array2<f64>> {
    compute_mscn_with_sigma(gray).map(|(m, _)| m)
}

/// rho(alpha) = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)); monotone increasing
/// over the fit grid.
fn ggd_ratio(alpha: f64) -> f64 {
    let g = libm::tgamma;
    g(2.0 / alpha) * g(2.0 / alpha) / (g(1.0 / alpha) * g(3.0 / alpha))
}

fn alpha_grid() -> &'static Vec<(f64, f64)> {
    use std::sync::OnceLock;
    static GRID: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    GRID.get_or_init(|| {
        let mut v = Vec::with_capacity(9801);
        let mut a = 0.2;
        while a <= 10.0 + 1e-9 {
            v.push((ggd_ratio(a), a));
            a += 0.001;
        }
        v
    })
}

fn lookup_alpha(target: f64) -> f64 {
    let grid = alpha_grid();
    let idx = grid.partition_point(|(rho, _)| *rho < target);
    if idx == 0 {
        return grid[0].1;
    }
    if idx >= grid.len() {
        return grid[grid.len() - 1].1;
    }
    let (lo, hi) = (grid[idx - 1], grid[idx]);
    if (target - lo.0).abs() <= (hi.0 - target).abs() {
        lo.1
    } else {
        hi.1
    }
}

/// Symmetric generalized Gaussian moment fit: (shape alpha, sigma^2).
pub fn fit_ggd(samples: &[f64]) -> Result<(f64, f64)> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let mean_abs = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_sq = samples.iter().map(|v| v * v).sum::<f64>() / n;
    if mean_sq <= 0.0 {
        return Err(Error::Fit("all samples are zero".into()));
    }
    let rho = mean_abs * mean_abs / mean_sq;
    Ok((lookup_alpha(rho), mean_sq))
}

/// Asymmetric generalized Gaussian moment fit: (shape alpha, sigma_left,
/// sigma_right). Negating the samples swaps the two sigmas exactly.
pub fn fit_aggd(samples: &[f64]) -> Result<(f64, f64, f64)> {
    check_samples(samples)?;
    let (mut nl, mut nr) = (0usize, 0usize);
    let (mut sql, mut sqr) = (0.0f64, 0.0f64);
    let (mut abs_sum, mut sq_sum) = (0.0f64, 0.0f64);
    for &v in samples {
        abs_sum += v.abs();
        sq_sum += v * v;
        if v < 0.0 {
            nl += 1;
            sql += v * v;
        } else if v > 0.0 {
            nr += 1;
            sqr += v * v;
        }
    }
    if sq_sum <= 0.0 {
        return Err(Error::Fit("all samples are zero".into()));
    }
    let n = samples.len() as f64;
    let sigma_l = if nl > 0 { (sql / nl as f64).sqrt() } else { 0.0 };
    let sigma_r = if nr > 0 { (sqr / nr as f64).sqrt() } else { 0.0 };
    let eps = 1e-12;
    let gamma = (sigma_l + eps) / (sigma_r + eps);
    let r_hat = (abs_sum / n) * (abs_sum / n) / (sq_sum / n);
    let rho = r_hat * (gamma * gamma * gamma + 1.0) * (gamma + 1.0)
        / ((gamma * gamma + 1.0) * (gamma * gamma + 1.0));
    Ok((lookup_alpha(rho), sigma_l, sigma_r))
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 100 {
        return Err(Error::Fit(format!(
            "need at least 100 samples, got {}",
            samples.len()
        )));
    }
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Err(Error::Fit("degenerate (constant) samples".into()));
    }
    Ok(())
}

/// AGGD mean term (sigma_r - sigma_l) * Gamma(2/a) / Gamma(1/a).
fn aggd_mean(alpha: f64, sigma_l: f64, sigma_r: f64) -> f64 {
    (sigma_r - sigma_l) * libm::tgamma(2.0 / alpha) / libm::tgamma(1.0 / alpha)
}

/// 18 features of one MSCN block: GGD fit of the coefficients, then AGGD
/// fits of the four orientation products (H, V, D1, D2).
fn block_features(mscn: &ndarray::ArrayView2<f64>) -> [f64; 18] {
    let mut feats = [0.0f64; 18];
    let coeffs: Vec<f64> = mscn.iter().copied().collect();
    let (alpha, sigma_sq) = match fit_ggd(&coeffs) {
        Ok(v) => v,
        Err(_) => (2.0, 0.0), // flat block: note the degenerate fit and move on
    };
    feats[0] = alpha;
    feats[1] = sigma_sq;
    let (h, w) = mscn.dim();
    let shifts: [(usize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (k, (dy, dx)) in shifts.iter().enumerate() {
        let mut prod = Vec::with_capacity((h - 1) * (w - 1));
        for y in 0..h - dy {
            for x in 0..w {
                let xx = x as isize + dx;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                prod.push(mscn[[y, x]] * mscn[[y + dy, xx as usize]]);
            }
        }
        let (alpha, sl, sr) = match fit_aggd(&prod) {
            Ok(v) => v,
            Err(_) => (2.0, 0.0, 0.0),
        };
        let base = 2 + 4 * k;
        feats[base] = alpha;
        feats[base + 1] = aggd_mean(alpha, sl, sr);
        feats[base + 2] = sl * sl;
        feats[base + 3] = sr * sr;
    }
    feats
}

/// 2x downsample by 2x2 averaging (odd trailing row/col dropped).
fn half_scale(gray: &Array2<f64>) -> Array2<f64> {
    let (h, w) = gray.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = 0.25
                * (gray[[2 * y, 2 * x]]
                    + gray[[2 * y, 2 * x + 1]]
                    + gray[[2 * y + 1, 2 * x]]
                    + gray[[2 * y + 1, 2 * x + 1]]);
        }
    }
    out
}

/// Per-patch 36-vectors for one grayscale image; bool marks the sharpness
/// fallback. Patches are patch_size blocks at full scale and the co-located
/// half-size blocks at half scale.
pub fn patch_features(
    gray: &Array2<f64>,
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<(Array2<f64>, bool)> {
    let (h, w) = gray.dim();
    if patch_size % 2 != 0 {
        return Err(arg_err!("patch size must be even, got {patch_size}"));
    }
    let (nby, nbx) = (h / patch_size, w / patch_size);
    if nby == 0 || nbx == 0 {
        return Err(arg_err!(
            "image {h}x{w} too small for {patch_size}-pixel patches at two scales"
        ));
    }
    let (mscn1, sigma1) = compute_mscn_with_sigma(gray)?;
    let g2 = half_scale(gray);
    let (mscn2, _) = compute_mscn_with_sigma(&g2)?;

    // sharpness selection from the full-scale deviation field
    let mut sharp = Vec::with_capacity(nby * nbx);
    for by in 0..nby {
        for bx in 0..nbx {
            let block = sigma1.slice(s![
                by * patch_size..(by + 1) * patch_size,
                bx * patch_size..(bx + 1) * patch_size
            ]);
            sharp.push(block.mean().unwrap());
        }
    }
    let peak = sharp.iter().cloned().fold(0.0f64, f64::max);
    let thresh = sharpness_fraction * peak;
    let mut selected: Vec<usize> = (0..sharp.len()).filter(|&i| sharp[i] > thresh).collect();
    let fallback = selected.is_empty();
    if fallback {
        selected = (0..sharp.len()).collect();
    }

    let half = patch_size / 2;
    let mut rows = Array2::zeros((selected.len(), FEATURE_DIM));
    for (ri, &pi) in selected.iter().enumerate() {
        let (by, bx) = (pi / nbx, pi % nbx);
        let b1 = mscn1.slice(s![
            by * patch_size..(by + 1) * patch_size,
            bx * patch_size..(bx + 1) * patch_size
        ]);
        let b2 = mscn2.slice(s![by * half..(by + 1) * half, bx * half..(bx + 1) * half]);
        let f1 = block_features(&b1);
        let f2 = block_features(&b2);
        for (j, v) in f1.iter().chain(f2.iter()).enumerate() {
            rows[[ri, j]] = *v;
        }
    }
    Ok((rows, fallback))
}

/// Aggregated (patch-mean) 36-vector of one image.
pub fn extract_features(
    gray: &Array2<f64>,
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<FeatureResult> {
    let (rows, used_fallback) = patch_features(gray, patch_size, sharpness_fraction)?;
    let n = rows.dim().0 as f64;
    let mut mu = Array1::zeros(FEATURE_DIM);
    for j in 0..FEATURE_DIM {
        mu[j] = rows.column(j).sum() / n;
    }
    Ok(FeatureResult {
        features: mu,
        used_fallback,
    })
}

/// Relative ridge added to the fitted covariance. Sized for corpora of a
/// few dozen images, where the sample covariance is rank-deficient in the
/// 36-dim feature space.
const RIDGE_REL: f64 = 0.1;

fn ridge_of(sigma: &Array2<f64>) -> f64 {
    let trace: f64 = (0..FEATURE_DIM).map(|i| sigma[[i, i]]).sum();
    (RIDGE_REL * trace / FEATURE_DIM as f64).max(1e-10)
}

/// Population mean/covariance over per-image aggregated features of a corpus
/// directory, ridge-regularized.
pub fn fit_pristine_model(
    corpus_dir: impl AsRef<Path>,
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<NiqeModel> {
    let dir = corpus_dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    paths.sort();
    if paths.len() < 10 {
        return Err(Error::Fit(format!(
            "pristine fit needs at least 10 images, found {} in {}",
            paths.len(),
            dir.display()
        )));
    }
    let mut feats = Array2::zeros((paths.len(), FEATURE_DIM));
    for (i, p) in paths.iter().enumerate() {
        let img = imageio::load_image(p)?;
        let gray = to_luminance(&img, 0);
        let fr = extract_features(&gray, patch_size, sharpness_fraction)?;
        feats.row_mut(i).assign(&fr.features);
    }
    fit_model_from_features(&feats, patch_size, sharpness_fraction)
}

pub fn fit_model_from_features(
    feats: &Array2<f64>,
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<NiqeModel> {
    let n = feats.dim().0;
    let mut mu = Array1::zeros(FEATURE_DIM);
    for j in 0..FEATURE_DIM {
        mu[j] = feats.column(j).sum() / n as f64;
    }
    let mut sigma = Array2::zeros((FEATURE_DIM, FEATURE_DIM));
    for r in 0..n {
        for i in 0..FEATURE_DIM {
            let di = feats[[r, i]] - mu[i];
            for j in 0..FEATURE_DIM {
                sigma[[i, j]] += di * (feats[[r, j]] - mu[j]) / n as f64;
            }
        }
    }
    let ridge = ridge_of(&sigma);
    for i in 0..FEATURE_DIM {
        sigma[[i, i]] += ridge;
    }
    Ok(NiqeModel {
        mu,
        sigma,
        patch_size,
        sharpness_fraction,
    })
}

fn invert(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.dim().0;
    let mut dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let mut jitter = 0.0;
    for _ in 0..6 {
        if let Some(inv) = dm.clone().try_inverse() {
            let mut out = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] = inv[(i, j)];
                }
            }
            return Ok(out);
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 100.0 };
        for i in 0..n {
            dm[(i, i)] += jitter;
        }
    }
    Err(Error::Fit("covariance not invertible".into()))
}

/// Distance between the test image's feature distribution and the model:
/// sqrt((mu1-mu2)^T ((S1+S2)/2)^-1 (mu1-mu2)). Batch items pool their
/// patches, so replicating the batch does not change the score.
pub fn niqe_score(img: &ImageTensor, model: &NiqeModel) -> Result<f64> {
    let mut all_rows: Vec<Array2<f64>> = Vec::new();
    for b in 0..img.batch() {
        let gray = to_luminance(img, b);
        let (rows, _) = patch_features(&gray, model.patch_size, model.sharpness_fraction)?;
        all_rows.push(rows);
    }
    let total: usize = all_rows.iter().map(|r| r.dim().0).sum();
    let mut feats = Array2::zeros((total, FEATURE_DIM));
    let mut at = 0;
    for r in &all_rows {
        let n = r.dim().0;
        feats.slice_mut(s![at..at + n, ..]).assign(r);
        at += n;
    }
    let n = total as f64;
    let mut nu2 = Array1::zeros(FEATURE_DIM);
    for j in 0..FEATURE_DIM {
        nu2[j] = feats.column(j).sum() / n;
    }
    let mut sigma2 = Array2::zeros((FEATURE_DIM, FEATURE_DIM));
    for r in 0..total {
        for i in 0..FEATURE_DIM {
            let di = feats[[r, i]] - nu2[i];
            for j in 0..FEATURE_DIM {
                sigma2[[i, j]] += di * (feats[[r, j]] - nu2[j]) / n;
            }
        }
    }
    score_from_stats(&nu2, &sigma2, model)
}

/// Score from explicit test statistics; sigma2 may be zero (single patch).
pub fn score_from_stats(
    nu2: &Array1<f64>,
    sigma2: &Array2<f64>,
    model: &NiqeModel,
) -> Result<f64> {
    let mut combined = Array2::zeros((FEATURE_DIM, FEATURE_DIM));
    for i in 0..FEATURE_DIM {
        for j in 0..FEATURE_DIM {
            combined[[i, j]] = 0.5 * (model.sigma[[i, j]] + sigma2[[i, j]]);
        }
    }
    let inv = invert(&combined)?;
    let d = &model.mu - nu2;
    let mut q = 0.0;
    for i in 0..FEATURE_DIM {
        for j in 0..FEATURE_DIM {
            q += d[i] * inv[[i, j]] * d[j];
        }
    }
    Ok(q.max(0.0).sqrt())
}

impl NiqeModel {
    /// Text format: a header line `niqe-model v1 patch_size=N
    /// sharpness_fraction=F`, one line of 36 mu values, then 36 rows of the
    /// covariance, row-major, all in round-trip decimal.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "niqe-model v1 patch_size={} sharpness_fraction={}",
            self.patch_size, self.sharpness_fraction
        );
        let mu_line: Vec<String> = self.mu.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", mu_line.join(" "));
        for i in 0..FEATURE_DIM {
            let row: Vec<String> = self.sigma.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty model file".into()))?;
        let mut patch_size = None;
        let mut sharpness = None;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("niqe-model") || parts.next() != Some("v1") {
            return Err(Error::Format(format!("bad model header: {header}")));
        }
        for p in parts {
            if let Some(v) = p.strip_prefix("patch_size=") {
                patch_size = v.parse::<usize>().ok();
            } else if let Some(v) = p.strip_prefix("sharpness_fraction=") {
                sharpness = v.parse::<f64>().ok();
            }
        }
        let (patch_size, sharpness_fraction) = match (patch_size, sharpness) {
            (Some(p), Some(s)) => (p, s),
            _ => return Err(Error::Format(format!("bad model header: {header}"))),
        };
        let parse_row = |line: &str, n: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("bad model number: {e}")))?;
            if vals.len() != n {
                return Err(Error::Format(format!(
                    "expected {n} values per row, got {}",
                    vals.len()
                )));
            }
            Ok(vals)
        };
        let mu_line = lines
            .next()
            .ok_or_else(|| Error::Format("missing mu row".into()))?;
        let mu = Array1::from_vec(parse_row(mu_line, FEATURE_DIM)?);
        let mut sigma = Array2::zeros((FEATURE_DIM, FEATURE_DIM));
        for i in 0..FEATURE_DIM {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing sigma row {i}")))?;
            let row = parse_row(line, FEATURE_DIM)?;
            for (j, v) in row.into_iter().enumerate() {
                sigma[[i, j]] = v;
            }
        }
        Ok(NiqeModel {
            mu,
            sigma,
            patch_size,
            sharpness_fraction,
        })
    }
}
