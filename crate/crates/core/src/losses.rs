//! Relativistic per-pixel adversarial losses, their two-scale aggregation,
//! and the L1/perceptual terms of the generator objective.
//!
//! With C the raw logit map, the two-argument discriminator is
//! D(a, b) = sigmoid(C(a) - E[C(b)]) where the mean runs over batch and
//! pixels of the opposing map. Both adversarial losses are binary
//! cross-entropies over that construction, reported as per-pixel means so the
//! scale weights stay resolution-independent.

use crate::autodiff::{kernels, Graph, NodeId};
use crate::error::{config_err, shape_err, Result};
use crate::nn::{Bind, Conv2d};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// Weight of the full-resolution discriminator.
    pub lambda1: f64,
    /// Weight of the 2x-downsampled discriminator.
    pub lambda2: f64,
    /// L1 weight.
    pub eta: f64,
    pub perceptual_weight: f64,
    pub adversarial_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // the published {1, 1, 0.1} triple for L1/perceptual/GAN, with
        // per-discriminator weights {1, 1}
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            eta: 1.0,
            perceptual_weight: 1.0,
            adversarial_weight: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.eta,
            self.perceptual_weight,
            self.adversarial_weight,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config_err!("loss weights must be finite and >= 0"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(config_err!("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

fn check_same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_err!(
            "logit maps must match: {:?} vs {:?}",
            a.dim(),
            b.dim()
        ));
    }
    Ok(())
}

/// sigmoid(c_a - mean(c_b)) elementwise; the mean runs over all of c_b.
pub fn relativistic_map<S: Scalar>(c_a: &Tensor<S>, c_b: &Tensor<S>) -> Result<Tensor<S>> {
    check_same_shape(c_a, c_b)?;
    let n = S::from_f64(c_b.len() as f64);
    let mu = c_b.iter().fold(S::zero(), |a, &v| a + v) / n;
    Ok(c_a.mapv(|v| kernels::sigmoid(v - mu)))
}

/// L_D = mean[-log D(r, f)] + mean[-log(1 - D(f, r))], per-pixel mean.
pub fn discriminator_loss_graph<S: Scalar>(g: &mut Graph<S>, c_r: NodeId, c_f: NodeId) -> NodeId {
    let mu_f = g.mean_all(c_f);
    let mu_r = g.mean_all(c_r);
    let z_r = g.sub_scalar_node(c_r, mu_f);
    let z_f = g.sub_scalar_node(c_f, mu_r);
    let neg_zr = g.scale(z_r, -1.0);
    let real_term = g.softplus(neg_zr);
    let fake_term = g.softplus(z_f);
    let m_real = g.mean_all(real_term);
    let m_fake = g.mean_all(fake_term);
    g.add(m_real, m_fake)
}

/// L_G = mean[-log(1 - D(r, f))] + mean[-log D(f, r)]; the mirrored form.
pub fn generator_adversarial_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    c_r: NodeId,
    c_f: NodeId,
) -> NodeId {
    let mu_f = g.mean_all(c_f);
    let mu_r = g.mean_all(c_r);
    let z_r = g.sub_scalar_node(c_r, mu_f);
    let z_f = g.sub_scalar_node(c_f, mu_r);
    let real_term = g.softplus(z_r);
    let neg_zf = g.scale(z_f, -1.0);
    let fake_term = g.softplus(neg_zf);
    let m_fake = g.mean_all(fake_term);
    let m_real = g.mean_all(real_term);
    g.add(m_fake, m_real)
}

pub fn discriminator_loss<S: Scalar>(c_r: &Tensor<S>, c_f: &Tensor<S>) -> Result<S> {
    check_same_shape(c_r, c_f)?;
    let mut g = Graph::new();
    let r = g.leaf(c_r.clone(), false);
    let f = g.leaf(c_f.clone(), false);
    let node = discriminator_loss_graph(&mut g, r, f);
    Ok(g.scalar(node))
}

pub fn generator_adversarial_loss<S: Scalar>(c_r: &Tensor<S>, c_f: &Tensor<S>) -> Result<S> {
    check_same_shape(c_r, c_f)?;
    let mut g = Graph::new();
    let r = g.leaf(c_r.clone(), false);
    let f = g.leaf(c_f.clone(), false);
    let node = generator_adversarial_loss_graph(&mut g, r, f);
    Ok(g.scalar(node))
}

/// lambda1 * normal + lambda2 * sampled.
pub fn total_discriminator_loss<S: Scalar>(
    loss_normal: S,
    loss_sampled: Option<S>,
    w: &LossWeights,
) -> S {
    let l2 = loss_sampled.unwrap_or(S::zero());
    S::from_f64(w.lambda1) * loss_normal + S::from_f64(w.lambda2) * l2
}

/// perceptual_weight * percep + adversarial_weight * (lambda1 * adv_normal +
/// lambda2 * adv_sampled) + eta * l1.
pub fn generator_total_loss<S: Scalar>(
    perceptual: S,
    adv_normal: S,
    adv_sampled: Option<S>,
    l1: S,
    w: &LossWeights,
) -> S {
    let adv = S::from_f64(w.lambda1) * adv_normal
        + S::from_f64(w.lambda2) * adv_sampled.unwrap_or(S::zero());
    S::from_f64(w.perceptual_weight) * perceptual
        + S::from_f64(w.adversarial_weight) * adv
        + S::from_f64(w.eta) * l1
}

pub fn l1_loss_graph<S: Scalar>(g: &mut Graph<S>, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let ad = g.abs(d);
    g.mean_all(ad)
}

pub fn l1_loss<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<S> {
    check_same_shape(a, b)?;
    let n = S::from_f64(a.len() as f64);
    Ok(a.iter()
        .zip(b.iter())
        .fold(S::zero(), |acc, (&x, &y)| acc + (x - y).abs())
        / n)
}

/// PSNR in dB over [0,1] images; pretrain diagnostics only.
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.len() as f64;
    let mse = a
        .iter()
        .zip(b.iter())
        .fold(0.0, |acc, (&x, &y)| acc + ((x - y) * (x - y)).to_f64())
        / n;
    Ok(if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Fixed convolutional pyramid for the perceptual term: stages of
/// conv3x3 -> relu, tapped after each stage, average-pooled between stages.
/// Zero stages degenerate to the identity extractor (the tap is the image).
#[derive(Debug, Clone)]
pub struct FeatureExtractor<S: Scalar> {
    pub convs: Vec<Conv2d<S>>,
    pub tap_weights: Vec<f64>,
}

impl<S: Scalar> FeatureExtractor<S> {
    /// Seeded random pyramid; weights are fixed for the lifetime of a run.
    pub fn random(stages: usize, rng: &mut Rng) -> Self {
        let mut rng = rng.derive(0x7078);
        let mut convs = Vec::new();
        let mut cin = 3;
        for i in 0..stages {
            let cout = 16 << i;
            convs.push(Conv2d::init(cin, cout, 3, 1, 1, 1.0, &mut rng));
            cin = cout;
        }
        let tap_weights = if stages == 0 {
            vec![1.0]
        } else {
            vec![1.0 / stages as f64; stages]
        };
        FeatureExtractor { convs, tap_weights }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("fx.conv{i}.w"), &mut c.weight));
            out.push((format!("fx.conv{i}.b"), &mut c.bias));
        }
        out
    }

    fn taps(&mut self, g: &mut Graph<S>, x: NodeId) -> Vec<NodeId> {
        if self.convs.is_empty() {
            return vec![x];
        }
        let mut taps = Vec::new();
        let mut cur = x;
        let n = self.convs.len();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            let mut bind = Bind::Frozen;
            let c = conv.forward(g, &mut bind, "fx", cur);
            let a = g.relu(c);
            taps.push(a);
            if i + 1 < n {
                cur = g.avg_pool2(a);
            }
        }
        taps
    }
}

/// Sum over tap layers of weighted mean absolute feature differences.
pub fn perceptual_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    fx: &mut FeatureExtractor<S>,
    sr: NodeId,
    hr: NodeId,
) -> NodeId {
    let taps_sr = fx.taps(g, sr);
    let taps_hr = fx.taps(g, hr);
    let mut total: Option<NodeId> = None;
    for ((a, b), w) in taps_sr.iter().zip(taps_hr.iter()).zip(fx.tap_weights.clone()) {
        let term = l1_loss_graph(g, *a, *b);
        total = Some(match total {
            None => g.scale(term, w),
            Some(t) => g.add_scaled(t, term, w),
        });
    }
    total.expect("at least one tap")
}

pub fn perceptual_loss<S: Scalar>(
    fx: &mut FeatureExtractor<S>,
    sr: &Tensor<S>,
    hr: &Tensor<S>,
) -> Result<S> {
    check_same_shape(sr, hr)?;
    let mut g = Graph::new();
    let a = g.leaf(sr.clone(), false);
    let b = g.leaf(hr.clone(), false);
    let node = perceptual_loss_graph(&mut g, fx, a, b);
    Ok(g.scalar(node))
}
