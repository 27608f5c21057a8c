//! Attention U-Net per-pixel discriminator with spectral normalization, plus
//! the two-scale wrapper (full resolution and 2x downsampled input).
//!
//! Encoder: stride-2 4x4 convs widening F -> 2F -> 4F -> 8F. Decoder:
//! bilinear 2x upsampling and 3x3 convs narrowing back, with each skip
//! connection gated by an additive-attention block before being added in.
//! The head keeps the per-pixel contract: two 3x3 convs then a 1x1 conv to
//! one logit channel at input resolution.

use ndarray::Array4;

use crate::autodiff::{kernels, Graph, NodeId};
use crate::error::{config_err, shape_err, Result};
use crate::nn::{Bind, Conv2d};
pub use crate::nn::{power_iteration, spectral_normalize};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DiscriminatorConfig {
    /// Output channels of the first convolution (F in the architecture).
    pub base_channels: usize,
    /// Number of encoder downsamplings; also the number of attention gates.
    pub num_levels: usize,
    pub spectral_norm: bool,
    /// Power iterations per training forward.
    pub power_iterations: usize,
    pub lrelu_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_channels: 64,
            num_levels: 3,
            spectral_norm: true,
            power_iterations: 1,
            lrelu_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 {
            return Err(config_err!("discriminator base_channels must be >= 1"));
        }
        if self.num_levels < 1 {
            return Err(config_err!("discriminator num_levels must be >= 1"));
        }
        if self.spectral_norm && self.power_iterations < 1 {
            return Err(config_err!("power_iterations must be >= 1"));
        }
        Ok(())
    }

    /// Input dims must be divisible by this for a single discriminator.
    pub fn dim_multiple(&self) -> usize {
        1 << self.num_levels
    }
}

/// Raw per-pixel logit map plus the attention coefficient maps recorded at
/// the resolution they were computed at (the gating grid), coarsest first.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub logits: Tensor<f32>,
    pub attention: Vec<Tensor<f32>>,
}

/// Additive attention gate: alpha = sigmoid(psi(relu(Wx x_down + Wg g))),
/// computed on the gating grid and bilinearly upsampled back onto x.
#[derive(Debug, Clone)]
pub struct AttentionGate<S: Scalar> {
    pub wx: Conv2d<S>,
    pub wg: Conv2d<S>,
    pub psi: Conv2d<S>,
}

impl<S: Scalar> AttentionGate<S> {
    pub fn init(x_channels: usize, g_channels: usize, f_int: usize, rng: &mut Rng) -> Self {
        assert!(f_int >= 1);
        // only psi carries a learned bias; the additive branches start as pure
        // projections (their zero biases stay trainable)
        AttentionGate {
            wx: Conv2d::init(x_channels, f_int, 1, 1, 0, 1.0, rng),
            wg: Conv2d::init(g_channels, f_int, 1, 1, 0, 1.0, rng),
            psi: Conv2d::init(f_int, 1, 1, 1, 0, 1.0, rng),
        }
    }

    /// Returns (gated features at x resolution, alpha at gating resolution).
    pub fn forward(
        &mut self,
        g: &mut Graph<S>,
        bind: &mut Bind,
        name: &str,
        x: NodeId,
        gate: NodeId,
    ) -> (NodeId, NodeId) {
        let xd = g.avg_pool2(x);
        let ax = self.wx.forward(g, bind, &format!("{name}.wx"), xd);
        let ag = self.wg.forward(g, bind, &format!("{name}.wg"), gate);
        let sum = g.add(ax, ag);
        let act = g.relu(sum);
        let logit = self.psi.forward(g, bind, &format!("{name}.psi"), act);
        let alpha = g.sigmoid(logit);
        let alpha_up = g.upsample_bilinear2(alpha);
        let gated = g.mul_alpha(x, alpha_up);
        (gated, alpha)
    }

    pub fn infer(&self, x: &Tensor<S>, gate: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (xh, xw) = (x.dim().2, x.dim().3);
        let (gh, gw) = (gate.dim().2, gate.dim().3);
        if (gh, gw) != (xh / 2, xw / 2) {
            return Err(shape_err!(
                "gating signal must be half the skip resolution: {gh}x{gw} vs {xh}x{xw}"
            ));
        }
        let xd = kernels::avg_pool2(x);
        let mut pre = self.wx.infer(&xd);
        pre += &self.wg.infer(gate);
        pre.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
        let alpha = self.psi.infer(&pre).mapv(kernels::sigmoid);
        let alpha_up = kernels::upsample_bilinear2(&alpha);
        let mut gated = x.clone();
        for c in 0..gated.dim().1 {
            let mut lane = gated.slice_mut(ndarray::s![.., c, .., ..]);
            lane *= &alpha_up.slice(ndarray::s![.., 0, .., ..]);
        }
        Ok((gated, alpha))
    }
}

#[derive(Debug, Clone)]
pub struct UNetDiscriminator<S: Scalar> {
    pub cfg: DiscriminatorConfig,
    pub conv_first: Conv2d<S>,
    /// Stride-2 encoder convs, shallow to deep.
    pub enc: Vec<Conv2d<S>>,
    /// Decoder convs, deep to shallow.
    pub dec: Vec<Conv2d<S>>,
    /// One gate per decoder level, deep to shallow.
    pub gates: Vec<AttentionGate<S>>,
    pub conv_hr1: Conv2d<S>,
    pub conv_hr2: Conv2d<S>,
    pub conv_last: Conv2d<S>,
}

impl<S: Scalar> UNetDiscriminator<S> {
    pub fn init(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng.derive(0x6431);
        let f = cfg.base_channels;
        let widths: Vec<usize> = (0..=cfg.num_levels).map(|l| f << l).collect();
        let sn = |c: Conv2d<S>, rng: &mut Rng| {
            if cfg.spectral_norm {
                c.with_spectral_norm(cfg.power_iterations, rng)
            } else {
                c
            }
        };
        let conv_first = Conv2d::init(3, f, 3, 1, 1, 1.0, &mut rng).with_reflect_pad();
        let mut enc = Vec::new();
        for l in 0..cfg.num_levels {
            let c = Conv2d::init(widths[l], widths[l + 1], 4, 2, 1, 1.0, &mut rng).with_reflect_pad();
            enc.push(sn(c, &mut rng));
        }
        let mut dec = Vec::new();
        let mut gates = Vec::new();
        for l in (0..cfg.num_levels).rev() {
            // decoder going from widths[l+1] at the coarse grid up to widths[l]
            let c = Conv2d::init(widths[l + 1], widths[l], 3, 1, 1, 1.0, &mut rng).with_reflect_pad();
            dec.push(sn(c, &mut rng));
            let f_int = (widths[l] / 2).max(1);
            gates.push(AttentionGate::init(widths[l], widths[l + 1], f_int, &mut rng));
        }
        let conv_hr1 = sn(Conv2d::init(f, f, 3, 1, 1, 1.0, &mut rng).with_reflect_pad(), &mut rng);
        let conv_hr2 = sn(Conv2d::init(f, f, 3, 1, 1, 1.0, &mut rng).with_reflect_pad(), &mut rng);
        let conv_last = Conv2d::init(f, 1, 1, 1, 0, 1.0, &mut rng);
        Ok(UNetDiscriminator {
            cfg: cfg.clone(),
            conv_first,
            enc,
            dec,
            gates,
            conv_hr1,
            conv_hr2,
            conv_last,
        })
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.cfg.dim_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(shape_err!(
                "discriminator input {h}x{w} must be divisible by {m}"
            ));
        }
        Ok(())
    }

    /// Graph forward. Returns the logit node and one alpha node per decoder
    /// level, coarsest first, at gating resolution.
    pub fn forward(
        &mut self,
        g: &mut Graph<S>,
        bind: &mut Bind,
        name: &str,
        x: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let (_, _, h, w) = g.value(x).dim();
        self.check_input(h, w)?;
        let slope = self.cfg.lrelu_slope;
        let c0 = self.conv_first.forward(g, bind, &format!("{name}.conv_first"), x);
        let mut skips = vec![g.leaky_relu(c0, slope)];
        for (l, conv) in self.enc.iter_mut().enumerate() {
            let prev = *skips.last().unwrap();
            let e = conv.forward(g, bind, &format!("{name}.enc{l}"), prev);
            skips.push(g.leaky_relu(e, slope));
        }
        let mut alphas = Vec::new();
        let mut cur = skips[self.cfg.num_levels];
        for (di, l) in (0..self.cfg.num_levels).rev().enumerate() {
            let skip = skips[l];
            let (gated, alpha) =
                self.gates[di].forward(g, bind, &format!("{name}.gate{l}"), skip, cur);
            alphas.push(alpha);
            let up = g.upsample_bilinear2(cur);
            let d = self.dec[di].forward(g, bind, &format!("{name}.dec{l}"), up);
            let da = g.leaky_relu(d, slope);
            cur = g.add(da, gated);
        }
        let h1 = self.conv_hr1.forward(g, bind, &format!("{name}.conv_hr1"), cur);
        let h1a = g.leaky_relu(h1, slope);
        let h2 = self.conv_hr2.forward(g, bind, &format!("{name}.conv_hr2"), h1a);
        let h2a = g.leaky_relu(h2, slope);
        let logits = self.conv_last.forward(g, bind, &format!("{name}.conv_last"), h2a);
        Ok((logits, alphas))
    }

    /// Plain forward; logits keep the input's spatial dims, alpha maps are
    /// recorded at gating resolution, coarsest first.
    pub fn infer_full(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
        let (_, _, h, w) = x.dim();
        self.check_input(h, w)?;
        let slope = S::from_f64(self.cfg.lrelu_slope);
        let lrelu = |t: Tensor<S>| t.mapv(|v| if v > S::zero() { v } else { v * slope });
        let mut skips = vec![lrelu(self.conv_first.infer(x))];
        for conv in &self.enc {
            let prev = skips.last().unwrap();
            skips.push(lrelu(conv.infer(prev)));
        }
        let mut alphas = Vec::new();
        let mut cur = skips[self.cfg.num_levels].clone();
        for (di, l) in (0..self.cfg.num_levels).rev().enumerate() {
            let (gated, alpha) = self.gates[di].infer(&skips[l], &cur)?;
            alphas.push(alpha);
            let up = kernels::upsample_bilinear2(&cur);
            let mut d = lrelu(self.dec[di].infer(&up));
            d += &gated;
            cur = d;
        }
        let h1 = lrelu(self.conv_hr1.infer(&cur));
        let h2 = lrelu(self.conv_hr2.infer(&h1));
        Ok((self.conv_last.infer(&h2), alphas))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        fn conv<'a, S: Scalar>(out: &mut Vec<(String, &'a Tensor<S>)>, name: String, c: &'a Conv2d<S>) {
            out.push((format!("{name}.w"), &c.weight));
            out.push((format!("{name}.b"), &c.bias));
        }
        conv(&mut out, format!("{prefix}.conv_first"), &self.conv_first);
        for (l, c) in self.enc.iter().enumerate() {
            conv(&mut out, format!("{prefix}.enc{l}"), c);
        }
        for (di, l) in (0..self.cfg.num_levels).rev().enumerate() {
            let gate = &self.gates[di];
            conv(&mut out, format!("{prefix}.gate{l}.wx"), &gate.wx);
            conv(&mut out, format!("{prefix}.gate{l}.wg"), &gate.wg);
            conv(&mut out, format!("{prefix}.gate{l}.psi"), &gate.psi);
            conv(&mut out, format!("{prefix}.dec{l}"), &self.dec[di]);
        }
        conv(&mut out, format!("{prefix}.conv_hr1"), &self.conv_hr1);
        conv(&mut out, format!("{prefix}.conv_hr2"), &self.conv_hr2);
        conv(&mut out, format!("{prefix}.conv_last"), &self.conv_last);
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        fn conv<'a, S: Scalar>(
            out: &mut Vec<(String, &'a mut Tensor<S>)>,
            name: String,
            c: &'a mut Conv2d<S>,
        ) {
            out.push((format!("{name}.w"), &mut c.weight));
            out.push((format!("{name}.b"), &mut c.bias));
        }
        conv(&mut out, format!("{prefix}.conv_first"), &mut self.conv_first);
        for (l, c) in self.enc.iter_mut().enumerate() {
            conv(&mut out, format!("{prefix}.enc{l}"), c);
        }
        let levels: Vec<usize> = (0..self.cfg.num_levels).rev().collect();
        for (di, (gate, dec)) in self.gates.iter_mut().zip(self.dec.iter_mut()).enumerate() {
            let l = levels[di];
            conv(&mut out, format!("{prefix}.gate{l}.wx"), &mut gate.wx);
            conv(&mut out, format!("{prefix}.gate{l}.wg"), &mut gate.wg);
            conv(&mut out, format!("{prefix}.gate{l}.psi"), &mut gate.psi);
            conv(&mut out, format!("{prefix}.dec{l}"), dec);
        }
        conv(&mut out, format!("{prefix}.conv_hr1"), &mut self.conv_hr1);
        conv(&mut out, format!("{prefix}.conv_hr2"), &mut self.conv_hr2);
        conv(&mut out, format!("{prefix}.conv_last"), &mut self.conv_last);
        out
    }

    /// Spectral-norm u vectors in the same order as layers appear in
    /// `named_params`, for checkpointing.
    pub fn sn_states(&self, prefix: &str) -> Vec<(String, &ndarray::Array1<S>)> {
        let mut out = Vec::new();
        fn grab<'a, S: Scalar>(
            out: &mut Vec<(String, &'a ndarray::Array1<S>)>,
            name: String,
            c: &'a Conv2d<S>,
        ) {
            if let Some(sn) = &c.sn {
                out.push((format!("{name}.sn_u"), &sn.u));
            }
        }
        grab(&mut out, format!("{prefix}.conv_first"), &self.conv_first);
        for (l, c) in self.enc.iter().enumerate() {
            grab(&mut out, format!("{prefix}.enc{l}"), c);
        }
        for (di, l) in (0..self.cfg.num_levels).rev().enumerate() {
            grab(&mut out, format!("{prefix}.dec{l}"), &self.dec[di]);
        }
        grab(&mut out, format!("{prefix}.conv_hr1"), &self.conv_hr1);
        grab(&mut out, format!("{prefix}.conv_hr2"), &self.conv_hr2);
        grab(&mut out, format!("{prefix}.conv_last"), &self.conv_last);
        out
    }

    pub fn sn_states_mut(&mut self, prefix: &str) -> Vec<(String, &mut ndarray::Array1<S>)> {
        let mut out = Vec::new();
        fn grab<'a, S: Scalar>(
            out: &mut Vec<(String, &'a mut ndarray::Array1<S>)>,
            name: String,
            c: &'a mut Conv2d<S>,
        ) {
            if let Some(sn) = &mut c.sn {
                out.push((format!("{name}.sn_u"), &mut sn.u));
            }
        }
        grab(&mut out, format!("{prefix}.conv_first"), &mut self.conv_first);
        for (l, c) in self.enc.iter_mut().enumerate() {
            grab(&mut out, format!("{prefix}.enc{l}"), c);
        }
        let levels: Vec<usize> = (0..self.cfg.num_levels).rev().collect();
        for (di, dec) in self.dec.iter_mut().enumerate() {
            grab(&mut out, format!("{prefix}.dec{}", levels[di]), dec);
        }
        grab(&mut out, format!("{prefix}.conv_hr1"), &mut self.conv_hr1);
        grab(&mut out, format!("{prefix}.conv_hr2"), &mut self.conv_hr2);
        grab(&mut out, format!("{prefix}.conv_last"), &mut self.conv_last);
        out
    }

    /// Every spectral-normalized conv as a (name, weight) pair, for the
    /// high-iteration normalization checks.
    pub fn sn_layers(&self) -> Vec<(String, &Conv2d<S>)> {
        let mut out: Vec<(String, &Conv2d<S>)> = Vec::new();
        for (l, c) in self.enc.iter().enumerate() {
            out.push((format!("enc{l}"), c));
        }
        for (di, l) in (0..self.cfg.num_levels).rev().enumerate() {
            out.push((format!("dec{l}"), &self.dec[di]));
        }
        out.push(("conv_hr1".into(), &self.conv_hr1));
        out.push(("conv_hr2".into(), &self.conv_hr2));
        out.retain(|(_, c)| c.sn.is_some());
        out
    }
}

/// Spec-level forward: logits plus attention maps for one image batch.
pub fn unet_discriminator_forward(
    disc: &UNetDiscriminator<f32>,
    img: &crate::tensor::ImageTensor,
) -> Result<DiscriminatorOutput> {
    let input = to_rgb(&img.data);
    let (logits, attention) = disc.infer_full(&input)?;
    Ok(DiscriminatorOutput { logits, attention })
}

/// Multi-scale forward: full-resolution map and a map of the 2x downsampled
/// input (bilinear, i.e. 2x2 averaging on even dims).
pub fn multiscale_forward(
    d1: &UNetDiscriminator<f32>,
    d2: &UNetDiscriminator<f32>,
    img: &crate::tensor::ImageTensor,
) -> Result<(DiscriminatorOutput, DiscriminatorOutput)> {
    let input = to_rgb(&img.data);
    let (_, _, h, w) = input.dim();
    let need = d1.cfg.dim_multiple() * 2;
    if h % need != 0 || w % need != 0 {
        return Err(shape_err!(
            "multi-scale input {h}x{w} must be divisible by {need}"
        ));
    }
    let (l1, a1) = d1.infer_full(&input)?;
    let half = kernels::avg_pool2(&input);
    let (l2, a2) = d2.infer_full(&half)?;
    Ok((
        DiscriminatorOutput { logits: l1, attention: a1 },
        DiscriminatorOutput { logits: l2, attention: a2 },
    ))
}

fn to_rgb(x: &Tensor<f32>) -> Tensor<f32> {
    if x.dim().1 == 3 {
        return x.clone();
    }
    let (b, _, h, w) = x.dim();
    let mut out = Array4::zeros((b, 3, h, w));
    for c in 0..3 {
        out.slice_mut(ndarray::s![.., c, .., ..])
            .assign(&x.slice(ndarray::s![.., 0, .., ..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use ndarray::Array4;

    fn toy_cfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: 8,
            num_levels: 3,
            spectral_norm: true,
            power_iterations: 1,
            lrelu_slope: 0.2,
        }
    }

    fn rand4(dim: (usize, usize, usize, usize), seed: u64) -> Tensor<f32> {
        let mut rng = crate::rng::Rng::new(seed);
        Array4::from_shape_fn(dim, |_| rng.uniform() as f32)
    }

    #[test]
    fn logits_match_input_dims_and_alpha_counts() {
        let cfg = toy_cfg();
        let mut rng = crate::rng::Rng::new(1);
        let d = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        let x = rand4((1, 3, 64, 64), 2);
        let (logits, alphas) = d.infer_full(&x).unwrap();
        assert_eq!(logits.dim(), (1, 1, 64, 64));
        assert_eq!(alphas.len(), 3);
        // gating grids going up: 8 -> 16 -> 32
        assert_eq!(alphas[0].dim(), (1, 1, 8, 8));
        assert_eq!(alphas[1].dim(), (1, 1, 16, 16));
        assert_eq!(alphas[2].dim(), (1, 1, 32, 32));
        for a in &alphas {
            for &v in a.iter() {
                assert!(v > 0.0 && v < 1.0, "alpha out of (0,1): {v}");
            }
        }
    }

    #[test]
    fn indivisible_dims_error() {
        let cfg = toy_cfg();
        let mut rng = crate::rng::Rng::new(3);
        let d = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        let x = rand4((1, 3, 60, 64), 4);
        assert!(d.infer_full(&x).is_err());
    }

    #[test]
    fn zero_weights_give_constant_logits() {
        let cfg = DiscriminatorConfig { spectral_norm: false, ..toy_cfg() };
        let mut rng = crate::rng::Rng::new(5);
        let mut d = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        for (_, t) in d.named_params_mut("d") {
            t.fill(0.0);
        }
        d.conv_last.bias.fill(0.375);
        let x = rand4((1, 3, 32, 32), 6);
        let (logits, _) = d.infer_full(&x).unwrap();
        for &v in logits.iter() {
            assert!((v - 0.375).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_gate_zero_psi_halves_features() {
        let mut rng = crate::rng::Rng::new(7);
        let mut gate = AttentionGate::<f32>::init(8, 16, 4, &mut rng);
        gate.psi.weight.fill(0.0);
        gate.psi.bias.fill(0.0);
        let x = rand4((1, 8, 16, 16), 8);
        let g = rand4((1, 16, 8, 8), 9);
        let (gated, alpha) = gate.infer(&x, &g).unwrap();
        assert_eq!(alpha.dim(), (1, 1, 8, 8));
        for &v in alpha.iter() {
            assert!((v - 0.5).abs() < 1e-7);
        }
        let err = gated
            .iter()
            .zip(x.iter())
            .map(|(gv, xv)| (gv - 0.5 * xv).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn attention_gate_alpha_shape_for_larger_input() {
        let mut rng = crate::rng::Rng::new(10);
        let gate = AttentionGate::<f32>::init(64, 128, 32, &mut rng);
        let x = rand4((1, 64, 32, 32), 11);
        let g = rand4((1, 128, 16, 16), 12);
        let (gated, alpha) = gate.infer(&x, &g).unwrap();
        assert_eq!(gated.dim(), x.dim());
        assert_eq!(alpha.dim(), (1, 1, 16, 16));
    }

    #[test]
    fn gate_rejects_mismatched_grids() {
        let mut rng = crate::rng::Rng::new(13);
        let gate = AttentionGate::<f32>::init(8, 16, 4, &mut rng);
        let x = rand4((1, 8, 16, 16), 14);
        let g = rand4((1, 16, 16, 16), 15);
        assert!(gate.infer(&x, &g).is_err());
    }

    #[test]
    fn multiscale_shapes() {
        let cfg = toy_cfg();
        let mut rng = crate::rng::Rng::new(16);
        let d1 = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        let d2 = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        let img = crate::tensor::ImageTensor::new(rand4((1, 3, 64, 64), 17)).unwrap();
        let (o1, o2) = multiscale_forward(&d1, &d2, &img).unwrap();
        assert_eq!(o1.logits.dim(), (1, 1, 64, 64));
        assert_eq!(o2.logits.dim(), (1, 1, 32, 32));
    }

    #[test]
    fn multiscale_constant_input_same_weights_same_value() {
        let cfg = toy_cfg();
        let mut rng = crate::rng::Rng::new(18);
        let d1 = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        let d2 = d1.clone();
        let img = crate::tensor::ImageTensor::constant(1, 3, 64, 64, 0.42).unwrap();
        let (o1, o2) = multiscale_forward(&d1, &d2, &img).unwrap();
        let v1 = o1.logits[[0, 0, 32, 32]];
        let spread1 = o1.logits.iter().fold(0.0f32, |a, &v| a.max((v - v1).abs()));
        assert!(spread1 < 1e-4, "full map not constant: {spread1}");
        let v2 = o2.logits[[0, 0, 16, 16]];
        assert!((v1 - v2).abs() < 1e-4, "{v1} vs {v2}");
    }

    #[test]
    fn inference_is_bit_deterministic() {
        let cfg = toy_cfg();
        let mut rng = crate::rng::Rng::new(19);
        let d = UNetDiscriminator::<f32>::init(&cfg, &mut rng).unwrap();
        let x = rand4((2, 3, 32, 32), 20);
        let (l1, a1) = d.infer_full(&x).unwrap();
        let (l2, a2) = d.infer_full(&x).unwrap();
        assert_eq!(l1, l2);
        for (m1, m2) in a1.iter().zip(a2.iter()) {
            assert_eq!(m1, m2);
        }
    }

    #[test]
    fn graph_and_infer_agree() {
        let cfg = toy_cfg();
        let mut rng = crate::rng::Rng::new(21);
        let mut d = UNetDiscriminator::<f64>::init(&cfg, &mut rng).unwrap();
        let x = rand4((1, 3, 32, 32), 22).mapv(|v| v as f64);
        let direct = d.infer_full(&x).unwrap();
        let mut g = Graph::new();
        let xn = g.leaf(x, false);
        let mut bind = Bind::Frozen;
        let (logits, alphas) = d.forward(&mut g, &mut bind, "d", xn).unwrap();
        let err = (g.value(logits) - &direct.0)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-12, "logits diverge: {err}");
        assert_eq!(alphas.len(), direct.1.len());
    }

    #[test]
    fn sn_disabled_vs_enabled_differs_when_sigma_above_one() {
        let mut rng = crate::rng::Rng::new(23);
        let cfg_off = DiscriminatorConfig { spectral_norm: false, ..toy_cfg() };
        let mut d_off = UNetDiscriminator::<f32>::init(&cfg_off, &mut rng).unwrap();
        // craft a weight with top singular value 2 on enc0
        d_off.enc[0].weight.fill(0.0);
        let cols = d_off.enc[0].weight.dim().1 * 16;
        let n = (cols as f32).sqrt();
        for (i, v) in d_off.enc[0]
            .weight
            .slice_mut(ndarray::s![0, .., .., ..])
            .iter_mut()
            .enumerate()
        {
            let _ = i;
            *v = 2.0 / n;
        }
        let mut d_on = d_off.clone();
        let mut u_rng = crate::rng::Rng::new(24);
        for c in [&mut d_on.enc[0]] {
            *c = c.clone().with_spectral_norm(50, &mut u_rng);
        }
        let x = rand4((1, 3, 32, 32), 25);
        let off = d_off.enc[0].infer(&d_off.conv_first.infer(&x));
        let on = d_on.enc[0].infer(&d_on.conv_first.infer(&x));
        let diff = (&off - &on).iter().fold(0.0f32, |a, v| a.max(v.abs()));
        assert!(diff > 1e-4, "normalization had no effect: {diff}");
    }
}
