//! 4x RRDB generator: shallow head, residual-in-residual dense trunk, two
//! nearest+conv upsample stages, reconstruction tail.

use ndarray::s;

use crate::autodiff::{kernels, Graph, NodeId};
use crate::error::{config_err, Result};
use crate::nn::{Bind, Conv2d, ParamReg};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub num_blocks: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub residual_scale: f64,
    pub lrelu_slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        // 23-block shape for full runs, see presets in the training config
        GeneratorConfig {
            num_blocks: 23,
            base_channels: 64,
            growth_channels: 32,
            residual_scale: 0.2,
            lrelu_slope: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(config_err!("num_blocks must be >= 1"));
        }
        if self.growth_channels < 1 || self.base_channels < self.growth_channels {
            return Err(config_err!(
                "need base_channels >= growth_channels >= 1, got {} / {}",
                self.base_channels,
                self.growth_channels
            ));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return Err(config_err!("residual_scale must be in (0, 1]"));
        }
        Ok(())
    }

    /// Total parameter count (weights + biases) implied by this config.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize| cin * cout * 9 + cout;
        let (b, g) = (self.base_channels, self.growth_channels);
        let rdb = conv(b, g) + conv(b + g, g) + conv(b + 2 * g, g) + conv(b + 3 * g, g) + conv(b + 4 * g, b);
        conv(3, b)
            + self.num_blocks * 3 * rdb
            + conv(b, b) // conv_body
            + conv(b, b) // conv_up1
            + conv(b, b) // conv_up2
            + conv(b, b) // conv_hr
            + conv(b, 3)
    }
}

fn concat_channels<S: Scalar>(parts: &[&Tensor<S>]) -> Tensor<S> {
    let (b, _, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().1).sum();
    let mut out = Tensor::<S>::zeros((b, total, h, w));
    let mut at = 0;
    for p in parts {
        let c = p.dim().1;
        out.slice_mut(s![.., at..at + c, .., ..]).assign(p);
        at += c;
    }
    out
}

/// One dense block: five 3x3 convs over growing concatenations, residually
/// added back with the residual scale. Zeroing conv5 makes it an exact
/// identity.
#[derive(Debug, Clone)]
pub struct ResidualDenseBlock<S: Scalar> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub conv3: Conv2d<S>,
    pub conv4: Conv2d<S>,
    pub conv5: Conv2d<S>,
    residual_scale: f64,
    slope: f64,
}

impl<S: Scalar> ResidualDenseBlock<S> {
    fn init(cfg: &GeneratorConfig, rng: &mut Rng) -> Self {
        let (b, g) = (cfg.base_channels, cfg.growth_channels);
        // the 0.1 init damping of the RRDB lineage
        let mk = |cin, cout, rng: &mut Rng| Conv2d::init(cin, cout, 3, 1, 1, 0.1, rng);
        ResidualDenseBlock {
            conv1: mk(b, g, rng),
            conv2: mk(b + g, g, rng),
            conv3: mk(b + 2 * g, g, rng),
            conv4: mk(b + 3 * g, g, rng),
            conv5: mk(b + 4 * g, b, rng),
            residual_scale: cfg.residual_scale,
            slope: cfg.lrelu_slope,
        }
    }

    pub fn forward(&mut self, g: &mut Graph<S>, bind: &mut Bind, name: &str, x: NodeId) -> NodeId {
        let a1 = self.conv1.forward(g, bind, &format!("{name}.conv1"), x);
        let x1 = g.leaky_relu(a1, self.slope);
        let c1 = g.concat_c(&[x, x1]);
        let a2 = self.conv2.forward(g, bind, &format!("{name}.conv2"), c1);
        let x2 = g.leaky_relu(a2, self.slope);
        let c2 = g.concat_c(&[x, x1, x2]);
        let a3 = self.conv3.forward(g, bind, &format!("{name}.conv3"), c2);
        let x3 = g.leaky_relu(a3, self.slope);
        let c3 = g.concat_c(&[x, x1, x2, x3]);
        let a4 = self.conv4.forward(g, bind, &format!("{name}.conv4"), c3);
        let x4 = g.leaky_relu(a4, self.slope);
        let c4 = g.concat_c(&[x, x1, x2, x3, x4]);
        let x5 = self.conv5.forward(g, bind, &format!("{name}.conv5"), c4);
        g.add_scaled(x, x5, self.residual_scale)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Tensor<S> {
        let lrelu = |t: Tensor<S>| {
            let sl = S::from_f64(self.slope);
            t.mapv(|v| if v > S::zero() { v } else { v * sl })
        };
        let cat = |parts: &[&Tensor<S>]| concat_channels(parts);
        let x1 = lrelu(self.conv1.infer(x));
        let x2 = lrelu(self.conv2.infer(&cat(&[x, &x1])));
        let x3 = lrelu(self.conv3.infer(&cat(&[x, &x1, &x2])));
        let x4 = lrelu(self.conv4.infer(&cat(&[x, &x1, &x2, &x3])));
        let x5 = self.conv5.infer(&cat(&[x, &x1, &x2, &x3, &x4]));
        let mut out = x.clone();
        out.scaled_add(S::from_f64(self.residual_scale), &x5);
        out
    }
}

/// Residual-in-residual: three dense blocks chained, the whole chain added
/// back with the residual scale.
#[derive(Debug, Clone)]
pub struct Rrdb<S: Scalar> {
    pub blocks: [ResidualDenseBlock<S>; 3],
    residual_scale: f64,
}

impl<S: Scalar> Rrdb<S> {
    fn init(cfg: &GeneratorConfig, rng: &mut Rng) -> Self {
        Rrdb {
            blocks: [
                ResidualDenseBlock::init(cfg, rng),
                ResidualDenseBlock::init(cfg, rng),
                ResidualDenseBlock::init(cfg, rng),
            ],
            residual_scale: cfg.residual_scale,
        }
    }

    pub fn forward(&mut self, g: &mut Graph<S>, bind: &mut Bind, name: &str, x: NodeId) -> NodeId {
        let mut out = x;
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            out = blk.forward(g, bind, &format!("{name}.rdb{i}"), out);
        }
        g.add_scaled(x, out, self.residual_scale)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Tensor<S> {
        let mut out = self.blocks[0].infer(x);
        out = self.blocks[1].infer(&out);
        out = self.blocks[2].infer(&out);
        let mut res = x.clone();
        res.scaled_add(S::from_f64(self.residual_scale), &out);
        res
    }
}

#[derive(Debug, Clone)]
pub struct Generator<S: Scalar> {
    pub cfg: GeneratorConfig,
    pub conv_first: Conv2d<S>,
    pub body: Vec<Rrdb<S>>,
    pub conv_body: Conv2d<S>,
    pub conv_up1: Conv2d<S>,
    pub conv_up2: Conv2d<S>,
    pub conv_hr: Conv2d<S>,
    pub conv_last: Conv2d<S>,
}

impl<S: Scalar> Generator<S> {
    pub fn init(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.base_channels;
        let mut rng = rng.derive(0x6e67);
        let body = (0..cfg.num_blocks).map(|_| Rrdb::init(cfg, &mut rng)).collect();
        Ok(Generator {
            cfg: cfg.clone(),
            conv_first: Conv2d::init(3, b, 3, 1, 1, 1.0, &mut rng),
            body,
            conv_body: Conv2d::init(b, b, 3, 1, 1, 1.0, &mut rng),
            conv_up1: Conv2d::init(b, b, 3, 1, 1, 1.0, &mut rng),
            conv_up2: Conv2d::init(b, b, 3, 1, 1, 1.0, &mut rng),
            conv_hr: Conv2d::init(b, b, 3, 1, 1, 1.0, &mut rng),
            conv_last: Conv2d::init(b, 3, 3, 1, 1, 1.0, &mut rng),
        })
    }

    /// Record the forward pass on a graph; output is raw image-space values
    /// at 4x the input resolution (clamping happens at save time).
    pub fn forward(&mut self, g: &mut Graph<S>, bind: &mut Bind, x: NodeId) -> NodeId {
        let slope = self.cfg.lrelu_slope;
        let feat = self.conv_first.forward(g, bind, "g.conv_first", x);
        let mut t = feat;
        for (i, blk) in self.body.iter_mut().enumerate() {
            t = blk.forward(g, bind, &format!("g.body.{i}"), t);
        }
        let body_feat = self.conv_body.forward(g, bind, "g.conv_body", t);
        let fused = g.add(feat, body_feat);
        let u1 = g.upsample_nearest2(fused);
        let c1 = self.conv_up1.forward(g, bind, "g.conv_up1", u1);
        let f1 = g.leaky_relu(c1, slope);
        let u2 = g.upsample_nearest2(f1);
        let c2 = self.conv_up2.forward(g, bind, "g.conv_up2", u2);
        let f2 = g.leaky_relu(c2, slope);
        let hr = self.conv_hr.forward(g, bind, "g.conv_hr", f2);
        let fh = g.leaky_relu(hr, slope);
        self.conv_last.forward(g, bind, "g.conv_last", fh)
    }

    /// Plain forward without a graph.
    pub fn infer(&self, x: &Tensor<S>) -> Tensor<S> {
        let slope = S::from_f64(self.cfg.lrelu_slope);
        let lrelu = |t: Tensor<S>| t.mapv(|v| if v > S::zero() { v } else { v * slope });
        let feat = self.conv_first.infer(x);
        let mut t = feat.clone();
        for blk in &self.body {
            t = blk.infer(&t);
        }
        let mut fused = self.conv_body.infer(&t);
        fused += &feat;
        let f1 = lrelu(self.conv_up1.infer(&kernels::upsample_nearest2(&fused)));
        let f2 = lrelu(self.conv_up2.infer(&kernels::upsample_nearest2(&f1)));
        let fh = lrelu(self.conv_hr.infer(&f2));
        self.conv_last.infer(&fh)
    }

    /// All trainable tensors in declaration order with their registry names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        fn conv<'a, S: Scalar>(out: &mut Vec<(String, &'a Tensor<S>)>, name: &str, c: &'a Conv2d<S>) {
            out.push((format!("{name}.w"), &c.weight));
            out.push((format!("{name}.b"), &c.bias));
        }
        conv(&mut out, "g.conv_first", &self.conv_first);
        for (i, blk) in self.body.iter().enumerate() {
            for (j, rdb) in blk.blocks.iter().enumerate() {
                let base = format!("g.body.{i}.rdb{j}");
                conv(&mut out, &format!("{base}.conv1"), &rdb.conv1);
                conv(&mut out, &format!("{base}.conv2"), &rdb.conv2);
                conv(&mut out, &format!("{base}.conv3"), &rdb.conv3);
                conv(&mut out, &format!("{base}.conv4"), &rdb.conv4);
                conv(&mut out, &format!("{base}.conv5"), &rdb.conv5);
            }
        }
        conv(&mut out, "g.conv_body", &self.conv_body);
        conv(&mut out, "g.conv_up1", &self.conv_up1);
        conv(&mut out, "g.conv_up2", &self.conv_up2);
        conv(&mut out, "g.conv_hr", &self.conv_hr);
        conv(&mut out, "g.conv_last", &self.conv_last);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        fn conv<'a, S: Scalar>(
            out: &mut Vec<(String, &'a mut Tensor<S>)>,
            name: &str,
            c: &'a mut Conv2d<S>,
        ) {
            out.push((format!("{name}.w"), &mut c.weight));
            out.push((format!("{name}.b"), &mut c.bias));
        }
        conv(&mut out, "g.conv_first", &mut self.conv_first);
        for (i, blk) in self.body.iter_mut().enumerate() {
            for (j, rdb) in blk.blocks.iter_mut().enumerate() {
                let base = format!("g.body.{i}.rdb{j}");
                conv(&mut out, &format!("{base}.conv1"), &mut rdb.conv1);
                conv(&mut out, &format!("{base}.conv2"), &mut rdb.conv2);
                conv(&mut out, &format!("{base}.conv3"), &mut rdb.conv3);
                conv(&mut out, &format!("{base}.conv4"), &mut rdb.conv4);
                conv(&mut out, &format!("{base}.conv5"), &mut rdb.conv5);
            }
        }
        conv(&mut out, "g.conv_body", &mut self.conv_body);
        conv(&mut out, "g.conv_up1", &mut self.conv_up1);
        conv(&mut out, "g.conv_up2", &mut self.conv_up2);
        conv(&mut out, "g.conv_hr", &mut self.conv_hr);
        conv(&mut out, "g.conv_last", &mut self.conv_last);
        out
    }

    /// Graph forward with trainable registration; convenience for the
    /// training loop.
    pub fn forward_train(&mut self, g: &mut Graph<S>, reg: &mut ParamReg, x: NodeId) -> NodeId {
        let mut bind = Bind::Train(reg);
        self.forward(g, &mut bind, x)
    }
}
