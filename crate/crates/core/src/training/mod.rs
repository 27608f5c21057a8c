//! Optimization loop: optional L1-only pretraining followed by alternating
//! discriminator/generator steps, with checkpointing and a CSV metrics log.
//! The whole trajectory is a pure function of (config, seed): sample streams
//! are derived statelessly from the global sample index, so a resumed run
//! reproduces an uninterrupted one bit for bit.

pub mod adam;
pub mod checkpoint;
pub mod dataset;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array1;

use crate::autodiff::Graph;
use crate::degradation::DegradationConfig;
use crate::discriminator::{DiscriminatorConfig, UNetDiscriminator};
use crate::error::{config_err, Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{
    discriminator_loss_graph, generator_adversarial_loss_graph, l1_loss_graph,
    perceptual_loss_graph, FeatureExtractor, LossWeights,
};
use crate::nn::{Bind, ParamReg};
use crate::rng::Rng;
use crate::tensor::Tensor;

use adam::Adam;
use checkpoint::{CheckpointMeta, NamedTensor, FORMAT_VERSION};
use dataset::Dataset;

pub const METRICS_HEADER: &str = "iter,l_d_total,l_d1,l_d2,l_g_adv,l_percep,l_l1,l_g_total";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Multi,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub pretrain_iterations: u64,
    pub total_iterations: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hr_patch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub perceptual_weight: f64,
    pub adversarial_weight: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub checkpoint_dir: String,
    pub metrics_log: String,
    pub dataset_dir: String,
    /// Optional path to a degradation TOML; empty means built-in defaults.
    pub degradation_config: String,
    pub g_num_blocks: usize,
    pub g_base_channels: usize,
    pub g_growth_channels: usize,
    pub g_residual_scale: f64,
    pub d_channels: usize,
    pub d_num_levels: usize,
    pub d_spectral_norm: bool,
    pub d_power_iterations: usize,
    pub use_hflip: bool,
    /// 0 stages means the identity extractor (perceptual == L1 on pixels).
    pub perceptual_stages: usize,
    /// Optional checkpoint with fixed extractor weights; empty means a seeded
    /// random pyramid.
    pub perceptual_weights_file: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // desk-scale defaults; paper-scale values live in configs/paper.toml
        TrainConfig {
            mode: Mode::Multi,
            pretrain_iterations: 200,
            total_iterations: 200,
            learning_rate: 2e-3,
            batch_size: 4,
            hr_patch_size: 64,
            beta1: 0.9,
            beta2: 0.99,
            lambda1: 1.0,
            lambda2: 1.0,
            eta: 1.0,
            perceptual_weight: 1.0,
            adversarial_weight: 0.1,
            seed: 7,
            checkpoint_interval: 100,
            checkpoint_dir: "out/ckpt".into(),
            metrics_log: "out/metrics.csv".into(),
            dataset_dir: "data/corpus".into(),
            degradation_config: String::new(),
            g_num_blocks: 6,
            g_base_channels: 64,
            g_growth_channels: 32,
            g_residual_scale: 0.2,
            d_channels: 16,
            d_num_levels: 3,
            d_spectral_norm: true,
            d_power_iterations: 1,
            use_hflip: true,
            perceptual_stages: 2,
            perceptual_weights_file: String::new(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config().validate()?;
        self.disc_config().validate()?;
        self.loss_weights().validate()?;
        let multiple = 1usize << (self.d_num_levels + 1);
        if self.hr_patch_size % multiple != 0 || self.hr_patch_size % 4 != 0 {
            return Err(config_err!(
                "hr_patch_size {} must be divisible by 4 and by {multiple}",
                self.hr_patch_size
            ));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(config_err!("learning_rate must be finite and >= 0"));
        }
        if self.checkpoint_interval == 0 {
            return Err(config_err!("checkpoint_interval must be >= 1"));
        }
        Ok(())
    }

    pub fn gen_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            num_blocks: self.g_num_blocks,
            base_channels: self.g_base_channels,
            growth_channels: self.g_growth_channels,
            residual_scale: self.g_residual_scale,
            lrelu_slope: 0.2,
        }
    }

    pub fn disc_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.d_channels,
            num_levels: self.d_num_levels,
            spectral_norm: self.d_spectral_norm,
            power_iterations: self.d_power_iterations,
            lrelu_slope: 0.2,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            eta: self.eta,
            perceptual_weight: self.perceptual_weight,
            adversarial_weight: self.adversarial_weight,
        }
    }

    pub fn degradation(&self) -> Result<DegradationConfig> {
        if self.degradation_config.is_empty() {
            Ok(DegradationConfig::default())
        } else {
            DegradationConfig::load(&self.degradation_config)
        }
    }

    pub fn total_schedule(&self) -> u64 {
        self.pretrain_iterations + self.total_iterations
    }
}

pub struct TrainState {
    pub generator: Generator<f32>,
    pub d1: UNetDiscriminator<f32>,
    pub d2: Option<UNetDiscriminator<f32>>,
    pub extractor: FeatureExtractor<f32>,
    pub adam_g: Adam,
    pub adam_d1: Adam,
    pub adam_d2: Option<Adam>,
    pub iteration: u64,
    pub seed: u64,
}

/// Per-iteration loss record; mirrors the metrics CSV columns.
#[derive(Debug, Clone, Copy, Default)]
pub struct Metrics {
    pub l_d_total: f64,
    pub l_d1: f64,
    pub l_d2: f64,
    pub l_g_adv: f64,
    pub l_percep: f64,
    pub l_l1: f64,
    pub l_g_total: f64,
}

impl Metrics {
    fn csv_row(&self, iter: u64) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            iter,
            self.l_d_total,
            self.l_d1,
            self.l_d2,
            self.l_g_adv,
            self.l_percep,
            self.l_l1,
            self.l_g_total
        )
    }

    fn check_finite(&self, iteration: u64) -> Result<()> {
        for (name, v) in [
            ("l_d_total", self.l_d_total),
            ("l_d1", self.l_d1),
            ("l_d2", self.l_d2),
            ("l_g_adv", self.l_g_adv),
            ("l_percep", self.l_percep),
            ("l_l1", self.l_l1),
            ("l_g_total", self.l_g_total),
        ] {
            if !v.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss term {name} at iteration {iteration}"
                )));
            }
        }
        Ok(())
    }
}

pub fn init_state(cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let generator = Generator::init(&cfg.gen_config(), &mut root.derive(1))?;
    let d1 = UNetDiscriminator::init(&cfg.disc_config(), &mut root.derive(2))?;
    let d2 = match cfg.mode {
        Mode::Multi => Some(UNetDiscriminator::init(&cfg.disc_config(), &mut root.derive(3))?),
        Mode::Single => None,
    };
    let extractor = build_extractor(cfg)?;
    let adam = |lr| Adam::new(lr, cfg.beta1, cfg.beta2);
    Ok(TrainState {
        generator,
        d1,
        d2: d2.clone(),
        extractor,
        adam_g: adam(cfg.learning_rate),
        adam_d1: adam(cfg.learning_rate),
        adam_d2: d2.map(|_| adam(cfg.learning_rate)),
        iteration: 0,
        seed: cfg.seed,
    })
}

fn build_extractor(cfg: &TrainConfig) -> Result<FeatureExtractor<f32>> {
    let root = Rng::new(cfg.seed);
    let mut fx = FeatureExtractor::random(cfg.perceptual_stages, &mut root.derive(4));
    if !cfg.perceptual_weights_file.is_empty() {
        let (_, tensors) = checkpoint::read_checkpoint(&cfg.perceptual_weights_file)?;
        let map: BTreeMap<String, NamedTensor> =
            tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        for (name, param) in fx.named_params_mut() {
            let t = map.get(&name).ok_or_else(|| {
                Error::Format(format!("extractor weights file is missing {name}"))
            })?;
            fill_tensor(param, t)?;
        }
    }
    Ok(fx)
}

fn grads_by_name(g: &Graph<f32>, reg: &ParamReg) -> BTreeMap<String, Tensor<f32>> {
    reg.entries()
        .iter()
        .filter_map(|(name, id)| g.grad(*id).map(|t| (name.clone(), t.clone())))
        .collect()
}

fn apply_adam(
    adam: &mut Adam,
    params: Vec<(String, &mut Tensor<f32>)>,
    grads: &BTreeMap<String, Tensor<f32>>,
) {
    let updates: Vec<(&str, &mut Tensor<f32>, &Tensor<f32>)> = params
        .into_iter()
        .filter_map(|(name, p)| {
            grads
                .get(&name)
                .map(|gr| (grads.get_key_value(&name).unwrap().0.as_str(), p, gr))
        })
        .collect();
    adam.step(updates);
}

/// One L1-only generator step; discriminators untouched. Returns the raw L1.
pub fn pretrain_step(
    state: &mut TrainState,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut reg = ParamReg::new();
    let x = g.leaf(lr_batch.clone(), false);
    let sr = state.generator.forward_train(&mut g, &mut reg, x);
    if g.value(sr).dim() != hr_batch.dim() {
        return Err(Error::Shape(format!(
            "generator output {:?} vs HR batch {:?}",
            g.value(sr).dim(),
            hr_batch.dim()
        )));
    }
    let hr = g.leaf(hr_batch.clone(), false);
    let l1 = l1_loss_graph(&mut g, sr, hr);
    let loss = g.scale(l1, cfg.eta);
    g.backward(loss);
    let l1_value = g.scalar(l1) as f64;
    if !l1_value.is_finite() {
        return Err(Error::Train(format!(
            "non-finite loss term l_l1 at iteration {}",
            state.iteration
        )));
    }
    let grads = grads_by_name(&g, &reg);
    apply_adam(&mut state.adam_g, state.generator.named_params_mut(), &grads);
    Ok(l1_value)
}

/// One alternating GAN step: discriminator(s) first with the generator
/// frozen, then the generator with discriminator(s) frozen.
pub fn gan_train_step(
    state: &mut TrainState,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    let weights = cfg.loss_weights();
    let b = lr_batch.dim().0;
    let fake = state.generator.infer(lr_batch);

    // discriminator phase
    let (l_d1, l_d2) = {
        let mut g = Graph::new();
        let mut reg = ParamReg::new();
        let hr = g.leaf(hr_batch.clone(), false);
        let fk = g.leaf(fake.clone(), false);
        let both = g.concat_b(&[hr, fk]);
        let mut bind = Bind::Train(&mut reg);
        let (logits, _) = state.d1.forward(&mut g, &mut bind, "d1", both)?;
        let c_r = g.slice_b(logits, 0, b);
        let c_f = g.slice_b(logits, b, b);
        let l_d1_node = discriminator_loss_graph(&mut g, c_r, c_f);
        let (l_d2_node, _) = match state.d2.as_mut() {
            Some(d2) => {
                let pooled = g.avg_pool2(both);
                let mut bind = Bind::Train(&mut reg);
                let (logits2, _) = d2.forward(&mut g, &mut bind, "d2", pooled)?;
                let c_r2 = g.slice_b(logits2, 0, b);
                let c_f2 = g.slice_b(logits2, b, b);
                (Some(discriminator_loss_graph(&mut g, c_r2, c_f2)), ())
            }
            None => (None, ()),
        };
        let total = match l_d2_node {
            Some(l2) => {
                let a = g.scale(l_d1_node, weights.lambda1);
                g.add_scaled(a, l2, weights.lambda2)
            }
            None => g.scale(l_d1_node, weights.lambda1),
        };
        g.backward(total);
        let grads = grads_by_name(&g, &reg);
        let l_d1_v = g.scalar(l_d1_node) as f64;
        let l_d2_v = l_d2_node.map(|n| g.scalar(n) as f64).unwrap_or(0.0);
        apply_adam(&mut state.adam_d1, state.d1.named_params_mut("d1"), &grads);
        if let (Some(d2), Some(adam_d2)) = (state.d2.as_mut(), state.adam_d2.as_mut()) {
            apply_adam(adam_d2, d2.named_params_mut("d2"), &grads);
        }
        (l_d1_v, l_d2_v)
    };

    // generator phase (discriminators frozen, updated weights)
    let metrics = {
        let mut g = Graph::new();
        let mut reg = ParamReg::new();
        let x = g.leaf(lr_batch.clone(), false);
        let sr = state.generator.forward_train(&mut g, &mut reg, x);
        let hr = g.leaf(hr_batch.clone(), false);
        let both = g.concat_b(&[hr, sr]);
        let mut bind = Bind::Frozen;
        let (logits, _) = state.d1.forward(&mut g, &mut bind, "d1", both)?;
        let c_r = g.slice_b(logits, 0, b);
        let c_f = g.slice_b(logits, b, b);
        let adv1 = generator_adversarial_loss_graph(&mut g, c_r, c_f);
        let adv2 = match state.d2.as_mut() {
            Some(d2) => {
                let pooled = g.avg_pool2(both);
                let mut bind = Bind::Frozen;
                let (logits2, _) = d2.forward(&mut g, &mut bind, "d2", pooled)?;
                let c_r2 = g.slice_b(logits2, 0, b);
                let c_f2 = g.slice_b(logits2, b, b);
                Some(generator_adversarial_loss_graph(&mut g, c_r2, c_f2))
            }
            None => None,
        };
        let percep = perceptual_loss_graph(&mut g, &mut state.extractor, sr, hr);
        let l1 = l1_loss_graph(&mut g, sr, hr);

        let adv_total = match adv2 {
            Some(a2) => {
                let a = g.scale(adv1, weights.lambda1);
                g.add_scaled(a, a2, weights.lambda2)
            }
            None => g.scale(adv1, weights.lambda1),
        };
        let p_term = g.scale(percep, weights.perceptual_weight);
        let pa = g.add_scaled(p_term, adv_total, weights.adversarial_weight);
        let total = g.add_scaled(pa, l1, weights.eta);
        g.backward(total);

        let m = Metrics {
            l_d_total: weights.lambda1 * l_d1 + weights.lambda2 * l_d2,
            l_d1,
            l_d2,
            l_g_adv: g.scalar(adv_total) as f64,
            l_percep: g.scalar(percep) as f64,
            l_l1: g.scalar(l1) as f64,
            l_g_total: g.scalar(total) as f64,
        };
        m.check_finite(state.iteration)?;
        let grads = grads_by_name(&g, &reg);
        apply_adam(&mut state.adam_g, state.generator.named_params_mut(), &grads);
        m
    };
    Ok(metrics)
}

fn tensor_to_named(name: &str, t: &Tensor<f32>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: t.iter().copied().collect(),
    }
}

fn array1_to_named(name: &str, t: &Array1<f32>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: vec![t.len()],
        data: t.to_vec(),
    }
}

fn fill_tensor(param: &mut Tensor<f32>, t: &NamedTensor) -> Result<()> {
    if param.shape() != t.shape.as_slice() {
        return Err(Error::Format(format!(
            "tensor {} has shape {:?}, expected {:?}",
            t.name,
            t.shape,
            param.shape()
        )));
    }
    for (dst, src) in param.iter_mut().zip(t.data.iter()) {
        *dst = *src;
    }
    Ok(())
}

fn fill_array1(param: &mut Array1<f32>, t: &NamedTensor) -> Result<()> {
    if t.shape != vec![param.len()] {
        return Err(Error::Format(format!(
            "tensor {} has shape {:?}, expected [{}]",
            t.name,
            t.shape,
            param.len()
        )));
    }
    for (dst, src) in param.iter_mut().zip(t.data.iter()) {
        *dst = *src;
    }
    Ok(())
}

pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let mut tensors = Vec::new();
    for (name, t) in state.generator.named_params() {
        tensors.push(tensor_to_named(&name, t));
    }
    for (name, t) in state.d1.named_params("d1") {
        tensors.push(tensor_to_named(&name, t));
    }
    for (name, u) in state.d1.sn_states("d1") {
        tensors.push(array1_to_named(&name, u));
    }
    if let Some(d2) = &state.d2 {
        for (name, t) in d2.named_params("d2") {
            tensors.push(tensor_to_named(&name, t));
        }
        for (name, u) in d2.sn_states("d2") {
            tensors.push(array1_to_named(&name, u));
        }
    }
    for (prefix, adam) in [("opt_g", Some(&state.adam_g)), ("opt_d1", Some(&state.adam_d1))]
        .into_iter()
        .chain([("opt_d2", state.adam_d2.as_ref())])
    {
        if let Some(adam) = adam {
            for (name, t) in &adam.m {
                tensors.push(tensor_to_named(&format!("{prefix}.m.{name}"), t));
            }
            for (name, t) in &adam.v {
                tensors.push(tensor_to_named(&format!("{prefix}.v.{name}"), t));
            }
        }
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        iteration: state.iteration,
        mode: match (cfg.mode, state.d2.is_some()) {
            (Mode::Multi, true) => "multi".into(),
            _ => "single".into(),
        },
        seed: state.seed,
        adam_t_g: state.adam_g.t,
        adam_t_d1: state.adam_d1.t,
        adam_t_d2: state.adam_d2.as_ref().map(|a| a.t).unwrap_or(0),
        gen_config: cfg.gen_config(),
        disc_config: Some(cfg.disc_config()),
        perceptual_stages: cfg.perceptual_stages,
        perceptual_weights_file: cfg.perceptual_weights_file.clone(),
    };
    checkpoint::write_checkpoint(path, &meta, &tensors)
}

/// Rebuild a full training state from a checkpoint; optimizer moments, the
/// iteration counter and spectral-norm vectors are restored exactly.
pub fn load_checkpoint(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<TrainState> {
    let (meta, tensors) = checkpoint::read_checkpoint(path)?;
    let map: BTreeMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut state = init_state(cfg)?;
    if meta.mode == "single" && state.d2.is_some() {
        return Err(Error::Config(
            "checkpoint was trained in single mode but config requests multi".into(),
        ));
    }
    if meta.mode == "multi" && state.d2.is_none() {
        return Err(Error::Config(
            "checkpoint was trained in multi mode but config requests single".into(),
        ));
    }
    state.iteration = meta.iteration;
    state.seed = meta.seed;
    let missing = |name: &str| Error::Format(format!("checkpoint is missing tensor {name}"));
    for (name, p) in state.generator.named_params_mut() {
        fill_tensor(p, map.get(&name).ok_or_else(|| missing(&name))?)?;
    }
    for (name, p) in state.d1.named_params_mut("d1") {
        fill_tensor(p, map.get(&name).ok_or_else(|| missing(&name))?)?;
    }
    for (name, u) in state.d1.sn_states_mut("d1") {
        fill_array1(u, map.get(&name).ok_or_else(|| missing(&name))?)?;
    }
    if let Some(d2) = state.d2.as_mut() {
        for (name, p) in d2.named_params_mut("d2") {
            fill_tensor(p, map.get(&name).ok_or_else(|| missing(&name))?)?;
        }
        for (name, u) in d2.sn_states_mut("d2") {
            fill_array1(u, map.get(&name).ok_or_else(|| missing(&name))?)?;
        }
    }
    state.adam_g.t = meta.adam_t_g;
    state.adam_d1.t = meta.adam_t_d1;
    if let Some(a) = state.adam_d2.as_mut() {
        a.t = meta.adam_t_d2;
    }
    for (prefix, adam) in [
        ("opt_g", Some(&mut state.adam_g)),
        ("opt_d1", Some(&mut state.adam_d1)),
    ]
    .into_iter()
    .chain([("opt_d2", state.adam_d2.as_mut())])
    {
        let Some(adam) = adam else { continue };
        for (name, t) in map.range(format!("{prefix}.m.").._range_end(prefix, "m")) {
            let key = name.strip_prefix(&format!("{prefix}.m.")).unwrap().to_string();
            let mut arr = Tensor::zeros(shape4(&t.shape)?);
            fill_tensor(&mut arr, t)?;
            adam.m.insert(key, arr);
        }
        for (name, t) in map.range(format!("{prefix}.v.").._range_end(prefix, "v")) {
            let key = name.strip_prefix(&format!("{prefix}.v.")).unwrap().to_string();
            let mut arr = Tensor::zeros(shape4(&t.shape)?);
            fill_tensor(&mut arr, t)?;
            adam.v.insert(key, arr);
        }
    }
    Ok(state)
}

fn _range_end(prefix: &str, kind: &str) -> String {
    // BTreeMap range end: '.' + 1 == '/'
    format!("{prefix}.{kind}/")
}

fn shape4(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::Format(format!(
            "expected rank-4 tensor, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

/// Generator weights alone, for inference-only consumers.
pub fn load_generator(path: impl AsRef<Path>) -> Result<(Generator<f32>, CheckpointMeta)> {
    let (meta, tensors) = checkpoint::read_checkpoint(path)?;
    let map: BTreeMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut gen = Generator::init(&meta.gen_config, &mut Rng::new(0))?;
    for (name, p) in gen.named_params_mut() {
        let t = map
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
        fill_tensor(p, t)?;
    }
    Ok((gen, meta))
}

/// Discriminators for visualization; errors when the checkpoint has none.
pub fn load_discriminators(
    path: impl AsRef<Path>,
) -> Result<(UNetDiscriminator<f32>, Option<UNetDiscriminator<f32>>, CheckpointMeta)> {
    let (meta, tensors) = checkpoint::read_checkpoint(&path)?;
    let map: BTreeMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let d_cfg = meta
        .disc_config
        .clone()
        .ok_or_else(|| Error::Config("checkpoint has no discriminator config".into()))?;
    if !map.keys().any(|k| k.starts_with("d1.")) {
        return Err(Error::Config(
            "checkpoint contains no discriminator weights (inference-only export)".into(),
        ));
    }
    let mut d1 = UNetDiscriminator::init(&d_cfg, &mut Rng::new(0))?;
    for (name, p) in d1.named_params_mut("d1") {
        let t = map
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
        fill_tensor(p, t)?;
    }
    for (name, u) in d1.sn_states_mut("d1") {
        if let Some(t) = map.get(&name) {
            fill_array1(u, t)?;
        }
    }
    let d2 = if map.keys().any(|k| k.starts_with("d2.")) {
        let mut d2 = UNetDiscriminator::init(&d_cfg, &mut Rng::new(0))?;
        for (name, p) in d2.named_params_mut("d2") {
            let t = map
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
            fill_tensor(p, t)?;
        }
        for (name, u) in d2.sn_states_mut("d2") {
            if let Some(t) = map.get(&name) {
                fill_array1(u, t)?;
            }
        }
        Some(d2)
    } else {
        None
    };
    Ok((d1, d2, meta))
}

pub struct TrainReport {
    pub final_iteration: u64,
    pub checkpoints: Vec<PathBuf>,
    pub rows_written: u64,
}

/// Run the full schedule (pretrain then GAN), appending metrics rows and
/// writing checkpoints every `checkpoint_interval` iterations and at the end.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let deg = cfg.degradation()?;
    let dataset = Dataset::load_dir(&cfg.dataset_dir)?;
    let mut state = match resume {
        Some(path) => load_checkpoint(path, cfg)?,
        None => init_state(cfg)?,
    };
    let total = cfg.total_schedule();
    let log_path = Path::new(&cfg.metrics_log);
    if let Some(parent) = log_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let fresh_log = !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .map_err(|e| Error::io(log_path, e))?;
    if fresh_log {
        writeln!(log, "{METRICS_HEADER}").map_err(|e| Error::io(log_path, e))?;
    }
    let mut checkpoints = Vec::new();
    let mut rows = 0u64;
    while state.iteration < total {
        let it = state.iteration;
        let first_index = it * cfg.batch_size as u64;
        let (lr_b, hr_b) = dataset.batch(
            cfg.seed,
            first_index,
            cfg.batch_size,
            cfg.hr_patch_size,
            cfg.use_hflip,
            &deg,
        )?;
        let metrics = if it < cfg.pretrain_iterations {
            let l1 = pretrain_step(&mut state, &lr_b, &hr_b, cfg)?;
            Metrics {
                l_l1: l1,
                l_g_total: cfg.eta * l1,
                ..Default::default()
            }
        } else {
            gan_train_step(&mut state, &lr_b, &hr_b, cfg)?
        };
        state.iteration += 1;
        writeln!(log, "{}", metrics.csv_row(state.iteration)).map_err(|e| Error::io(log_path, e))?;
        rows += 1;
        if state.iteration % cfg.checkpoint_interval == 0 || state.iteration == total {
            let path =
                Path::new(&cfg.checkpoint_dir).join(format!("ckpt_iter{:06}.ckpt", state.iteration));
            save_checkpoint(&state, cfg, &path)?;
            if checkpoints.last() != Some(&path) {
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainReport {
        final_iteration: state.iteration,
        checkpoints,
        rows_written: rows,
    })
}
