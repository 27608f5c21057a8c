use std::path::{Path, PathBuf};

use attnsr_core::degradation::DegradationConfig;
use attnsr_core::imageio;
use attnsr_core::training::{
    self, checkpoint, gan_train_step, init_state, load_checkpoint, pretrain_step, save_checkpoint,
    Mode, TrainConfig, METRICS_HEADER,
};

fn make_corpus(dir: &Path, n: usize) {
    for i in 0..n {
        let img = attnsr_core::synthimg::generate(96, 2000 + i as u64);
        imageio::save_image(&img, dir.join(format!("img_{i:02}.png"))).unwrap();
    }
}

fn tiny_config(root: &Path, mode: Mode) -> TrainConfig {
    let data = root.join("corpus");
    std::fs::create_dir_all(&data).unwrap();
    make_corpus(&data, 4);
    let deg = root.join("deg.toml");
    std::fs::write(&deg, DegradationConfig::benign().to_toml_string()).unwrap();
    TrainConfig {
        mode,
        pretrain_iterations: 2,
        total_iterations: 4,
        learning_rate: 1e-3,
        batch_size: 2,
        hr_patch_size: 64,
        seed: 11,
        checkpoint_interval: 3,
        checkpoint_dir: root.join("ckpt").to_string_lossy().into_owned(),
        metrics_log: root.join("metrics.csv").to_string_lossy().into_owned(),
        dataset_dir: data.to_string_lossy().into_owned(),
        degradation_config: deg.to_string_lossy().into_owned(),
        g_num_blocks: 1,
        g_base_channels: 16,
        g_growth_channels: 8,
        d_channels: 8,
        d_num_levels: 2,
        perceptual_stages: 1,
        ..TrainConfig::default()
    }
}

fn weights_fingerprint(state: &training::TrainState) -> Vec<u32> {
    let mut out = Vec::new();
    for (_, t) in state.generator.named_params() {
        out.extend(t.iter().map(|v| v.to_bits()));
    }
    for (_, t) in state.d1.named_params("d1") {
        out.extend(t.iter().map(|v| v.to_bits()));
    }
    if let Some(d2) = &state.d2 {
        for (_, t) in d2.named_params("d2") {
            out.extend(t.iter().map(|v| v.to_bits()));
        }
    }
    out
}

fn batch_for(cfg: &TrainConfig, it: u64) -> (ndarray::Array4<f32>, ndarray::Array4<f32>) {
    let ds = training::dataset::Dataset::load_dir(&cfg.dataset_dir).unwrap();
    let deg = cfg.degradation().unwrap();
    ds.batch(
        cfg.seed,
        it * cfg.batch_size as u64,
        cfg.batch_size,
        cfg.hr_patch_size,
        cfg.use_hflip,
        &deg,
    )
    .unwrap()
}

#[test]
fn pretrain_step_changes_generator_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Multi);
    let mut state = init_state(&cfg).unwrap();
    let before_d: Vec<u32> = state
        .d1
        .named_params("d1")
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let before_g: Vec<u32> = state
        .generator
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let (lr, hr) = batch_for(&cfg, 0);
    let l1 = pretrain_step(&mut state, &lr, &hr, &cfg).unwrap();
    assert!(l1.is_finite() && l1 > 0.0);
    let after_g: Vec<u32> = state
        .generator
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let after_d: Vec<u32> = state
        .d1
        .named_params("d1")
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    assert_ne!(before_g, after_g, "generator weights must move");
    assert_eq!(before_d, after_d, "discriminator untouched in pretrain");
}

#[test]
fn zero_learning_rate_keeps_weights_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path(), Mode::Single);
    cfg.learning_rate = 0.0;
    let mut state = init_state(&cfg).unwrap();
    let before = weights_fingerprint(&state);
    let (lr, hr) = batch_for(&cfg, 0);
    pretrain_step(&mut state, &lr, &hr, &cfg).unwrap();
    assert_eq!(before, weights_fingerprint(&state));
}

#[test]
fn gan_step_mode_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Multi);
    let mut state = init_state(&cfg).unwrap();
    let (lr, hr) = batch_for(&cfg, 0);

    let g_before: Vec<u32> = state
        .generator
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let d1_before: Vec<u32> = state
        .d1
        .named_params("d1")
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let d2_before: Vec<u32> = state
        .d2
        .as_ref()
        .unwrap()
        .named_params("d2")
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let metrics = gan_train_step(&mut state, &lr, &hr, &cfg).unwrap();
    assert!(metrics.l_d1 > 0.0 && metrics.l_g_total.is_finite());
    assert!(metrics.l_d2 > 0.0, "multi mode trains the sampled scale");
    let g_after: Vec<u32> = state
        .generator
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let d1_after: Vec<u32> = state
        .d1
        .named_params("d1")
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let d2_after: Vec<u32> = state
        .d2
        .as_ref()
        .unwrap()
        .named_params("d2")
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    assert_ne!(g_before, g_after);
    assert_ne!(d1_before, d1_after);
    assert_ne!(d2_before, d2_after);

    // single mode: no d2 state at all
    let tmp2 = tempfile::tempdir().unwrap();
    let cfg_s = tiny_config(tmp2.path(), Mode::Single);
    let mut state_s = init_state(&cfg_s).unwrap();
    assert!(state_s.d2.is_none());
    let (lr, hr) = batch_for(&cfg_s, 0);
    let m = gan_train_step(&mut state_s, &lr, &hr, &cfg_s).unwrap();
    assert_eq!(m.l_d2, 0.0);
}

#[test]
fn full_run_writes_log_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Multi);
    let report = training::train(&cfg, None).unwrap();
    assert_eq!(report.final_iteration, 6);
    assert_eq!(report.rows_written, 6);
    // interval 3 with total 6: checkpoints at 3 and 6
    assert_eq!(report.checkpoints.len(), 2);
    let log = std::fs::read_to_string(&cfg.metrics_log).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER);
    assert_eq!(lines.count(), 6);
}

#[test]
fn two_runs_are_bit_identical() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let cfg_a = tiny_config(tmp_a.path(), Mode::Multi);
    let mut cfg_b = tiny_config(tmp_b.path(), Mode::Multi);
    // point run B at run A's corpus so the data matches exactly
    cfg_b.dataset_dir = cfg_a.dataset_dir.clone();
    cfg_b.degradation_config = cfg_a.degradation_config.clone();
    let ra = training::train(&cfg_a, None).unwrap();
    let rb = training::train(&cfg_b, None).unwrap();
    let sa = load_checkpoint(ra.checkpoints.last().unwrap(), &cfg_a).unwrap();
    let sb = load_checkpoint(rb.checkpoints.last().unwrap(), &cfg_b).unwrap();
    assert_eq!(weights_fingerprint(&sa), weights_fingerprint(&sb));
}

#[test]
fn resume_reproduces_uninterrupted_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Multi);
    let full = training::train(&cfg, None).unwrap();
    let full_final = full.checkpoints.last().unwrap();

    // resume from the mid-run checkpoint in a fresh output location
    let mid: PathBuf = full.checkpoints[0].clone();
    let mut cfg2 = cfg.clone();
    cfg2.checkpoint_dir = tmp.path().join("ckpt_resume").to_string_lossy().into_owned();
    cfg2.metrics_log = tmp.path().join("metrics_resume.csv").to_string_lossy().into_owned();
    let resumed = training::train(&cfg2, Some(&mid)).unwrap();
    let resumed_final = resumed.checkpoints.last().unwrap();

    let a = std::fs::read(full_final).unwrap();
    let b = std::fs::read(resumed_final).unwrap();
    assert_eq!(a, b, "resumed checkpoint must be bit-identical");
}

#[test]
fn checkpoint_roundtrip_and_tensor_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Single);
    let mut state = init_state(&cfg).unwrap();
    let (lr, hr) = batch_for(&cfg, 0);
    pretrain_step(&mut state, &lr, &hr, &cfg).unwrap();
    gan_train_step(&mut state, &lr, &hr, &cfg).unwrap();
    let path = tmp.path().join("state.ckpt");
    save_checkpoint(&state, &cfg, &path).unwrap();
    let loaded = load_checkpoint(&path, &cfg).unwrap();
    assert_eq!(weights_fingerprint(&state), weights_fingerprint(&loaded));
    assert_eq!(state.iteration, loaded.iteration);
    assert_eq!(state.adam_g.t, loaded.adam_g.t);
    for (name, m) in &state.adam_g.m {
        assert_eq!(m, &loaded.adam_g.m[name]);
    }

    // single mode: no d2 tensors in the container
    let (_, tensors) = checkpoint::read_checkpoint(&path).unwrap();
    assert!(tensors.iter().all(|t| !t.name.starts_with("d2.")));
    assert!(tensors.iter().all(|t| !t.name.starts_with("opt_d2.")));

    // the generator tensor set is exactly what the config implies
    let fresh = attnsr_core::generator::Generator::<f32>::init(
        &cfg.gen_config(),
        &mut attnsr_core::rng::Rng::new(0),
    )
    .unwrap();
    let want: std::collections::BTreeSet<String> =
        fresh.named_params().iter().map(|(n, _)| n.clone()).collect();
    let got: std::collections::BTreeSet<String> = tensors
        .iter()
        .filter(|t| t.name.starts_with("g."))
        .map(|t| t.name.clone())
        .collect();
    assert_eq!(want, got);
}

#[test]
fn registered_names_match_named_params() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Multi);
    let mut state = init_state(&cfg).unwrap();
    let (lr, hr) = batch_for(&cfg, 0);

    let mut g = attnsr_core::autodiff::Graph::new();
    let mut reg = attnsr_core::nn::ParamReg::new();
    let x = g.leaf(lr, false);
    state.generator.forward_train(&mut g, &mut reg, x);
    let reg_names: std::collections::BTreeSet<String> =
        reg.entries().iter().map(|(n, _)| n.clone()).collect();
    let param_names: std::collections::BTreeSet<String> = state
        .generator
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    assert_eq!(reg_names, param_names);

    let mut g = attnsr_core::autodiff::Graph::new();
    let mut reg = attnsr_core::nn::ParamReg::new();
    let x = g.leaf(hr, false);
    let mut bind = attnsr_core::nn::Bind::Train(&mut reg);
    state.d1.forward(&mut g, &mut bind, "d1", x).unwrap();
    let reg_names: std::collections::BTreeSet<String> =
        reg.entries().iter().map(|(n, _)| n.clone()).collect();
    let param_names: std::collections::BTreeSet<String> = state
        .d1
        .named_params("d1")
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    assert_eq!(reg_names, param_names);
}

#[test]
fn resume_with_wrong_mode_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Single);
    let state = init_state(&cfg).unwrap();
    let path = tmp.path().join("single.ckpt");
    save_checkpoint(&state, &cfg, &path).unwrap();
    let mut cfg_multi = cfg.clone();
    cfg_multi.mode = Mode::Multi;
    assert!(load_checkpoint(&path, &cfg_multi).is_err());
}

#[test]
fn paper_scale_values_roundtrip_through_config() {
    let text = r#"
mode = "multi"
pretrain_iterations = 0
total_iterations = 200000
learning_rate = 1e-4
batch_size = 48
hr_patch_size = 256
g_num_blocks = 23
g_base_channels = 64
g_growth_channels = 32
d_channels = 64
d_num_levels = 3
"#;
    let cfg: TrainConfig = toml::from_str(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.learning_rate, 1e-4);
    assert_eq!(cfg.batch_size, 48);
    assert_eq!(cfg.hr_patch_size, 256);
    assert_eq!(cfg.total_iterations, 200_000);
    assert_eq!(cfg.lambda1, 1.0);
    assert_eq!(cfg.lambda2, 1.0);
    assert_eq!(cfg.adversarial_weight, 0.1);

    let bad = format!("{text}\nnot_a_real_key = 3\n");
    let err = toml::from_str::<TrainConfig>(&bad);
    assert!(err.is_err());
    let msg = format!("{}", err.unwrap_err());
    assert!(msg.contains("not_a_real_key"), "error should name the key: {msg}");
}
