//! Conv layer with optional spectral normalization, weight init, and the
//! per-step parameter registry that connects layers to the optimizer.

use ndarray::{Array1, Array2, Array4};

use crate::autodiff::{Graph, NodeId, PadMode, SnApplied};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Divide a weight matrix by its top singular value estimated with `iterations`
/// rounds of power iteration started from `u`. Returns the normalized matrix
/// and the updated left vector. A zero matrix is returned unchanged (the sigma
/// estimate is floored at epsilon).
pub fn spectral_normalize<S: Scalar>(
    w: &Array2<S>,
    u: &Array1<S>,
    iterations: usize,
) -> (Array2<S>, Array1<S>) {
    let (sigma, u_new, _v) = power_iteration(w, u, iterations);
    let floor = S::from_f64(1e-12);
    let denom = if sigma > floor { sigma } else { floor };
    (w.mapv(|x| x / denom), u_new)
}

/// Power-iteration estimate of the top singular triplet. `iterations` >= 1
/// refines (u, v); with 0 the current u is kept and only v/sigma are derived.
pub fn power_iteration<S: Scalar>(
    w: &Array2<S>,
    u0: &Array1<S>,
    iterations: usize,
) -> (S, Array1<S>, Array1<S>) {
    let mut u = u0.clone();
    normalize(&mut u);
    let mut v = w.t().dot(&u);
    normalize(&mut v);
    for _ in 1..iterations {
        u = w.dot(&v);
        normalize(&mut u);
        v = w.t().dot(&u);
        normalize(&mut v);
    }
    if iterations >= 1 {
        u = w.dot(&v);
        normalize(&mut u);
    }
    let sigma = u.dot(&w.dot(&v));
    (sigma, u, v)
}

fn normalize<S: Scalar>(v: &mut Array1<S>) {
    let norm = v.iter().fold(S::zero(), |a, &x| a + x * x).sqrt();
    let floor = S::from_f64(1e-12);
    let n = if norm > floor { norm } else { floor };
    v.mapv_inplace(|x| x / n);
}

#[derive(Debug, Clone)]
pub struct SpectralState<S> {
    pub u: Array1<S>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
    pub sn: Option<SpectralState<S>>,
}

/// How a layer participates in a graph: trainable (weights registered for
/// gradients, spectral-norm u advanced) or frozen (constants).
pub enum Bind<'a> {
    Train(&'a mut ParamReg),
    Frozen,
}

impl<S: Scalar> Conv2d<S> {
    /// Kaiming-normal init (leaky-relu gain), weights scaled by `init_scale`,
    /// zero bias.
    pub fn init(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / (1.0 + 0.2 * 0.2) / fan_in).sqrt() * init_scale;
        let weight = Array4::from_shape_fn((cout, cin, k, k), |_| S::from_f64(rng.gauss() * std));
        let bias = Array4::zeros((1, cout, 1, 1));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
            pad_mode: PadMode::Zero,
            sn: None,
        }
    }

    pub fn with_reflect_pad(mut self) -> Self {
        self.pad_mode = PadMode::Reflect;
        self
    }

    pub fn with_spectral_norm(mut self, iterations: usize, rng: &mut Rng) -> Self {
        let cout = self.weight.dim().0;
        let mut u = Array1::from_shape_fn(cout, |_| S::from_f64(rng.gauss()));
        normalize(&mut u);
        self.sn = Some(SpectralState { u, iterations });
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    fn weight_matrix(&self) -> Array2<S> {
        let (cout, cin, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .unwrap()
            .to_owned()
    }

    /// Compute the spectral-norm application for the current weight. In train
    /// mode the persistent u advances by the configured iteration count.
    fn sn_applied(&mut self, train: bool) -> Option<SnApplied<S>> {
        let state = self.sn.as_mut()?;
        let mat = {
            let (cout, cin, k, _) = self.weight.dim();
            self.weight
                .view()
                .into_shape_with_order((cout, cin * k * k))
                .unwrap()
                .to_owned()
        };
        let (sigma, u, v) = if train {
            let out = power_iteration(&mat, &state.u, state.iterations.max(1));
            state.u = out.1.clone();
            out
        } else {
            power_iteration(&mat, &state.u, 0)
        };
        let floor = S::from_f64(1e-12);
        let denom = if sigma > floor { sigma } else { floor };
        let w_normalized = self.weight.mapv(|x| x / denom);
        Some(SnApplied {
            w_normalized,
            sigma: denom,
            u: u.to_vec(),
            v: v.to_vec(),
        })
    }

    pub fn forward(&mut self, g: &mut Graph<S>, bind: &mut Bind, name: &str, x: NodeId) -> NodeId {
        let train = matches!(bind, Bind::Train(_));
        let sn = self.sn_applied(train);
        let (wn, bn) = match bind {
            Bind::Train(reg) => {
                let wn = reg.register(g, format!("{name}.w"), &self.weight);
                let bn = reg.register(g, format!("{name}.b"), &self.bias);
                (wn, bn)
            }
            Bind::Frozen => (g.leaf(self.weight.clone(), false), g.leaf(self.bias.clone(), false)),
        };
        g.conv2d(x, wn, Some(bn), self.stride, self.pad, self.pad_mode, sn)
    }

    /// Plain forward without a graph; frozen spectral-norm semantics.
    pub fn infer(&self, x: &Tensor<S>) -> Tensor<S> {
        let w = match &self.sn {
            Some(state) => {
                let mat = self.weight_matrix();
                let (sigma, _u, _v) = power_iteration(&mat, &state.u, 0);
                let floor = S::from_f64(1e-12);
                let denom = if sigma > floor { sigma } else { floor };
                std::borrow::Cow::Owned(self.weight.mapv(|x| x / denom))
            }
            None => std::borrow::Cow::Borrowed(&self.weight),
        };
        crate::autodiff::kernels::conv2d_forward(
            x,
            &w,
            Some(&self.bias),
            self.stride,
            self.pad,
            self.pad_mode,
        )
    }
}

/// Ordered map from parameter names to their leaf nodes for one recorded step.
#[derive(Default)]
pub struct ParamReg {
    entries: Vec<(String, NodeId)>,
}

impl ParamReg {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<S: Scalar>(&mut self, g: &mut Graph<S>, name: String, value: &Tensor<S>) -> NodeId {
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter {name}"
        );
        let id = g.leaf(value.clone(), true);
        self.entries.push((name, id));
        id
    }

    pub fn entries(&self) -> &[(String, NodeId)] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn svd_top(m: &Array2<f64>) -> f64 {
        let (r, c) = m.dim();
        let dm = nalgebra::DMatrix::from_fn(r, c, |i, j| m[[i, j]]);
        dm.svd(false, false).singular_values[0]
    }

    #[test]
    fn diagonal_matrix_normalizes_to_unit_top_sv() {
        let mut w = Array2::<f64>::zeros((2, 2));
        w[[0, 0]] = 3.0;
        w[[1, 1]] = 1.0;
        let u = Array1::from_vec(vec![0.6, 0.8]);
        let (wn, _u) = spectral_normalize(&w, &u, 50);
        assert!((svd_top(&wn) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn identity_matrix_unchanged() {
        let w = Array2::<f64>::eye(4);
        let u = Array1::from_vec(vec![1.0, 0.5, -0.25, 0.1]);
        let (wn, _) = spectral_normalize(&w, &u, 50);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((wn[[i, j]] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rank_one_matrix_frobenius_norm() {
        // u v^T with |u| = |v| = 2 has sigma_max 4 and Frobenius norm 4,
        // so the normalized matrix has Frobenius norm 1
        let u = [2.0, 0.0, 0.0];
        let v = [0.0, 2.0];
        let w = Array2::from_shape_fn((3, 2), |(i, j)| u[i] * v[j]);
        let seed = Array1::from_vec(vec![0.3, 0.9, -0.1]);
        let (wn, _) = spectral_normalize(&w, &seed, 50);
        let fro = wn.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((fro - 1.0).abs() < 1e-3, "fro {fro}");
    }

    #[test]
    fn zero_matrix_unchanged() {
        let w = Array2::<f64>::zeros((3, 3));
        let u = Array1::from_vec(vec![1.0, 0.0, 0.0]);
        let (wn, _) = spectral_normalize(&w, &u, 10);
        assert!(wn.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn power_iteration_converges_to_svd() {
        let mut rng = crate::rng::Rng::new(99);
        for trial in 0..10 {
            let w = Array2::from_shape_fn((8, 12), |_| rng.gauss());
            let u = Array1::from_shape_fn(8, |_| rng.gauss());
            let (sigma, _, _) = power_iteration(&w, &u, 60);
            let want = svd_top(&w);
            assert!(
                (sigma - want).abs() < 1e-3 * want,
                "trial {trial}: {sigma} vs {want}"
            );
        }
    }
}
