//! Tensor layout is fixed as (batch, channels, height, width) everywhere.

use ndarray::{Array4, NdFloat};

use crate::error::{shape_err, Error, Result};

pub type Tensor<S> = Array4<S>;

/// Float element type for network math; f32 for training/inference, f64 for
/// finite-difference oracles.
pub trait Scalar: NdFloat + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// C(m,n) = alpha * A(m,k) B(k,n) + beta * C. All matrices described by
    /// (ptr, row stride, col stride).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A batch of images: (batch, channels, height, width) floats, nominally in
/// [0, 1], 1 or 3 channels, every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Tensor<f32>,
}

impl ImageTensor {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let (_, c, h, w) = data.dim();
        if c != 1 && c != 3 {
            return Err(shape_err!("image tensor must have 1 or 3 channels, got {c}"));
        }
        if h == 0 || w == 0 {
            return Err(shape_err!("image tensor must be at least 1x1, got {h}x{w}"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Shape("image tensor contains non-finite values".into()));
        }
        Ok(ImageTensor { data })
    }

    /// Constructor for values already guaranteed finite by the producing op.
    pub(crate) fn wrap(data: Tensor<f32>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        ImageTensor { data }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }
    pub fn channels(&self) -> usize {
        self.data.dim().1
    }
    pub fn height(&self) -> usize {
        self.data.dim().2
    }
    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn constant(b: usize, c: usize, h: usize, w: usize, value: f32) -> Result<Self> {
        ImageTensor::new(Tensor::from_elem((b, c, h, w), value))
    }

    /// Clamp every value into [0, 1] in place.
    pub fn clamp01(&mut self) {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
}
