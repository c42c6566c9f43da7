//! Building blocks of the discriminator network.
//!
//! Dense layers, batch normalization, the leaky activation, dropout masks,
//! and Adam moment updates. Forward passes come in a stochastic train
//! variant (per-batch statistics, fresh dropout masks) and a pure eval
//! variant (running statistics, no dropout); backward passes consume the
//! caches left by the train variant.

use ndarray::{Array1, Array2, Axis};

use crate::rng::RngStream;
use crate::scalar::Scalar;

pub(crate) const LEAKY_SLOPE: f64 = 0.01;
pub(crate) const BN_EPS: f64 = 1e-5;
/// Running statistics blend: `running = (1 - m) * running + m * batch`.
pub(crate) const BN_MOMENTUM: f64 = 0.1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update for a tensor of any shape (flat iteration).
fn adam_update<'a, S: Scalar>(
    params: impl Iterator<Item = &'a mut S>,
    grads: impl Iterator<Item = &'a S>,
    m: impl Iterator<Item = &'a mut S>,
    v: impl Iterator<Item = &'a mut S>,
    lr: S,
    t: u64,
) {
    let b1 = S::of_f64(ADAM_BETA1);
    let b2 = S::of_f64(ADAM_BETA2);
    let eps = S::of_f64(ADAM_EPS);
    let corr1 = S::one() - b1.powi(t as i32);
    let corr2 = S::one() - b2.powi(t as i32);
    for (((p, &g), mi), vi) in params.zip(grads).zip(m).zip(v) {
        *mi = b1 * *mi + (S::one() - b1) * g;
        *vi = b2 * *vi + (S::one() - b2) * g * g;
        let mhat = *mi / corr1;
        let vhat = *vi / corr2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense<S: Scalar> {
    pub w: Array2<S>,
    pub b: Array1<S>,
    pub gw: Array2<S>,
    pub gb: Array1<S>,
    mw: Array2<S>,
    vw: Array2<S>,
    mb: Array1<S>,
    vb: Array1<S>,
}

impl<S: Scalar> Dense<S> {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn he_uniform(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let limit = S::of_f64((6.0 / inputs as f64).sqrt());
        let w = Array2::from_shape_simple_fn((outputs, inputs), || {
            rng.uniform_in(-limit, limit)
        });
        Self::with_weights(w, Array1::zeros(outputs))
    }

    /// All-zero map; used for the final layer so the initial logit is 0.
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self::with_weights(Array2::zeros((outputs, inputs)), Array1::zeros(outputs))
    }

    pub fn with_weights(w: Array2<S>, b: Array1<S>) -> Self {
        let shape = (w.nrows(), w.ncols());
        Dense {
            gw: Array2::zeros(shape),
            gb: Array1::zeros(b.len()),
            mw: Array2::zeros(shape),
            vw: Array2::zeros(shape),
            mb: Array1::zeros(b.len()),
            vb: Array1::zeros(b.len()),
            w,
            b,
        }
    }

    pub fn forward(&self, x: &Array2<S>) -> Array2<S> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// `x` is the batch this layer saw on the forward pass.
    pub fn backward(&mut self, x: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
        self.gw += &dy.t().dot(x);
        self.gb += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(S::zero());
        self.gb.fill(S::zero());
    }

    pub fn adam_step(&mut self, lr: S, t: u64) {
        adam_update(
            self.w.iter_mut(),
            self.gw.iter(),
            self.mw.iter_mut(),
            self.vw.iter_mut(),
            lr,
            t,
        );
        adam_update(
            self.b.iter_mut(),
            self.gb.iter(),
            self.mb.iter_mut(),
            self.vb.iter_mut(),
            lr,
            t,
        );
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm<S: Scalar> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
    pub running_mean: Array1<S>,
    pub running_var: Array1<S>,
    pub ggamma: Array1<S>,
    pub gbeta: Array1<S>,
    mg: Array1<S>,
    vg: Array1<S>,
    mb: Array1<S>,
    vb: Array1<S>,
}

/// Per-batch quantities the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct BnCache<S: Scalar> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            ggamma: Array1::zeros(features),
            gbeta: Array1::zeros(features),
            mg: Array1::zeros(features),
            vg: Array1::zeros(features),
            mb: Array1::zeros(features),
            vb: Array1::zeros(features),
        }
    }

    /// Normalizes with batch statistics (biased variance) and folds them
    /// into the running averages.
    pub fn forward_train(&mut self, x: &Array2<S>) -> (Array2<S>, BnCache<S>) {
        let n = S::of_usize(x.nrows());
        let eps = S::of_f64(BN_EPS);
        let mom = S::of_f64(BN_MOMENTUM);
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| S::one() / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        self.running_mean = &self.running_mean * (S::one() - mom) + &mean * mom;
        self.running_var = &self.running_var * (S::one() - mom) + &var * mom;
        (y, BnCache { xhat, inv_std })
    }

    /// Pure normalization with the frozen running statistics.
    pub fn forward_eval(&self, x: &Array2<S>) -> Array2<S> {
        let eps = S::of_f64(BN_EPS);
        let inv_std = self.running_var.mapv(|v| S::one() / (v + eps).sqrt());
        (x - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    pub fn backward(&mut self, cache: &BnCache<S>, dy: &Array2<S>) -> Array2<S> {
        let n = S::of_usize(dy.nrows());
        self.gbeta += &dy.sum_axis(Axis(0));
        self.ggamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let scaled = dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
        scaled * &cache.inv_std / n
    }

    pub fn zero_grad(&mut self) {
        self.ggamma.fill(S::zero());
        self.gbeta.fill(S::zero());
    }

    pub fn adam_step(&mut self, lr: S, t: u64) {
        adam_update(
            self.gamma.iter_mut(),
            self.ggamma.iter(),
            self.mg.iter_mut(),
            self.vg.iter_mut(),
            lr,
            t,
        );
        adam_update(
            self.beta.iter_mut(),
            self.gbeta.iter(),
            self.mb.iter_mut(),
            self.vb.iter_mut(),
            lr,
            t,
        );
    }
}

pub(crate) fn leaky_forward<S: Scalar>(x: &Array2<S>) -> Array2<S> {
    let a = S::of_f64(LEAKY_SLOPE);
    x.mapv(|v| if v > S::zero() { v } else { a * v })
}

/// Gradient through the activation; `z` is the pre-activation input.
pub(crate) fn leaky_backward<S: Scalar>(z: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
    let a = S::of_f64(LEAKY_SLOPE);
    let mut dx = dy.clone();
    dx.zip_mut_with(z, |g, &v| {
        if v <= S::zero() {
            *g *= a;
        }
    });
    dx
}

/// Inverted dropout mask: entries are `0` or `1/keep`, so eval needs no
/// rescaling.
pub(crate) fn dropout_mask<S: Scalar>(
    rows: usize,
    cols: usize,
    drop: S,
    rng: &mut RngStream,
) -> Array2<S> {
    let keep = S::one() - drop;
    let scale = S::one() / keep;
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.uniform::<S>() < keep {
            scale
        } else {
            S::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_forward_matches_hand_computation() {
        let layer = Dense::with_weights(array![[1.0, 2.0], [0.0, -1.0]], array![0.5, 0.0]);
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = layer.forward(&x);
        assert_eq!(y, array![[3.5, -1.0], [2.5, 0.0]]);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let (y, _) = bn.forward_train(&x);
        let mean = y.mean_axis(Axis(0)).unwrap()[0];
        let var = y.mapv(|v| (v - mean) * (v - mean)).mean_axis(Axis(0)).unwrap()[0];
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
        // Running stats moved toward the batch: 0.9 * 0 + 0.1 * 2.5.
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_uses_running_statistics() {
        let bn = BatchNorm::<f64>::new(2);
        let x = array![[3.0, -1.0]];
        // Fresh stats are mean 0, var 1: eval is the identity up to eps.
        let y = bn.forward_eval(&x);
        assert!((y[[0, 0]] - 3.0).abs() < 1e-4);
        assert!((y[[0, 1]] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn leaky_kinks_at_zero() {
        let x = array![[2.0, -2.0]];
        let y = leaky_forward(&x);
        assert_eq!(y, array![[2.0, -0.02]]);
        let dx = leaky_backward(&x, &array![[1.0, 1.0]]);
        assert_eq!(dx, array![[1.0, 0.01]]);
    }

    #[test]
    fn dropout_mask_is_inverted_and_seeded() {
        let mut rng = RngStream::new(5);
        let m = dropout_mask::<f64>(200, 10, 0.5, &mut rng);
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let frac = kept as f64 / 2000.0;
        assert!((frac - 0.5).abs() < 0.05, "keep fraction {frac}");
    }

    #[test]
    fn adam_with_zero_rate_is_a_no_op() {
        let mut layer = Dense::with_weights(array![[1.0]], array![2.0]);
        layer.gw[[0, 0]] = 3.0;
        layer.gb[0] = -1.0;
        layer.adam_step(0.0, 1);
        assert_eq!(layer.w[[0, 0]], 1.0);
        assert_eq!(layer.b[0], 2.0);
    }
}
