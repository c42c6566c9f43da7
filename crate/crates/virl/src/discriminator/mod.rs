//! Log-density-ratio discriminator.
//!
//! A small feedforward network whose raw logit estimates the log ratio
//! between an expert distribution (positives) and a sampling distribution
//! (negatives). Training minimizes an importance-weighted binary
//! cross-entropy: positives enter with uniform weight, negatives carry
//! externally supplied normalized weights, and minibatch slices rescale the
//! weighted term so it stays an unbiased estimate of the full-set loss.
//!
//! The final layer starts at zero, so a fresh discriminator's logit is
//! identically zero and contributes nothing until trained. Once `fit`
//! returns, the network is in eval mode: dropout is off, batch-norm uses its
//! frozen running statistics, and the logit is a pure function of the
//! parameters, which downstream reward stacks rely on.

mod net;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 256;

/// Architecture and optimizer settings.
///
/// `validate` enforces the tuned ranges experiment configs must stay inside;
/// direct construction only requires structural sanity, so tests may use
/// values outside the tuned ranges (a zero learning rate, say).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub layers: usize,
    pub layer_size: usize,
    pub batch_norm: bool,
    pub learning_rate: f64,
    pub dropout: f64,
    pub l2: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            layers: 4,
            layer_size: 256,
            batch_norm: false,
            learning_rate: 3e-4,
            dropout: 0.0,
            l2: 0.0,
        }
    }
}

impl MlpConfig {
    /// Range checks for experiment configs.
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.layers) {
            return Err(Error::config("discriminator.layers", "must be in [2, 4]"));
        }
        if !(8..=256).contains(&self.layer_size) {
            return Err(Error::config(
                "discriminator.layer_size",
                "must be in [8, 256]",
            ));
        }
        if !(5e-5..=1e-3).contains(&self.learning_rate) {
            return Err(Error::config(
                "discriminator.learning_rate",
                "must be in [5e-5, 1e-3]",
            ));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(Error::config("discriminator.dropout", "must be in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.l2) {
            return Err(Error::config("discriminator.l2", "must be in [0, 1]"));
        }
        Ok(())
    }

    fn check_structure(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("layers", "need at least one hidden layer"));
        }
        if self.layer_size == 0 {
            return Err(Error::invalid("layer_size", "need at least one unit"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::invalid("l2", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One training batch: expert positives (uniform weight) against sampler
/// negatives with normalized importance weights.
#[derive(Debug, Clone)]
pub struct WeightedBatch<S: Scalar = f64> {
    pub positives: Array2<S>,
    pub negatives: Array2<S>,
    pub negative_weights: Array1<S>,
}

impl<S: Scalar> WeightedBatch<S> {
    pub fn new(
        positives: Array2<S>,
        negatives: Array2<S>,
        negative_weights: Array1<S>,
    ) -> Result<Self> {
        if positives.nrows() == 0 {
            return Err(Error::EmptyInput { what: "positives" });
        }
        if negatives.nrows() == 0 {
            return Err(Error::EmptyInput { what: "negatives" });
        }
        if positives.ncols() != negatives.ncols() {
            return Err(Error::DimensionMismatch {
                expected: positives.ncols(),
                got: negatives.ncols(),
            });
        }
        if negative_weights.len() != negatives.nrows() {
            return Err(Error::DimensionMismatch {
                expected: negatives.nrows(),
                got: negative_weights.len(),
            });
        }
        validate_weights(&negative_weights.view())?;
        Ok(WeightedBatch {
            positives,
            negatives,
            negative_weights,
        })
    }

    /// Uniform negative weights `1/N`.
    pub fn uniform(positives: Array2<S>, negatives: Array2<S>) -> Result<Self> {
        let n = negatives.nrows();
        if n == 0 {
            return Err(Error::EmptyInput { what: "negatives" });
        }
        let w = Array1::from_elem(n, S::one() / S::of_usize(n));
        Self::new(positives, negatives, w)
    }
}

/// Shared weight-vector validation: non-negative, finite, normalized.
pub(crate) fn validate_weights<S: Scalar>(w: &ArrayView1<S>) -> Result<()> {
    let mut sum = S::zero();
    for &v in w {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "importance weight".into(),
            });
        }
        if v < S::zero() {
            return Err(Error::invalid(
                "negative_weights",
                "weights must be non-negative",
            ));
        }
        sum += v;
    }
    if sum == S::zero() {
        return Err(Error::DegenerateWeights {
            reason: "all importance weights are zero".into(),
        });
    }
    if (sum - S::one()).abs() > S::of_f64(1e-8) {
        return Err(Error::invalid(
            "negative_weights",
            format!("weights must sum to 1, got {sum}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct HiddenLayer<S: Scalar> {
    dense: net::Dense<S>,
    bn: Option<net::BatchNorm<S>>,
}

/// Per-layer values the backward pass needs, recorded by train forwards.
#[derive(Debug, Clone)]
struct LayerTape<S: Scalar> {
    /// Input the dense sublayer saw.
    x: Array2<S>,
    bn: Option<net::BnCache<S>>,
    /// Input the activation saw.
    pre_act: Array2<S>,
    mask: Option<Array2<S>>,
}

#[derive(Debug, Clone)]
struct Tape<S: Scalar> {
    layers: Vec<LayerTape<S>>,
    /// Input the output layer saw.
    final_x: Array2<S>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<S: Scalar = f64> {
    cfg: MlpConfig,
    input_dim: usize,
    hidden: Vec<HiddenLayer<S>>,
    output: net::Dense<S>,
    mode: Mode,
    adam_t: u64,
    tape: Option<Tape<S>>,
}

impl<S: Scalar> Discriminator<S> {
    /// Fresh network in train mode. Hidden layers get fan-in scaled random
    /// weights; the output layer is zero, so the initial logit is 0.
    pub fn new(input_dim: usize, cfg: MlpConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.check_structure()?;
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut fan_in = input_dim;
        for _ in 0..cfg.layers {
            let dense = net::Dense::he_uniform(fan_in, cfg.layer_size, rng);
            let bn = cfg.batch_norm.then(|| net::BatchNorm::new(cfg.layer_size));
            hidden.push(HiddenLayer { dense, bn });
            fan_in = cfg.layer_size;
        }
        let output = net::Dense::zeros(fan_in, 1);
        Ok(Discriminator {
            cfg,
            input_dim,
            hidden,
            output,
            mode: Mode::Train,
            adam_t: 0,
            tape: None,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_train(&mut self) {
        self.mode = Mode::Train;
    }

    /// Freezes the network: dropout off, batch-norm statistics fixed.
    pub fn set_eval(&mut self) {
        self.mode = Mode::Eval;
        self.tape = None;
    }

    fn check_input(&self, xs: &ArrayView2<S>) -> Result<()> {
        if xs.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: xs.ncols(),
            });
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "discriminator input".into(),
            });
        }
        Ok(())
    }

    /// Deterministic logit; always evaluates the pure path (no dropout,
    /// frozen statistics) regardless of mode.
    pub fn forward_logit(&self, x: &ArrayView1<S>) -> Result<S> {
        let row = x
            .to_owned()
            .into_shape_with_order((1, x.len()))
            .expect("row reshape");
        Ok(self.logit_batch(&row.view())?[0])
    }

    /// Deterministic logits for a batch of rows.
    pub fn logit_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        self.check_input(xs)?;
        let mut h = xs.to_owned();
        for layer in &self.hidden {
            h = layer.dense.forward(&h);
            if let Some(bn) = &layer.bn {
                h = bn.forward_eval(&h);
            }
            h = net::leaky_forward(&h);
        }
        let out = self.output.forward(&h);
        Ok(out.index_axis(Axis(1), 0).to_owned())
    }

    /// Keras-style penalty `l2 * sum(w^2)` over dense weights only.
    pub fn l2_penalty(&self) -> S {
        if self.cfg.l2 == 0.0 {
            return S::zero();
        }
        let mut sum = S::zero();
        for layer in &self.hidden {
            sum += layer.dense.w.iter().map(|&v| v * v).sum();
        }
        sum += self.output.w.iter().map(|&v| v * v).sum();
        S::of_f64(self.cfg.l2) * sum
    }

    /// Importance-weighted binary cross-entropy of a batch, evaluated on the
    /// deterministic path, plus the L2 penalty.
    pub fn weighted_bce_loss(&self, batch: &WeightedBatch<S>) -> Result<S> {
        let lp = self.logit_batch(&batch.positives.view())?;
        let ln = self.logit_batch(&batch.negatives.view())?;
        let np = S::of_usize(lp.len());
        let mut pos_term = S::zero();
        for &l in &lp {
            pos_term += softplus(-l);
        }
        let mut neg_term = S::zero();
        for (&l, &w) in ln.iter().zip(&batch.negative_weights) {
            neg_term += w * softplus(l);
        }
        Ok(pos_term / np + neg_term + self.l2_penalty())
    }

    /// Stochastic forward: fresh dropout masks, per-batch normalization
    /// statistics, and a tape for [`Self::backward_logits`].
    pub(crate) fn forward_train(
        &mut self,
        xs: &ArrayView2<S>,
        rng: &mut RngStream,
    ) -> Result<Array1<S>> {
        if self.mode != Mode::Train {
            return Err(Error::WrongMode {
                expected: "train",
                actual: "eval",
            });
        }
        if xs.nrows() == 0 {
            return Err(Error::EmptyInput { what: "batch" });
        }
        self.check_input(xs)?;
        let drop = S::of_f64(self.cfg.dropout);
        let mut h = xs.to_owned();
        let mut tapes = Vec::with_capacity(self.hidden.len());
        for layer in &mut self.hidden {
            let x = h;
            let z = layer.dense.forward(&x);
            let (pre_act, bn_cache) = match &mut layer.bn {
                Some(bn) => {
                    let (y, c) = bn.forward_train(&z);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let mut a = net::leaky_forward(&pre_act);
            let mask = if self.cfg.dropout > 0.0 {
                let m = net::dropout_mask(a.nrows(), a.ncols(), drop, rng);
                a = a * &m;
                Some(m)
            } else {
                None
            };
            tapes.push(LayerTape {
                x,
                bn: bn_cache,
                pre_act,
                mask,
            });
            h = a;
        }
        let out = self.output.forward(&h);
        self.tape = Some(Tape {
            layers: tapes,
            final_x: h,
        });
        Ok(out.index_axis(Axis(1), 0).to_owned())
    }

    /// Backpropagates a gradient on the logits through the taped forward,
    /// accumulating parameter gradients (L2 included) and checking them for
    /// finiteness.
    pub(crate) fn backward_logits(&mut self, dlogits: &ArrayView1<S>) -> Result<()> {
        let tape = self.tape.take().ok_or_else(|| {
            Error::invalid("tape", "backward without a preceding train forward")
        })?;
        let n = dlogits.len();
        if n != tape.final_x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: tape.final_x.nrows(),
                got: n,
            });
        }
        let dy = dlogits
            .to_owned()
            .into_shape_with_order((n, 1))
            .expect("column reshape");
        let mut d = self.output.backward(&tape.final_x, &dy);
        for (layer, lt) in self.hidden.iter_mut().zip(tape.layers.iter()).rev() {
            if let Some(mask) = &lt.mask {
                d = d * mask;
            }
            d = net::leaky_backward(&lt.pre_act, &d);
            if let Some(bn) = &mut layer.bn {
                d = bn.backward(lt.bn.as_ref().expect("bn cache"), &d);
            }
            d = layer.dense.backward(&lt.x, &d);
        }
        if self.cfg.l2 > 0.0 {
            let two_l2 = S::of_f64(2.0 * self.cfg.l2);
            for layer in &mut self.hidden {
                layer.dense.gw.zip_mut_with(&layer.dense.w, |g, &w| {
                    *g += two_l2 * w;
                });
            }
            self.output.gw.zip_mut_with(&self.output.w, |g, &w| {
                *g += two_l2 * w;
            });
        }
        self.check_gradients()
    }

    fn check_gradients(&self) -> Result<()> {
        for (i, layer) in self.hidden.iter().enumerate() {
            let mut sq = layer.dense.gw.iter().map(|&g| g * g).sum::<S>()
                + layer.dense.gb.iter().map(|&g| g * g).sum::<S>();
            if let Some(bn) = &layer.bn {
                sq += bn.ggamma.iter().map(|&g| g * g).sum::<S>()
                    + bn.gbeta.iter().map(|&g| g * g).sum::<S>();
            }
            if !sq.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient at hidden layer {i} (norm {})", sq.sqrt()),
                });
            }
        }
        let sq = self.output.gw.iter().map(|&g| g * g).sum::<S>()
            + self.output.gb.iter().map(|&g| g * g).sum::<S>();
        if !sq.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient at output layer (norm {})", sq.sqrt()),
            });
        }
        Ok(())
    }

    /// Applies one Adam update from the accumulated gradients, then clears
    /// them.
    pub(crate) fn adam_apply(&mut self) {
        self.adam_t += 1;
        let lr = S::of_f64(self.cfg.learning_rate);
        for layer in &mut self.hidden {
            layer.dense.adam_step(lr, self.adam_t);
            if let Some(bn) = &mut layer.bn {
                bn.adam_step(lr, self.adam_t);
            }
        }
        self.output.adam_step(lr, self.adam_t);
        self.zero_grad();
    }

    fn zero_grad(&mut self) {
        for layer in &mut self.hidden {
            layer.dense.zero_grad();
            if let Some(bn) = &mut layer.bn {
                bn.zero_grad();
            }
        }
        self.output.zero_grad();
    }

    /// One stochastic-gradient step on a slice of the training data.
    /// `neg_scale` restores the full-set magnitude of the weighted negative
    /// term when the slice holds only part of the negatives.
    fn step_on(
        &mut self,
        positives: &ArrayView2<S>,
        negatives: &ArrayView2<S>,
        weights: &ArrayView1<S>,
        neg_scale: S,
        rng: &mut RngStream,
    ) -> Result<S> {
        let np = positives.nrows();
        let nn = negatives.nrows();
        let d = self.input_dim;
        let mut xs = Array2::zeros((np + nn, d));
        xs.slice_mut(s![..np, ..]).assign(positives);
        xs.slice_mut(s![np.., ..]).assign(negatives);
        let logits = self.forward_train(&xs.view(), rng)?;

        let inv_np = S::one() / S::of_usize(np);
        let mut dlogits = Array1::zeros(np + nn);
        let mut loss = S::zero();
        for i in 0..np {
            let l = logits[i];
            loss += softplus(-l) * inv_np;
            dlogits[i] = (sigmoid(l) - S::one()) * inv_np;
        }
        for j in 0..nn {
            let l = logits[np + j];
            let w = weights[j] * neg_scale;
            loss += w * softplus(l);
            dlogits[np + j] = w * sigmoid(l);
        }
        loss += self.l2_penalty();
        self.backward_logits(&dlogits.view())?;
        self.adam_apply();
        Ok(loss)
    }

    /// One Adam update on the full batch. Requires train mode.
    pub fn train_step(&mut self, batch: &WeightedBatch<S>, rng: &mut RngStream) -> Result<S> {
        self.step_on(
            &batch.positives.view(),
            &batch.negatives.view(),
            &batch.negative_weights.view(),
            S::one(),
            rng,
        )
    }

    /// Minibatch training; returns the network switched to eval mode with
    /// frozen batch-norm statistics. Each step sees up to `batch_size`
    /// positives and as many negatives; epochs reshuffle both sides.
    pub fn fit(
        mut self,
        positives: &ArrayView2<S>,
        negatives: &ArrayView2<S>,
        neg_weights: &ArrayView1<S>,
        epochs: usize,
        batch_size: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        self.check_input(positives)?;
        self.check_input(negatives)?;
        if positives.nrows() == 0 || negatives.nrows() == 0 {
            return Err(Error::EmptyInput {
                what: "training samples",
            });
        }
        if neg_weights.len() != negatives.nrows() {
            return Err(Error::DimensionMismatch {
                expected: negatives.nrows(),
                got: neg_weights.len(),
            });
        }
        validate_weights(neg_weights)?;
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        self.set_train();

        let np = positives.nrows();
        let nn = negatives.nrows();
        let mut pos_idx: Vec<usize> = (0..np).collect();
        let mut neg_idx: Vec<usize> = (0..nn).collect();
        for _ in 0..epochs {
            rng.shuffle(&mut pos_idx);
            rng.shuffle(&mut neg_idx);
            // Cycle the negative order to keep classes balanced per step
            // when the sides differ in size.
            let mut neg_cursor = 0usize;
            for chunk in pos_idx.chunks(batch_size) {
                let take = chunk.len();
                let mut nsel = Vec::with_capacity(take);
                for _ in 0..take {
                    if neg_cursor == nn {
                        rng.shuffle(&mut neg_idx);
                        neg_cursor = 0;
                    }
                    nsel.push(neg_idx[neg_cursor]);
                    neg_cursor += 1;
                }
                let pb = positives.select(Axis(0), chunk);
                let nb = negatives.select(Axis(0), &nsel);
                let wb = Array1::from_iter(nsel.iter().map(|&j| neg_weights[j]));
                let neg_scale = S::of_usize(nn) / S::of_usize(take);
                self.step_on(&pb.view(), &nb.view(), &wb.view(), neg_scale, rng)?;
            }
        }
        self.set_eval();
        Ok(self)
    }

    /// Visits every trainable parameter in a stable order (dense weights and
    /// biases, then batch-norm scale and shift, layer by layer).
    pub(crate) fn visit_trainable(&mut self, f: &mut dyn FnMut(&mut S)) {
        for layer in &mut self.hidden {
            layer.dense.w.iter_mut().for_each(&mut *f);
            layer.dense.b.iter_mut().for_each(&mut *f);
            if let Some(bn) = &mut layer.bn {
                bn.gamma.iter_mut().for_each(&mut *f);
                bn.beta.iter_mut().for_each(&mut *f);
            }
        }
        self.output.w.iter_mut().for_each(&mut *f);
        self.output.b.iter_mut().for_each(&mut *f);
    }

    /// Gradients in the same order as [`Self::visit_trainable`].
    pub(crate) fn collect_gradients(&self) -> Vec<S> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.extend(layer.dense.gw.iter().copied());
            out.extend(layer.dense.gb.iter().copied());
            if let Some(bn) = &layer.bn {
                out.extend(bn.ggamma.iter().copied());
                out.extend(bn.gbeta.iter().copied());
            }
        }
        out.extend(self.output.gw.iter().copied());
        out.extend(self.output.gb.iter().copied());
        out
    }

    /// Every parameter and frozen statistic, flattened in a stable order;
    /// the exact inverse of [`Self::import_state`]. Used for persistence.
    pub fn export_state(&self) -> Vec<S> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.extend(layer.dense.w.iter().copied());
            out.extend(layer.dense.b.iter().copied());
            if let Some(bn) = &layer.bn {
                out.extend(bn.gamma.iter().copied());
                out.extend(bn.beta.iter().copied());
                out.extend(bn.running_mean.iter().copied());
                out.extend(bn.running_var.iter().copied());
            }
        }
        out.extend(self.output.w.iter().copied());
        out.extend(self.output.b.iter().copied());
        out
    }

    /// Loads a state written by [`Self::export_state`] into a network with
    /// matching architecture.
    pub fn import_state(&mut self, flat: &[S]) -> Result<()> {
        let mut cursor = 0usize;
        let mut read = |dst: &mut dyn Iterator<Item = &mut S>| -> Result<()> {
            for slot in dst {
                if cursor >= flat.len() {
                    return Err(Error::format("parameter vector too short"));
                }
                *slot = flat[cursor];
                cursor += 1;
            }
            Ok(())
        };
        for layer in &mut self.hidden {
            read(&mut layer.dense.w.iter_mut())?;
            read(&mut layer.dense.b.iter_mut())?;
            if let Some(bn) = &mut layer.bn {
                read(&mut bn.gamma.iter_mut())?;
                read(&mut bn.beta.iter_mut())?;
                read(&mut bn.running_mean.iter_mut())?;
                read(&mut bn.running_var.iter_mut())?;
            }
        }
        read(&mut self.output.w.iter_mut())?;
        read(&mut self.output.b.iter_mut())?;
        if cursor != flat.len() {
            return Err(Error::format(format!(
                "parameter vector has {} extra values",
                flat.len() - cursor
            )));
        }
        Ok(())
    }
}
