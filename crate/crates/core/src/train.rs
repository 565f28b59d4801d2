//! Loss, reverse-mode gradients through the unrolled recurrence, optimizers
//! and the training loop.
//!
//! Training is teacher forced: the ground-truth previous token is fed back.
//! Gradients are exact; the backward pass walks the recorded forward trace
//! from the last step to the first, carrying `dS_hat`, `dc1`, `dp`, `dc2`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{
    block_mean, init_state, logits_raw, s_cell_forward, u_cell_forward, unbind_filler_raw,
    unbinding_raw, HyperParams, ModelParams, SCellCache, UCellCache, WxMode,
};
use crate::tensor::{argmax, matvec_t_acc, outer_acc, softmax_slice, Mat, Vector};

/// Per-caption losses are clamped here when the target probability underflows.
pub const LOSS_CAP: f64 = 1e3;

/// Gradients with exactly the shapes of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(pub ModelParams);

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let mut g = params.clone();
        g.visit_mut(|_, xs| xs.fill(0.0));
        g.feature_mean.as_mut_slice().fill(0.0);
        GradientSet(g)
    }

    pub fn params(&self) -> &ModelParams {
        &self.0
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        let mut src: Vec<&[f64]> = Vec::new();
        other.0.visit(|_, _, xs| src.push(xs));
        let mut idx = 0;
        self.0.visit_mut(|_, xs| {
            xs.iter_mut().zip(src[idx]).for_each(|(a, b)| *a += scale * b);
            idx += 1;
        });
    }

    pub fn scale(&mut self, k: f64) {
        self.0.visit_mut(|_, xs| xs.iter_mut().for_each(|x| *x *= k));
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.0.visit(|name, _, xs| {
            if bad.is_none() && xs.iter().any(|x| !x.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        bad
    }
}

/// Value of the teacher-forced caption loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    /// Mean over timesteps of `-log p(target_t)`.
    pub value: f64,
    /// Some target probability rounded to zero; `value` was capped.
    pub underflow: bool,
    pub correct_tokens: usize,
    pub tokens: usize,
}

struct StepTrace {
    prev_word: usize,
    emb: Vec<f64>,
    s: SCellCache,
    u_cell: UCellCache,
    u: Vec<f64>,
    f: Vec<f64>,
    probs: Vec<f64>,
}

struct Trace {
    centred: Vec<f64>,
    s0: Vec<f64>,
    steps: Vec<StepTrace>,
}

fn check_target(target: &[usize], hyper: &HyperParams) -> Result<()> {
    if target.last() != Some(&hyper.end_id) {
        return Err(Error::InvalidArgument(
            "target caption must end with the end token".into(),
        ));
    }
    if target.len() > hyper.max_len {
        return Err(Error::InvalidArgument(format!(
            "target length {} exceeds max_len {}",
            target.len(),
            hyper.max_len
        )));
    }
    if let Some(&bad) = target.iter().find(|&&w| w >= hyper.vocab_size) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: hyper.vocab_size,
        });
    }
    Ok(())
}

fn forward_trace(v: &Vector, target: &[usize], params: &ModelParams, hyper: &HyperParams) -> Result<Trace> {
    params.check_hyper(hyper)?;
    check_target(target, hyper)?;
    let d = hyper.d;
    let state = init_state(v, &params.feature_mean, params, hyper)?;
    let centred = v.sub(&params.feature_mean).into_vec();
    let s0 = state.s_hat.into_vec();
    let mut steps: Vec<StepTrace> = Vec::with_capacity(target.len());
    let zeros_dd = vec![0.0; d * d];
    let zeros_d = vec![0.0; d];
    let mut prev_word = hyper.start_id;
    for &word in target {
        let (s_prev, c1_prev, p_prev, c2_prev) = match steps.last() {
            Some(st) => (
                st.s.s_hat.as_slice(),
                st.s.c1.as_slice(),
                st.u_cell.p.as_slice(),
                st.u_cell.c2.as_slice(),
            ),
            None => (s0.as_slice(), zeros_dd.as_slice(), zeros_d.as_slice(), zeros_d.as_slice()),
        };
        let emb = params.we.column(prev_word).into_vec();
        let s = s_cell_forward(s_prev, c1_prev, p_prev, &emb, params);
        let u_cell = u_cell_forward(s_prev, c2_prev, p_prev, &emb, params);
        let u = unbinding_raw(&u_cell.p, params);
        let f = unbind_filler_raw(&s.s_hat, &u, d);
        let probs = softmax_slice(&logits_raw(&f, params));
        steps.push(StepTrace {
            prev_word,
            emb,
            s,
            u_cell,
            u,
            f,
            probs,
        });
        prev_word = word;
    }
    Ok(Trace { centred, s0, steps })
}

fn loss_of_trace(trace: &Trace, target: &[usize]) -> Loss {
    let mut total = 0.0;
    let mut underflow = false;
    let mut correct = 0;
    for (st, &w) in trace.steps.iter().zip(target) {
        let p = st.probs[w];
        if p > 0.0 {
            total += (-p.ln()).min(LOSS_CAP);
        } else {
            underflow = true;
            total += LOSS_CAP;
        }
        if argmax(&st.probs) == w {
            correct += 1;
        }
    }
    Loss {
        value: total / target.len() as f64,
        underflow,
        correct_tokens: correct,
        tokens: target.len(),
    }
}

/// Teacher-forced cross-entropy, averaged over timesteps.
pub fn caption_loss(v: &Vector, target: &[usize], params: &ModelParams, hyper: &HyperParams) -> Result<Loss> {
    let trace = forward_trace(v, target, params, hyper)?;
    Ok(loss_of_trace(&trace, target))
}

/// Exact gradient of [`caption_loss`] with respect to every tensor.
pub fn backward_caption(
    v: &Vector,
    target: &[usize],
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<GradientSet> {
    Ok(loss_and_gradients(v, target, params, hyper)?.1)
}

pub fn loss_and_gradients(
    v: &Vector,
    target: &[usize],
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<(Loss, GradientSet)> {
    let trace = forward_trace(v, target, params, hyper)?;
    let loss = loss_of_trace(&trace, target);
    let mut grads = GradientSet::zeros_like(params);
    backprop(&trace, target, params, &mut grads.0);
    Ok((loss, grads))
}

fn backprop(trace: &Trace, target: &[usize], params: &ModelParams, g: &mut ModelParams) {
    let d = params.d();
    let dd = d * d;
    let vocab = params.vocab_size();
    let steps = &trace.steps;
    let n = steps.len();
    let inv_t = 1.0 / n as f64;

    let mut ds_carry = vec![0.0; dd];
    let mut dc1_carry = vec![0.0; dd];
    let mut dp_carry = vec![0.0; d];
    let mut dc2_carry = vec![0.0; d];
    let zeros_dd = vec![0.0; dd];
    let zeros_d = vec![0.0; d];

    for t in (0..n).rev() {
        let st = &steps[t];
        let (s_prev, c1_prev, p_prev, c2_prev) = if t > 0 {
            let pr = &steps[t - 1];
            (
                pr.s.s_hat.as_slice(),
                pr.s.c1.as_slice(),
                pr.u_cell.p.as_slice(),
                pr.u_cell.c2.as_slice(),
            )
        } else {
            (trace.s0.as_slice(), zeros_dd.as_slice(), zeros_d.as_slice(), zeros_d.as_slice())
        };

        // softmax + cross-entropy
        let mut dlogits = st.probs.clone();
        dlogits[target[t]] -= 1.0;
        dlogits.iter_mut().for_each(|x| *x *= inv_t);
        g.bx.as_mut_slice()
            .iter_mut()
            .zip(&dlogits)
            .for_each(|(a, b)| *a += b);

        let mut df = vec![0.0; dd];
        match params.wx_mode {
            WxMode::TiedAverage => {
                // logits = We^T f_bar + bx
                let f_bar = block_mean(&st.f, d);
                let mut df_bar = vec![0.0; d];
                let we = params.we.as_slice();
                let gwe = g.we.as_mut_slice();
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..vocab {
                        s += we[i * vocab + j] * dlogits[j];
                        gwe[i * vocab + j] += f_bar[i] * dlogits[j];
                    }
                    df_bar[i] = s;
                }
                for block in df.chunks_exact_mut(d) {
                    block
                        .iter_mut()
                        .zip(&df_bar)
                        .for_each(|(a, b)| *a = b / d as f64);
                }
            }
            WxMode::Free => {
                outer_acc(g.wx.as_mut_slice(), &dlogits, &st.f);
                matvec_t_acc(params.wx.as_slice(), vocab, dd, &dlogits, &mut df);
            }
        }

        // f^(k) = S_hat u^(k)
        let mut ds = ds_carry.clone();
        let mut du = vec![0.0; dd];
        for (k, (df_k, u_k)) in df.chunks_exact(d).zip(st.u.chunks_exact(d)).enumerate() {
            outer_acc(&mut ds, df_k, u_k);
            matvec_t_acc(&st.s.s_hat, d, d, df_k, &mut du[k * d..(k + 1) * d]);
        }

        // u = tanh(Wu p + bu)
        let dz: Vec<f64> = du.iter().zip(&st.u).map(|(a, u)| a * (1.0 - u * u)).collect();
        let mut dp = dp_carry.clone();
        outer_acc(g.wu.as_mut_slice(), &dz, &st.u_cell.p);
        g.bu.as_mut_slice().iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        matvec_t_acc(params.wu.as_slice(), dd, d, &dz, &mut dp);

        let mut ds_prev = vec![0.0; dd];
        let mut dp_prev = vec![0.0; d];
        let mut de = vec![0.0; d];

        // S cell
        {
            let [fg, ig, og, gg] = &st.s.gates;
            let mut dc1 = dc1_carry.clone();
            let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; dd]);
            for k in 0..dd {
                let th = st.s.tanh_c1[k];
                let d_o = ds[k] * th;
                dc1[k] += ds[k] * og[k] * (1.0 - th * th);
                da[0][k] = dc1[k] * c1_prev[k] * fg[k] * (1.0 - fg[k]);
                da[1][k] = dc1[k] * gg[k] * ig[k] * (1.0 - ig[k]);
                da[2][k] = d_o * og[k] * (1.0 - og[k]);
                da[3][k] = dc1[k] * ig[k] * (1.0 - gg[k] * gg[k]);
                dc1_carry[k] = dc1[k] * fg[k];
            }
            for (gi, da) in da.iter().enumerate() {
                g.b1[gi].as_mut_slice().iter_mut().zip(da).for_each(|(a, b)| *a += b);
                outer_acc(g.w1[gi].as_mut_slice(), da, p_prev);
                matvec_t_acc(params.w1[gi].as_slice(), dd, d, da, &mut dp_prev);
                let neg: Vec<f64> = da.iter().map(|x| -x).collect();
                outer_acc(g.d1[gi].as_mut_slice(), &neg, &st.emb);
                matvec_t_acc(params.d1[gi].as_slice(), dd, d, &neg, &mut de);
                outer_acc(g.u1[gi].as_mut_slice(), da, s_prev);
                matvec_t_acc(params.u1[gi].as_slice(), dd, dd, da, &mut ds_prev);
            }
        }

        // U cell
        {
            let [fg, ig, og, gg] = &st.u_cell.gates;
            let mut dc2 = dc2_carry.clone();
            let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d]);
            for k in 0..d {
                let th = st.u_cell.tanh_c2[k];
                let d_o = dp[k] * th;
                dc2[k] += dp[k] * og[k] * (1.0 - th * th);
                da[0][k] = dc2[k] * c2_prev[k] * fg[k] * (1.0 - fg[k]);
                da[1][k] = dc2[k] * gg[k] * ig[k] * (1.0 - ig[k]);
                da[2][k] = d_o * og[k] * (1.0 - og[k]);
                da[3][k] = dc2[k] * ig[k] * (1.0 - gg[k] * gg[k]);
                dc2_carry[k] = dc2[k] * fg[k];
            }
            for (gi, da) in da.iter().enumerate() {
                g.b2[gi].as_mut_slice().iter_mut().zip(da).for_each(|(a, b)| *a += b);
                // (S_hat w)_i = sum_j S_ij w_j
                outer_acc(&mut ds_prev, da, params.w2[gi].as_slice());
                matvec_t_acc(s_prev, d, d, da, g.w2[gi].as_mut_slice());
                let neg: Vec<f64> = da.iter().map(|x| -x).collect();
                outer_acc(g.d2[gi].as_mut_slice(), &neg, &st.emb);
                matvec_t_acc(params.d2[gi].as_slice(), d, d, &neg, &mut de);
                outer_acc(g.u2[gi].as_mut_slice(), da, p_prev);
                matvec_t_acc(params.u2[gi].as_slice(), d, d, da, &mut dp_prev);
            }
        }

        let gwe = g.we.as_mut_slice();
        for (i, &x) in de.iter().enumerate() {
            gwe[i * vocab + st.prev_word] += x;
        }

        ds_carry = ds_prev;
        dp_carry = dp_prev;
    }

    // S_hat_0 = Cs (v - v_mean)
    outer_acc(g.cs.as_mut_slice(), &ds_carry, &trace.centred);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub wx_mode: WxMode,
    pub train_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            optimizer: OptimizerKind::adam_default(),
            epochs: 200,
            batch_size: 10,
            seed: 1,
            clip: Some(5.0),
            wx_mode: WxMode::TiedAverage,
            train_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if let Some(c) = self.clip {
            if c <= 0.0 {
                return Err(Error::InvalidArgument(format!("clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn trainable(&self, name: &str, mode: WxMode) -> bool {
        match name {
            "We" => self.train_embeddings,
            "Wx" => mode == WxMode::Free,
            _ => true,
        }
    }
}

/// Optimizer with its moment buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: TrainConfig,
    /// Adam first and second moments, one pair per tensor in visiting order.
    moments: Vec<(Vec<f64>, Vec<f64>)>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Non-finite gradients abort before anything changes.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let mode = params.wx_mode;
        let cfg = &self.config;

        let mut sq = 0.0;
        grads.0.visit(|name, _, xs| {
            if cfg.trainable(name, mode) {
                sq += xs.iter().map(|x| x * x).sum::<f64>();
            }
        });
        let norm = sq.sqrt();
        let clip_scale = match cfg.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        let mut g_slices: Vec<&[f64]> = Vec::new();
        grads.0.visit(|_, _, xs| g_slices.push(xs));
        self.steps += 1;
        let lr = cfg.learning_rate;

        match cfg.optimizer {
            OptimizerKind::Sgd => {
                let mut idx = 0;
                params.visit_mut(|name, xs| {
                    if cfg.trainable(name, mode) {
                        for (x, g) in xs.iter_mut().zip(g_slices[idx]) {
                            *x -= lr * clip_scale * g;
                        }
                    }
                    idx += 1;
                });
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.moments.is_empty() {
                    params.visit(|_, _, xs| self.moments.push((vec![0.0; xs.len()], vec![0.0; xs.len()])));
                }
                let moments = &mut self.moments;
                let t = self.steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let mut idx = 0;
                params.visit_mut(|name, xs| {
                    if cfg.trainable(name, mode) {
                        let (m, v) = &mut moments[idx];
                        for (k, x) in xs.iter_mut().enumerate() {
                            let g = clip_scale * g_slices[idx][k];
                            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                            let m_hat = m[k] / bc1;
                            let v_hat = v[k] / bc2;
                            *x -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                    idx += 1;
                });
            }
        }
        if mode == WxMode::TiedAverage && cfg.train_embeddings {
            params.sync_tied_wx();
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub token_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<EpochStats>,
}

/// Component-wise mean of the sample features.
pub fn feature_mean(samples: &[Sample]) -> Result<Vector> {
    let first = samples.first().ok_or(Error::Empty("feature_mean"))?;
    let mut acc = vec![0.0; first.features.len()];
    for s in samples {
        acc.iter_mut()
            .zip(s.features.as_slice())
            .for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= samples.len() as f64);
    Vector::new(acc)
}

/// Mini-batch BPTT training. Every random choice derives from `config.seed`.
pub fn train(
    dataset: &[Sample],
    we: Mat,
    config: &TrainConfig,
    hyper: &HyperParams,
) -> Result<TrainOutcome> {
    train_with_progress(dataset, we, config, hyper, |_| {})
}

pub fn train_with_progress(
    dataset: &[Sample],
    we: Mat,
    config: &TrainConfig,
    hyper: &HyperParams,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("train"));
    }
    for s in dataset {
        check_target(&s.caption, hyper)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mean = feature_mean(dataset)?;
    let mut params = ModelParams::init_random(hyper, config.wx_mode, we, mean, &mut rng)?;
    let mut optimizer = Optimizer::new(config.clone());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let last_good = params.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc = GradientSet::zeros_like(&params);
            for &i in batch {
                let s = &dataset[i];
                let (loss, g) = loss_and_gradients(&s.features, &s.caption, &params, hyper)?;
                loss_sum += loss.value;
                correct += loss.correct_tokens;
                tokens += loss.tokens;
                acc.add_scaled(&g, 1.0);
            }
            acc.scale(1.0 / batch.len() as f64);
            if acc.first_non_finite().is_some() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            optimizer.step(&mut params, &acc)?;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            token_accuracy: correct as f64 / tokens as f64,
        };
        if !stats.mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_good: Box::new(last_good),
            });
        }
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome { params, curve })
}

/// Accuracy of a model on a set of captions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub teacher_forced_token_accuracy: f64,
    pub exact_match: f64,
    pub mean_loss: f64,
}

pub fn evaluate(params: &ModelParams, hyper: &HyperParams, samples: &[Sample]) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let mut correct = 0;
    let mut tokens = 0;
    let mut exact = 0;
    let mut loss = 0.0;
    for s in samples {
        let l = caption_loss(&s.features, &s.caption, params, hyper)?;
        correct += l.correct_tokens;
        tokens += l.tokens;
        loss += l.value;
        let g = crate::model::forward_caption(
            &s.features,
            params,
            hyper,
            None,
            crate::model::Decoding::Greedy,
        )?;
        if g.word_ids == s.caption {
            exact += 1;
        }
    }
    Ok(EvalStats {
        teacher_forced_token_accuracy: correct as f64 / tokens as f64,
        exact_match: exact as f64 / samples.len() as f64,
        mean_loss: loss / samples.len() as f64,
    })
}

/// `epoch,mean_loss,token_accuracy` with a header row.
pub fn write_loss_csv<W: Write>(curve: &[EpochStats], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_loss,token_accuracy")?;
    for s in curve {
        writeln!(out, "{},{},{}", s.epoch, s.mean_loss, s.token_accuracy)?;
    }
    Ok(())
}
