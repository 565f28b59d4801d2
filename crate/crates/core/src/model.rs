//! TPGN forward computation.
//!
//! Two coupled LSTMs run in lockstep. The sentence-encoding cell S carries a
//! `d x d` matrix state `S_hat`; the unbinding cell U carries a `d`-vector
//! state `p`. At every step U emits a `d^2` unbinding vector `u`, the filler
//! `f` is read out of the block-diagonal lift of `S_hat`, and a softmax over
//! the vocabulary decodes it into a word.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{mismatch, Error, Result};
use crate::tensor::{
    dot, matvec_into, sigmoid, softmax_slice, Mat, Tensor3, Tensor4, Vector,
};

/// LSTM gates in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Cell];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Cell => "c",
        }
    }
}

/// How the de-embedding `Wx` relates to the embedding `We`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WxMode {
    /// `Wx f = We^T f_bar`, with `f_bar` the mean of the `d` blocks of `f`.
    TiedAverage,
    /// `Wx` is a free, trainable `V x d^2` matrix.
    Free,
}

impl WxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WxMode::TiedAverage => "tied",
            WxMode::Free => "free",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tied" | "tied-average" => Ok(WxMode::TiedAverage),
            "free" => Ok(WxMode::Free),
            other => Err(Error::InvalidArgument(format!("unknown Wx mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HyperParams {
    pub d: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub max_len: usize,
    pub start_id: usize,
    pub end_id: usize,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidArgument(format!("d must be >= 2, got {}", self.d)));
        }
        if self.vocab_size < 3 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs start, end and at least one word, got V={}",
                self.vocab_size
            )));
        }
        if self.feature_dim == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument("feature_dim and max_len must be positive".into()));
        }
        if self.start_id >= self.vocab_size || self.end_id >= self.vocab_size {
            return Err(Error::InvalidArgument("start/end id outside vocabulary".into()));
        }
        if self.start_id == self.end_id {
            return Err(Error::InvalidArgument("start and end ids must differ".into()));
        }
        Ok(())
    }
}

/// Every trainable tensor of the model plus the feature mean used to centre `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w1: [Tensor3; 4],
    pub d1: [Tensor3; 4],
    pub u1: [Tensor4; 4],
    pub b1: [Mat; 4],
    pub cs: Tensor3,
    pub w2: [Vector; 4],
    pub d2: [Mat; 4],
    pub u2: [Mat; 4],
    pub b2: [Vector; 4],
    pub wu: Mat,
    pub bu: Vector,
    pub we: Mat,
    pub wx: Mat,
    pub bx: Vector,
    pub feature_mean: Vector,
    pub wx_mode: WxMode,
}

impl ModelParams {
    pub fn zeros(hyper: &HyperParams, wx_mode: WxMode) -> Self {
        let d = hyper.d;
        let v = hyper.vocab_size;
        Self {
            w1: std::array::from_fn(|_| Tensor3::zeros([d, d, d])),
            d1: std::array::from_fn(|_| Tensor3::zeros([d, d, d])),
            u1: std::array::from_fn(|_| Tensor4::zeros([d, d, d, d])),
            b1: std::array::from_fn(|_| Mat::zeros(d, d)),
            cs: Tensor3::zeros([d, d, hyper.feature_dim]),
            w2: std::array::from_fn(|_| Vector::zeros(d)),
            d2: std::array::from_fn(|_| Mat::zeros(d, d)),
            u2: std::array::from_fn(|_| Mat::zeros(d, d)),
            b2: std::array::from_fn(|_| Vector::zeros(d)),
            wu: Mat::zeros(d * d, d),
            bu: Vector::zeros(d * d),
            we: Mat::zeros(d, v),
            wx: Mat::zeros(v, d * d),
            bx: Vector::zeros(v),
            feature_mean: Vector::zeros(hyper.feature_dim),
            wx_mode,
        }
    }

    /// Uniform(-a, a) weights with `a = 1/sqrt(fan_in)`, zero biases, forget
    /// biases at +1. `we` is installed as given.
    pub fn init_random<R: Rng + ?Sized>(
        hyper: &HyperParams,
        wx_mode: WxMode,
        we: Mat,
        feature_mean: Vector,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        if we.shape() != (hyper.d, hyper.vocab_size) {
            return Err(mismatch(
                "init_random: We",
                format!("({}, {})", hyper.d, hyper.vocab_size),
                format!("{:?}", we.shape()),
            ));
        }
        if feature_mean.len() != hyper.feature_dim {
            return Err(mismatch("init_random: feature mean", hyper.feature_dim, feature_mean.len()));
        }
        let d = hyper.d as f64;
        let mut p = Self::zeros(hyper, wx_mode);
        let mut fill = |xs: &mut [f64], fan_in: f64| {
            let a = 1.0 / fan_in.sqrt();
            for x in xs {
                *x = rng.random_range(-a..a);
            }
        };
        for g in 0..4 {
            fill(p.w1[g].as_mut_slice(), d);
            fill(p.d1[g].as_mut_slice(), d);
            fill(p.u1[g].as_mut_slice(), d * d);
            fill(p.w2[g].as_mut_slice(), d);
            fill(p.d2[g].as_mut_slice(), d);
            fill(p.u2[g].as_mut_slice(), d);
        }
        fill(p.cs.as_mut_slice(), hyper.feature_dim as f64);
        fill(p.wu.as_mut_slice(), d);
        fill(p.wx.as_mut_slice(), d * d);
        p.b1[0].as_mut_slice().fill(1.0);
        p.b2[0].as_mut_slice().fill(1.0);
        p.we = we;
        p.feature_mean = feature_mean;
        if wx_mode == WxMode::TiedAverage {
            p.sync_tied_wx();
        }
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.we.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.we.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.cs.dims()[2]
    }

    /// The `V x d^2` matrix equivalent to tied-average decoding:
    /// `Wx[j][k*d + i] = We[i][j] / d`.
    pub fn tied_wx(&self) -> Mat {
        let d = self.d();
        Mat::from_fn(self.vocab_size(), d * d, |j, col| self.we.get(col % d, j) / d as f64)
    }

    /// Refresh the stored `Wx` from `We` (tied mode keeps them in step).
    pub fn sync_tied_wx(&mut self) {
        self.wx = self.tied_wx();
    }

    /// Visit every named tensor in a fixed order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, &[usize], &'a [f64])) {
        for (g, gate) in Gate::ALL.iter().enumerate() {
            let s = gate.suffix();
            f(&format!("W1_{s}"), &self.w1[g].dims(), self.w1[g].as_slice());
            f(&format!("D1_{s}"), &self.d1[g].dims(), self.d1[g].as_slice());
            f(&format!("U1_{s}"), &self.u1[g].dims(), self.u1[g].as_slice());
            f(&format!("b1_{s}"), &[self.b1[g].rows(), self.b1[g].cols()], self.b1[g].as_slice());
        }
        f("Cs", &self.cs.dims(), self.cs.as_slice());
        for (g, gate) in Gate::ALL.iter().enumerate() {
            let s = gate.suffix();
            f(&format!("w2_{s}"), &[self.w2[g].len()], self.w2[g].as_slice());
            f(&format!("D2_{s}"), &[self.d2[g].rows(), self.d2[g].cols()], self.d2[g].as_slice());
            f(&format!("U2_{s}"), &[self.u2[g].rows(), self.u2[g].cols()], self.u2[g].as_slice());
            f(&format!("b2_{s}"), &[self.b2[g].len()], self.b2[g].as_slice());
        }
        f("Wu", &[self.wu.rows(), self.wu.cols()], self.wu.as_slice());
        f("bu", &[self.bu.len()], self.bu.as_slice());
        f("We", &[self.we.rows(), self.we.cols()], self.we.as_slice());
        f("Wx", &[self.wx.rows(), self.wx.cols()], self.wx.as_slice());
        f("bx", &[self.bx.len()], self.bx.as_slice());
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (g, gate) in Gate::ALL.iter().enumerate() {
            let s = gate.suffix();
            f(&format!("W1_{s}"), self.w1[g].as_mut_slice());
            f(&format!("D1_{s}"), self.d1[g].as_mut_slice());
            f(&format!("U1_{s}"), self.u1[g].as_mut_slice());
            f(&format!("b1_{s}"), self.b1[g].as_mut_slice());
        }
        f("Cs", self.cs.as_mut_slice());
        for (g, gate) in Gate::ALL.iter().enumerate() {
            let s = gate.suffix();
            f(&format!("w2_{s}"), self.w2[g].as_mut_slice());
            f(&format!("D2_{s}"), self.d2[g].as_mut_slice());
            f(&format!("U2_{s}"), self.u2[g].as_mut_slice());
            f(&format!("b2_{s}"), self.b2[g].as_mut_slice());
        }
        f("Wu", self.wu.as_mut_slice());
        f("bu", self.bu.as_mut_slice());
        f("We", self.we.as_mut_slice());
        f("Wx", self.wx.as_mut_slice());
        f("bx", self.bx.as_mut_slice());
    }

    /// Names in visiting order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(|n, _, _| names.push(n.to_string()));
        names
    }

    pub fn check_hyper(&self, hyper: &HyperParams) -> Result<()> {
        if self.d() != hyper.d
            || self.vocab_size() != hyper.vocab_size
            || self.feature_dim() != hyper.feature_dim
        {
            return Err(mismatch(
                "model/hyper",
                format!("d={} V={} d_v={}", hyper.d, hyper.vocab_size, hyper.feature_dim),
                format!("d={} V={} d_v={}", self.d(), self.vocab_size(), self.feature_dim()),
            ));
        }
        Ok(())
    }
}

/// Recurrent state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TpgnState {
    pub s_hat: Mat,
    pub c1: Mat,
    pub p: Vector,
    pub c2: Vector,
    pub prev_word: usize,
}

/// `S_hat_0 = Cs (v - v_mean)`, every other state zero, previous word = start.
pub fn init_state(
    v: &Vector,
    v_mean: &Vector,
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<TpgnState> {
    if v.len() != hyper.feature_dim || v_mean.len() != hyper.feature_dim {
        return Err(mismatch(
            "init_state",
            hyper.feature_dim,
            format!("v={} v_mean={}", v.len(), v_mean.len()),
        ));
    }
    let s_hat = crate::tensor::order3_apply(&params.cs, &v.sub(v_mean))?;
    let d = hyper.d;
    Ok(TpgnState {
        s_hat,
        c1: Mat::zeros(d, d),
        p: Vector::zeros(d),
        c2: Vector::zeros(d),
        prev_word: hyper.start_id,
    })
}

/// Activations of one S-cell step, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct SCellCache {
    /// `[f, i, o, g]`, each `d*d`, after their nonlinearity.
    pub gates: [Vec<f64>; 4],
    pub c1: Vec<f64>,
    pub tanh_c1: Vec<f64>,
    pub s_hat: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct UCellCache {
    pub gates: [Vec<f64>; 4],
    pub c2: Vec<f64>,
    pub tanh_c2: Vec<f64>,
    pub p: Vec<f64>,
}

fn embedding(params: &ModelParams, word: usize) -> Vec<f64> {
    params.we.column(word).into_vec()
}

pub(crate) fn s_cell_forward(
    s_prev: &[f64],
    c1_prev: &[f64],
    p_prev: &[f64],
    emb: &[f64],
    params: &ModelParams,
) -> SCellCache {
    let d = params.d();
    let dd = d * d;
    let mut tmp = vec![0.0; dd];
    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut pre = params.b1[g].as_slice().to_vec();
        matvec_into(params.w1[g].as_slice(), dd, d, p_prev, &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        matvec_into(params.d1[g].as_slice(), dd, d, emb, &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a -= b);
        matvec_into(params.u1[g].as_slice(), dd, dd, s_prev, &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        if g == 3 {
            pre.iter_mut().for_each(|x| *x = x.tanh());
        } else {
            pre.iter_mut().for_each(|x| *x = sigmoid(*x));
        }
        pre
    });
    let c1: Vec<f64> = (0..dd)
        .map(|k| gates[0][k] * c1_prev[k] + gates[1][k] * gates[3][k])
        .collect();
    let tanh_c1: Vec<f64> = c1.iter().map(|x| x.tanh()).collect();
    let s_hat = (0..dd).map(|k| gates[2][k] * tanh_c1[k]).collect();
    SCellCache {
        gates,
        c1,
        tanh_c1,
        s_hat,
    }
}

pub(crate) fn u_cell_forward(
    s_prev: &[f64],
    c2_prev: &[f64],
    p_prev: &[f64],
    emb: &[f64],
    params: &ModelParams,
) -> UCellCache {
    let d = params.d();
    let mut tmp = vec![0.0; d];
    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut pre = params.b2[g].as_slice().to_vec();
        matvec_into(s_prev, d, d, params.w2[g].as_slice(), &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        matvec_into(params.d2[g].as_slice(), d, d, emb, &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a -= b);
        matvec_into(params.u2[g].as_slice(), d, d, p_prev, &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        if g == 3 {
            pre.iter_mut().for_each(|x| *x = x.tanh());
        } else {
            pre.iter_mut().for_each(|x| *x = sigmoid(*x));
        }
        pre
    });
    let c2: Vec<f64> = (0..d)
        .map(|k| gates[0][k] * c2_prev[k] + gates[1][k] * gates[3][k])
        .collect();
    let tanh_c2: Vec<f64> = c2.iter().map(|x| x.tanh()).collect();
    let p = (0..d).map(|k| gates[2][k] * tanh_c2[k]).collect();
    UCellCache {
        gates,
        c2,
        tanh_c2,
        p,
    }
}

fn check_state(state: &TpgnState, params: &ModelParams) -> Result<()> {
    let d = params.d();
    if state.s_hat.shape() != (d, d) || state.c1.shape() != (d, d) {
        return Err(mismatch("state", format!("({d}, {d})"), format!("{:?}", state.s_hat.shape())));
    }
    if state.p.len() != d || state.c2.len() != d {
        return Err(mismatch("state", d, state.p.len()));
    }
    if state.prev_word >= params.vocab_size() {
        return Err(Error::IndexOutOfRange {
            index: state.prev_word,
            len: params.vocab_size(),
        });
    }
    Ok(())
}

/// One step of the sentence-encoding cell. Returns `(S_hat_t, c1_t)`.
pub fn s_cell_step(state: &TpgnState, params: &ModelParams) -> Result<(Mat, Mat)> {
    check_state(state, params)?;
    let d = params.d();
    let emb = embedding(params, state.prev_word);
    let cache = s_cell_forward(
        state.s_hat.as_slice(),
        state.c1.as_slice(),
        state.p.as_slice(),
        &emb,
        params,
    );
    Ok((Mat::from_raw(d, d, cache.s_hat), Mat::from_raw(d, d, cache.c1)))
}

/// One step of the unbinding cell. Returns `(p_t, c2_t)`.
pub fn u_cell_step(state: &TpgnState, params: &ModelParams) -> Result<(Vector, Vector)> {
    check_state(state, params)?;
    let emb = embedding(params, state.prev_word);
    let cache = u_cell_forward(
        state.s_hat.as_slice(),
        state.c2.as_slice(),
        state.p.as_slice(),
        &emb,
        params,
    );
    Ok((Vector::from_raw(cache.p), Vector::from_raw(cache.c2)))
}

pub(crate) fn unbinding_raw(p: &[f64], params: &ModelParams) -> Vec<f64> {
    let d = params.d();
    let mut u = vec![0.0; d * d];
    matvec_into(params.wu.as_slice(), d * d, d, p, &mut u);
    u.iter_mut()
        .zip(params.bu.as_slice())
        .for_each(|(x, b)| *x = (*x + b).tanh());
    u
}

/// `u = tanh(Wu p + bu)`, a `d^2` vector.
pub fn compute_unbinding(p: &Vector, params: &ModelParams) -> Result<Vector> {
    if p.len() != params.d() {
        return Err(mismatch("compute_unbinding", params.d(), p.len()));
    }
    Ok(Vector::from_raw(unbinding_raw(p.as_slice(), params)))
}

pub(crate) fn unbind_filler_raw(s_hat: &[f64], u: &[f64], d: usize) -> Vec<f64> {
    let mut f = vec![0.0; d * d];
    for (u_k, f_k) in u.chunks_exact(d).zip(f.chunks_exact_mut(d)) {
        matvec_into(s_hat, d, d, u_k, f_k);
    }
    f
}

/// `f = blockdiag(S_hat, ..., S_hat) u`, computed block by block.
pub fn unbind_filler(s_hat: &Mat, u: &Vector) -> Result<Vector> {
    let d = s_hat.rows();
    if s_hat.cols() != d {
        return Err(mismatch("unbind_filler", "square S_hat", format!("{:?}", s_hat.shape())));
    }
    if u.len() != d * d {
        return Err(mismatch("unbind_filler", d * d, u.len()));
    }
    Ok(Vector::from_raw(unbind_filler_raw(s_hat.as_slice(), u.as_slice(), d)))
}

pub(crate) fn logits_raw(f: &[f64], params: &ModelParams) -> Vec<f64> {
    let d = params.d();
    let v = params.vocab_size();
    let mut logits = params.bx.as_slice().to_vec();
    match params.wx_mode {
        WxMode::TiedAverage => {
            let f_bar = block_mean(f, d);
            let we = params.we.as_slice();
            for (j, l) in logits.iter_mut().enumerate() {
                let mut s = 0.0;
                for (i, fb) in f_bar.iter().enumerate() {
                    s += we[i * v + j] * fb;
                }
                *l += s;
            }
        }
        WxMode::Free => {
            let wx = params.wx.as_slice();
            for (j, l) in logits.iter_mut().enumerate() {
                *l += dot(&wx[j * d * d..(j + 1) * d * d], f);
            }
        }
    }
    logits
}

pub(crate) fn block_mean(f: &[f64], d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for block in f.chunks_exact(d) {
        mean.iter_mut().zip(block).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= d as f64);
    mean
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    /// Argmax; ties go to the lowest word id.
    Greedy,
    /// Sample from the softmax with a seeded generator.
    Sample { seed: u64 },
}

/// Word selection from a probability vector.
pub(crate) enum Picker {
    Greedy,
    Sample(ChaCha8Rng),
}

impl Picker {
    pub(crate) fn new(decoding: Decoding) -> Self {
        match decoding {
            Decoding::Greedy => Picker::Greedy,
            Decoding::Sample { seed } => Picker::Sample(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub(crate) fn pick(&mut self, probs: &[f64]) -> usize {
        match self {
            Picker::Greedy => crate::tensor::argmax(probs),
            Picker::Sample(rng) => {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (i, &p) in probs.iter().enumerate() {
                    acc += p;
                    if r < acc {
                        return i;
                    }
                }
                probs.len() - 1
            }
        }
    }
}

/// Softmax over `Wx f + bx`, plus the chosen word.
pub fn decode_word(f: &Vector, params: &ModelParams, decoding: Decoding) -> Result<(Vector, usize)> {
    let d = params.d();
    if f.len() != d * d {
        return Err(mismatch("decode_word", d * d, f.len()));
    }
    let probs = softmax_slice(&logits_raw(f.as_slice(), params));
    let word = Picker::new(decoding).pick(&probs);
    Ok((Vector::from_raw(probs), word))
}

/// Per-step values recorded during generation.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub u: Vector,
    pub f: Vector,
    pub probs: Vector,
    pub word: usize,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub word_ids: Vec<usize>,
    pub steps: Vec<StepRecord>,
}

/// Run the full recurrence for one feature vector.
///
/// With `teacher`, exactly `teacher.len()` steps run and the teacher token is
/// fed back; otherwise the model's own choice is fed back and generation
/// stops after emitting `end_id` or `max_len` words.
pub fn forward_caption(
    v: &Vector,
    params: &ModelParams,
    hyper: &HyperParams,
    teacher: Option<&[usize]>,
    decoding: Decoding,
) -> Result<Generation> {
    params.check_hyper(hyper)?;
    if let Some(t) = teacher {
        if t.len() > hyper.max_len {
            return Err(Error::InvalidArgument(format!(
                "teacher length {} exceeds max_len {}",
                t.len(),
                hyper.max_len
            )));
        }
        if let Some(&bad) = t.iter().find(|&&w| w >= hyper.vocab_size) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: hyper.vocab_size,
            });
        }
    }
    let d = hyper.d;
    let state = init_state(v, &params.feature_mean, params, hyper)?;
    let mut s_hat = state.s_hat.into_vec();
    let mut c1 = vec![0.0; d * d];
    let mut p = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    let mut prev = hyper.start_id;
    let mut picker = Picker::new(decoding);
    let steps_max = teacher.map_or(hyper.max_len, <[usize]>::len);

    let mut out = Generation {
        word_ids: Vec::new(),
        steps: Vec::new(),
    };
    for t in 0..steps_max {
        let emb = embedding(params, prev);
        let s = s_cell_forward(&s_hat, &c1, &p, &emb, params);
        let uc = u_cell_forward(&s_hat, &c2, &p, &emb, params);
        s_hat = s.s_hat;
        c1 = s.c1;
        p = uc.p;
        c2 = uc.c2;
        let u = unbinding_raw(&p, params);
        let f = unbind_filler_raw(&s_hat, &u, d);
        let probs = softmax_slice(&logits_raw(&f, params));
        let word = picker.pick(&probs);
        out.word_ids.push(word);
        out.steps.push(StepRecord {
            u: Vector::from_raw(u),
            f: Vector::from_raw(f),
            probs: Vector::from_raw(probs),
            word,
        });
        match teacher {
            Some(tokens) => prev = tokens[t],
            None => {
                if word == hyper.end_id {
                    break;
                }
                prev = word;
            }
        }
    }
    Ok(out)
}
