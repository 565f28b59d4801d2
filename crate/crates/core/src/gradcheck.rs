//! Finite-difference verification of the analytic gradients.
//!
//! The numeric side re-evaluates the caption loss with a separate forward
//! pass in 128-bit MPFR arithmetic, so rounding in the loss does not swamp
//! the central difference for small gradient entries.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Float;

use crate::error::{mismatch, Result};
use crate::model::{HyperParams, ModelParams, WxMode};
use crate::tensor::Vector;
use crate::train::loss_and_gradients;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;
const PREC: u32 = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    /// Entries whose `|analytic| + |numeric|` exceeded the floor.
    pub checked: usize,
    pub skipped: usize,
}

/// A random model with `V = 5`, `T = 4`, `d_v = 4` and entries drawn from
/// `[-0.5, 0.5)`, together with a feature vector and a target caption.
pub fn random_check_problem(
    d: usize,
    seed: u64,
    mode: WxMode,
) -> Result<(ModelParams, HyperParams, Vector, Vec<usize>)> {
    let hyper = HyperParams {
        d,
        vocab_size: 5,
        feature_dim: 4,
        max_len: 4,
        start_id: 3,
        end_id: 4,
    };
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(&hyper, mode);
    params.visit_mut(|_, xs| xs.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5)));
    params
        .feature_mean
        .as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = rng.random_range(-0.5..0.5));
    if mode == WxMode::TiedAverage {
        params.sync_tied_wx();
    }
    let v = Vector::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut target: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
    target.push(hyper.end_id);
    Ok((params, hyper, v, target))
}

fn fl(x: f64) -> Float {
    Float::with_val(PREC, x)
}

fn sigmoid(x: &Float) -> Float {
    let e = Float::with_val(PREC, -x).exp();
    Float::with_val(PREC, 1) / (e + 1u32)
}

/// Parameters converted to MPFR, addressed by tensor name.
pub struct ReferenceModel {
    tensors: Vec<Vec<Float>>,
    index: HashMap<String, usize>,
    feature_mean: Vec<Float>,
    mode: WxMode,
}

impl ReferenceModel {
    pub fn new(params: &ModelParams) -> Self {
        let mut tensors = Vec::new();
        let mut index = HashMap::new();
        params.visit(|name, _, xs| {
            index.insert(name.to_string(), tensors.len());
            tensors.push(xs.iter().map(|&x| fl(x)).collect());
        });
        Self {
            tensors,
            index,
            feature_mean: params.feature_mean.as_slice().iter().map(|&x| fl(x)).collect(),
            mode: params.wx_mode,
        }
    }

    fn t(&self, name: &str) -> &[Float] {
        &self.tensors[self.index[name]]
    }

    /// Mean over steps of `-ln p(target_t)`, teacher forced.
    pub fn loss(&self, v: &Vector, target: &[usize], hyper: &HyperParams) -> Float {
        let d = hyper.d;
        let nv = hyper.vocab_size;
        let dv = hyper.feature_dim;
        let zero = || fl(0.0);
        let x: Vec<Float> = (0..dv)
            .map(|k| Float::with_val(PREC, v.as_slice()[k]) - &self.feature_mean[k])
            .collect();
        let cs = self.t("Cs");
        let mut s: Vec<Float> = (0..d * d)
            .map(|ij| {
                let mut acc = zero();
                for k in 0..dv {
                    acc += Float::with_val(PREC, &cs[ij * dv + k] * &x[k]);
                }
                acc
            })
            .collect();
        let mut c1: Vec<Float> = vec![zero(); d * d];
        let mut p: Vec<Float> = vec![zero(); d];
        let mut c2: Vec<Float> = vec![zero(); d];
        let we = self.t("We");
        let mut prev = hyper.start_id;
        let mut total = zero();
        for &word in target {
            let emb: Vec<Float> = (0..d).map(|i| we[i * nv + prev].clone()).collect();

            let mut sg: Vec<Vec<Float>> = Vec::new();
            for g in ["f", "i", "o", "c"] {
                let w1 = self.t(&format!("W1_{g}"));
                let d1 = self.t(&format!("D1_{g}"));
                let u1 = self.t(&format!("U1_{g}"));
                let b1 = self.t(&format!("b1_{g}"));
                let act: Vec<Float> = (0..d * d)
                    .map(|ij| {
                        let mut pre = b1[ij].clone();
                        for k in 0..d {
                            pre += Float::with_val(PREC, &w1[ij * d + k] * &p[k]);
                            pre -= Float::with_val(PREC, &d1[ij * d + k] * &emb[k]);
                        }
                        for kl in 0..d * d {
                            pre += Float::with_val(PREC, &u1[ij * d * d + kl] * &s[kl]);
                        }
                        if g == "c" {
                            pre.tanh()
                        } else {
                            sigmoid(&pre)
                        }
                    })
                    .collect();
                sg.push(act);
            }

            let mut ug: Vec<Vec<Float>> = Vec::new();
            for g in ["f", "i", "o", "c"] {
                let w2 = self.t(&format!("w2_{g}"));
                let d2 = self.t(&format!("D2_{g}"));
                let u2 = self.t(&format!("U2_{g}"));
                let b2 = self.t(&format!("b2_{g}"));
                let act: Vec<Float> = (0..d)
                    .map(|i| {
                        let mut pre = b2[i].clone();
                        for k in 0..d {
                            pre += Float::with_val(PREC, &s[i * d + k] * &w2[k]);
                            pre -= Float::with_val(PREC, &d2[i * d + k] * &emb[k]);
                            pre += Float::with_val(PREC, &u2[i * d + k] * &p[k]);
                        }
                        if g == "c" {
                            pre.tanh()
                        } else {
                            sigmoid(&pre)
                        }
                    })
                    .collect();
                ug.push(act);
            }

            for ij in 0..d * d {
                c1[ij] = Float::with_val(PREC, &sg[0][ij] * &c1[ij]) + Float::with_val(PREC, &sg[1][ij] * &sg[3][ij]);
                s[ij] = Float::with_val(PREC, &sg[2][ij] * Float::with_val(PREC, c1[ij].tanh_ref()));
            }
            for i in 0..d {
                c2[i] = Float::with_val(PREC, &ug[0][i] * &c2[i]) + Float::with_val(PREC, &ug[1][i] * &ug[3][i]);
                p[i] = Float::with_val(PREC, &ug[2][i] * Float::with_val(PREC, c2[i].tanh_ref()));
            }

            let wu = self.t("Wu");
            let bu = self.t("bu");
            let u: Vec<Float> = (0..d * d)
                .map(|r| {
                    let mut z = bu[r].clone();
                    for k in 0..d {
                        z += Float::with_val(PREC, &wu[r * d + k] * &p[k]);
                    }
                    z.tanh()
                })
                .collect();
            let f: Vec<Float> = (0..d * d)
                .map(|bi| {
                    let (b, i) = (bi / d, bi % d);
                    let mut acc = zero();
                    for j in 0..d {
                        acc += Float::with_val(PREC, &s[i * d + j] * &u[b * d + j]);
                    }
                    acc
                })
                .collect();

            let bx = self.t("bx");
            let logits: Vec<Float> = match self.mode {
                WxMode::TiedAverage => {
                    let fbar: Vec<Float> = (0..d)
                        .map(|i| {
                            let mut acc = zero();
                            for b in 0..d {
                                acc += &f[b * d + i];
                            }
                            acc / d as u32
                        })
                        .collect();
                    (0..nv)
                        .map(|w| {
                            let mut l = bx[w].clone();
                            for i in 0..d {
                                l += Float::with_val(PREC, &we[i * nv + w] * &fbar[i]);
                            }
                            l
                        })
                        .collect()
                }
                WxMode::Free => {
                    let wx = self.t("Wx");
                    (0..nv)
                        .map(|w| {
                            let mut l = bx[w].clone();
                            for r in 0..d * d {
                                l += Float::with_val(PREC, &wx[w * d * d + r] * &f[r]);
                            }
                            l
                        })
                        .collect()
                }
            };
            let mut z = zero();
            for l in &logits {
                z += Float::with_val(PREC, l.exp_ref());
            }
            total += z.ln() - &logits[word];
            prev = word;
        }
        total / target.len() as u32
    }
}

/// Analytic gradients against central differences of the MPFR loss, with
/// step [`GRAD_CHECK_STEP`], over every entry of every tensor.
pub fn gradient_check(
    params: &ModelParams,
    hyper: &HyperParams,
    v: &Vector,
    target: &[usize],
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(v, target, params, hyper)?;
    if v.len() != hyper.feature_dim {
        return Err(mismatch("gradient_check", hyper.feature_dim, v.len()));
    }
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    grads.0.visit(|name, _, xs| analytic.push((name.to_string(), xs.to_vec())));

    let mut reference = ReferenceModel::new(params);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
        skipped: 0,
    };
    for (t, (name, a)) in analytic.iter().enumerate() {
        for (k, &ga) in a.iter().enumerate() {
            let base = reference.tensors[t][k].clone();
            reference.tensors[t][k] = Float::with_val(PREC, &base + GRAD_CHECK_STEP);
            let plus = reference.loss(v, target, hyper);
            reference.tensors[t][k] = Float::with_val(PREC, &base - GRAD_CHECK_STEP);
            let minus = reference.loss(v, target, hyper);
            reference.tensors[t][k] = base;
            let numeric = ((plus - minus) / (2.0 * GRAD_CHECK_STEP)).to_f64();

            let denom = ga.abs() + numeric.abs();
            if denom <= GRAD_CHECK_FLOOR {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let rel = (ga - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
            }
        }
    }
    Ok(report)
}
