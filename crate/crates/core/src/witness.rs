//! Hand-built parameters under which the generator reads a three-word
//! structure back out of its initial state by unbinding.
//!
//! The initial sentence state is the TPR `sum_k e(w_k) r_k^T` with Hadamard
//! rows as roles. The S cell keeps its sign pattern with saturated gates, the
//! U cell runs a content-independent shift register, and `Wu` is solved so
//! that step `k` produces the (blockwise repeated) dual of role `k`, then zero.

use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelParams, WxMode};
use crate::tensor::{invert_or_pinv, Mat, Vector};
use crate::tpr::{bind_and_superpose, make_role_basis, Binding};

const D: usize = 4;
const GATE_BIAS: f64 = 30.0;
const CELL_GAIN: f64 = 5.0;
const SHIFT_GAIN: f64 = 20.0;
const UNBIND_SCALE: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct Witness {
    pub params: ModelParams,
    pub hyper: HyperParams,
    pub features: Vector,
    /// `w1 w2 w3 <end>`.
    pub expected: Vec<usize>,
}

fn hadamard_row(k: usize) -> Vector {
    const H: [[f64; D]; D] = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    Vector::new(H[k].to_vec()).expect("finite")
}

/// Words are ids `0..4`; ids 4 and 5 are start and end.
pub fn tpr_witness(words: [usize; 3]) -> Result<Witness> {
    if let Some(&w) = words.iter().find(|&&w| w >= D) {
        return Err(Error::IndexOutOfRange { index: w, len: D });
    }
    let hyper = HyperParams {
        d: D,
        vocab_size: D + 2,
        feature_dim: 1,
        max_len: 6,
        start_id: D,
        end_id: D + 1,
    };
    let mut p = ModelParams::zeros(&hyper, WxMode::TiedAverage);

    p.we = Mat::from_fn(D, D + 2, |i, j| if i == j { 1.0 } else { 0.0 });
    p.bx.as_mut_slice()[hyper.end_id] = 0.01;

    let basis = make_role_basis((1..=3).map(hadamard_row).collect())?;
    let bindings: Vec<Binding> = words
        .iter()
        .enumerate()
        .map(|(k, &w)| Binding::new(Vector::basis(D, w), k))
        .collect();
    let s0 = bind_and_superpose(&bindings, &basis)?;
    p.cs.as_mut_slice().copy_from_slice(s0.matrix().as_slice());

    // S cell: forget closed, input and output open, candidate = tanh(gain * S)
    p.b1[0].as_mut_slice().fill(-GATE_BIAS);
    p.b1[1].as_mut_slice().fill(GATE_BIAS);
    p.b1[2].as_mut_slice().fill(GATE_BIAS);
    let dd = D * D;
    let u1c = p.u1[3].as_mut_slice();
    for k in 0..dd {
        u1c[k * dd + k] = CELL_GAIN;
    }

    // U cell: p[0] stays positive, p[j] copies the sign of p[j-1]
    p.b2[0].as_mut_slice().fill(-GATE_BIAS);
    p.b2[1].as_mut_slice().fill(GATE_BIAS);
    p.b2[2].as_mut_slice().fill(GATE_BIAS);
    for j in 1..D {
        p.u2[3].set(j, j - 1, SHIFT_GAIN);
    }
    let shift_bias: Vec<f64> = (0..D)
        .map(|j| if j == 0 { 0.3 } else { -0.3 } * SHIFT_GAIN)
        .collect();
    p.b2[3].as_mut_slice().copy_from_slice(&shift_bias);

    // Run the U cell alone to find p_1..p_4; it ignores S and the fed-back word.
    let mut ps = Vec::new();
    let (mut pt, mut c2) = (vec![0.0; D], vec![0.0; D]);
    let zero_s = vec![0.0; dd];
    let zero_e = vec![0.0; D];
    for _ in 0..4 {
        let cache = crate::model::u_cell_forward(&zero_s, &c2, &pt, &zero_e, &p);
        pt = cache.p;
        c2 = cache.c2;
        ps.push(pt.clone());
    }

    // Solve [p_t, 1] . [Wu_r, bu_r] = atanh(target_t[r]) for every row r.
    let design = Mat::from_fn(4, D + 1, |t, c| if c < D { ps[t][c] } else { 1.0 });
    let inv = invert_or_pinv(&design);
    if inv.rank < 4 {
        return Err(Error::InvalidArgument("witness U-cell states are degenerate".into()));
    }
    let targets: Vec<Vec<f64>> = (0..4)
        .map(|t| {
            (0..dd)
                .map(|r| {
                    if t < 3 {
                        (UNBIND_SCALE * basis.duals()[t][r % D]).atanh()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    for r in 0..dd {
        let z = Vector::new((0..4).map(|t| targets[t][r]).collect())?;
        let sol = inv.matrix.matvec(&z)?;
        for c in 0..D {
            p.wu.set(r, c, sol[c]);
        }
        p.bu.as_mut_slice()[r] = sol[D];
    }
    p.sync_tied_wx();

    let mut expected = words.to_vec();
    expected.push(hyper.end_id);
    Ok(Witness {
        params: p,
        hyper,
        features: Vector::new(vec![1.0])?,
        expected,
    })
}
