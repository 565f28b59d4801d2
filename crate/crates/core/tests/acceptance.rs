//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tpgn_core::checkpoint::Checkpoint;
use tpgn_core::data::{make_embeddings, sample_dataset, PosTag, Sample, SceneGrammar, Vocabulary};
use tpgn_core::gradcheck::{gradient_check, random_check_problem};
use tpgn_core::interpret::{
    assign_nearest, bleu_n, collect_unbinding, conformity_table, kmeans, nv_separation, Category,
    UnbindingRecord,
};
use tpgn_core::model::{forward_caption, unbind_filler, Decoding, HyperParams, WxMode};
use tpgn_core::tensor::{Mat, Vector};
use tpgn_core::tpr::{
    bind_and_superpose, generate_sequence, make_role_basis, random_orthonormal_roles, unbind, Binding,
};
use tpgn_core::train::{evaluate, train, write_loss_csv, TrainConfig, TrainOutcome};
use tpgn_core::witness::tpr_witness;

mod fixtures;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn gaussian_vector<R: Rng>(n: usize, rng: &mut R) -> Vector {
    Vector::new((0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn round_trip_error(basis_roles: Vec<Vector>, filler_dim: usize, rng: &mut ChaCha8Rng) -> f64 {
    let basis = make_role_basis(basis_roles).unwrap();
    let fillers: Vec<Vector> = (0..basis.len()).map(|_| gaussian_vector(filler_dim, rng)).collect();
    let bindings: Vec<Binding> = fillers
        .iter()
        .enumerate()
        .map(|(k, f)| Binding::new(f.clone(), k))
        .collect();
    let t = bind_and_superpose(&bindings, &basis).unwrap();
    (0..basis.len())
        .map(|k| unbind(&t, &basis, k).unwrap().max_abs_diff(&fillers[k]))
        .fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut ortho = 0.0f64;
    let mut indep = 0.0f64;
    for _ in 0..100 {
        let role_dim = rng.random_range(1..=8);
        let n_roles = rng.random_range(1..=role_dim);
        let filler_dim = rng.random_range(1..=8);
        let roles = random_orthonormal_roles(n_roles, role_dim, &mut rng).unwrap();
        ortho = ortho.max(round_trip_error(roles, filler_dim, &mut rng));

        let roles: Vec<Vector> = (0..n_roles).map(|_| gaussian_vector(role_dim, &mut rng)).collect();
        indep = indep.max(round_trip_error(roles, filler_dim, &mut rng));
    }
    let elapsed = start.elapsed();
    outcome(
        ortho < 1e-10 && indep < 1e-8 && within(elapsed, 5.0),
        format!("orthonormal max err {ortho:.2e} (<1e-10), independent {indep:.2e} (<1e-8), {elapsed:.2?} (<5s)"),
    )
}

fn criterion_2() -> Outcome {
    // fillers: Jay, Kay, saw; roles: subject, verb, object
    let jay = Vector::basis(3, 0);
    let kay = Vector::basis(3, 1);
    let saw = Vector::basis(3, 2);
    let basis = make_role_basis((0..3).map(|k| Vector::basis(3, k)).collect()).unwrap();
    let (subj, verb, obj) = (0, 1, 2);
    let jsk = bind_and_superpose(
        &[
            Binding::new(jay.clone(), subj),
            Binding::new(saw.clone(), verb),
            Binding::new(kay.clone(), obj),
        ],
        &basis,
    )
    .unwrap();
    let ksj = bind_and_superpose(
        &[
            Binding::new(kay.clone(), subj),
            Binding::new(saw.clone(), verb),
            Binding::new(jay.clone(), obj),
        ],
        &basis,
    )
    .unwrap();
    let seq = generate_sequence(&jsk, &basis, &[subj, verb, obj]).unwrap();
    let exact = seq == vec![jay, saw, kay];
    let differ = jsk.matrix().max_abs_diff(ksj.matrix());
    outcome(
        exact && differ > 0.0,
        format!("sequence (J, s, K) exact: {exact}; |T(Jay saw Kay) - T(Kay saw Jay)|max = {differ}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let w = tpr_witness([2, 0, 3]).unwrap();
    let gen = forward_caption(&w.features, &w.params, &w.hyper, None, Decoding::Greedy).unwrap();
    let elapsed = start.elapsed();
    outcome(
        gen.word_ids == w.expected && within(elapsed, 1.0),
        format!("emitted {:?}, expected {:?}, {elapsed:.2?} (<1s)", gen.word_ids, w.expected),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 1..=3 {
        for mode in [WxMode::TiedAverage, WxMode::Free] {
            let (p, hyper, v, target) = random_check_problem(3, seed, mode).unwrap();
            let r = gradient_check(&p, &hyper, &v, &target).unwrap();
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && within(elapsed, 120.0),
        format!("max relative error {worst:.2e} (<1e-4) over {checked} entries, 3 seeds x 2 Wx modes, {elapsed:.2?} (<2min)"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for d in 2..=4 {
        for _ in 0..100 {
            let s = Mat::from_fn(d, d, |_, _| rng.sample(StandardNormal));
            let u = gaussian_vector(d * d, &mut rng);
            let lifted = Mat::from_fn(d * d, d * d, |r, c| {
                if r / d == c / d {
                    s.get(r % d, c % d)
                } else {
                    0.0
                }
            });
            let naive = lifted.matvec(&u).unwrap();
            worst = worst.max(unbind_filler(&s, &u).unwrap().max_abs_diff(&naive));
        }
    }
    outcome(worst < 1e-12, format!("max |blockwise - materialized| = {worst:.2e} (<1e-12), d in 2..=4, 100 trials each"))
}

struct ToyRun {
    grammar: SceneGrammar,
    hyper: HyperParams,
    data: Vec<Sample>,
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn toy_hyper(grammar: &SceneGrammar, d: usize) -> HyperParams {
    HyperParams {
        d,
        vocab_size: grammar.vocab().len(),
        feature_dim: grammar.feature_dim(),
        max_len: grammar.max_len(),
        start_id: grammar.start_id(),
        end_id: grammar.end_id(),
    }
}

fn toy_run() -> ToyRun {
    let f = &fixtures::TOY_RUN;
    let grammar = SceneGrammar::toy();
    let data = sample_dataset(&grammar, f.samples, f.noise, f.seed).unwrap();
    let hyper = toy_hyper(&grammar, f.d);
    let we = make_embeddings(hyper.vocab_size, f.d, f.seed).unwrap().we;
    let cfg = TrainConfig {
        learning_rate: f.learning_rate,
        batch_size: f.batch_size,
        epochs: f.epochs,
        seed: f.seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&data, we, &cfg, &hyper).unwrap();
    ToyRun {
        grammar,
        hyper,
        data,
        outcome,
        elapsed: start.elapsed(),
    }
}

fn criterion_6(run: &ToyRun) -> Outcome {
    let f = &fixtures::TOY_RUN;
    let eval = evaluate(&run.outcome.params, &run.hyper, &run.data).unwrap();
    let longest = run.data.iter().map(|s| s.caption.len()).max().unwrap();
    let curve = &run.outcome.curve;
    let decreasing = curve.last().unwrap().mean_loss < curve[0].mean_loss;
    let pass = eval.teacher_forced_token_accuracy >= f.min_token_accuracy
        && eval.exact_match >= f.min_exact_match
        && curve.len() <= 200
        && decreasing
        && within(run.elapsed, 900.0);
    outcome(
        pass,
        format!(
            "V={} longest caption {longest} tokens, {} samples, d={}: token acc {:.4} (>={}), exact match {:.4} (>={}), {} epochs, {:.1?} (<15min)",
            run.hyper.vocab_size,
            run.data.len(),
            run.hyper.d,
            eval.teacher_forced_token_accuracy,
            f.min_token_accuracy,
            eval.exact_match,
            f.min_exact_match,
            curve.len(),
            run.elapsed
        ),
    )
}

fn record(tag: PosTag, word_id: usize, position: usize) -> UnbindingRecord {
    UnbindingRecord {
        u: Vector::zeros(1),
        word_id,
        pos_tag: tag,
        position_in_caption: position,
        caption_id: 0,
    }
}

fn criterion_7(run: &ToyRun) -> Outcome {
    let recs = collect_unbinding(&run.outcome.params, &run.hyper, &run.data, run.grammar.tags()).unwrap();
    let us: Vec<Vector> = recs.iter().map(|r| r.u.clone()).collect();
    let model = kmeans(&us, 2, fixtures::TOY_RUN.seed, 100).unwrap();
    let assign = assign_nearest(&model, &us).unwrap();
    let sep = nv_separation(&recs, &assign).unwrap();

    // 500 nouns and 462 pronouns, 442 of the pronouns in the noun cluster
    let vocab = Vocabulary::new(vec!["dog".into(), "it".into()]).unwrap();
    let mut fixture = vec![record(PosTag::Noun, 0, 2); 500];
    let mut fixture_assign = vec![1; 500];
    for k in 0..462 {
        fixture.push(record(PosTag::Pron, 1, 3));
        fixture_assign.push(if k < 442 { 1 } else { 0 });
    }
    let table = conformity_table(&fixture, &fixture_assign, &vocab, true).unwrap();
    let pron = table.rows.iter().find(|r| r.category == Category::Pronouns).unwrap();
    let arithmetic = pron.n_w == 462
        && pron.n_r == 442
        && pron.p_c_display() == "0.957"
        && (pron.p_c().unwrap() * pron.n_w as f64 - pron.n_r as f64).abs() < 1e-9;

    outcome(
        sep.is_strict_majority() && arithmetic,
        format!(
            "nouns in noun cluster {:.3}, verbs/prepositions in the other {:.3} (both >0.5); pronoun row ({}, {}) -> {}",
            sep.noun_share,
            sep.verb_share,
            pron.n_w,
            pron.n_r,
            pron.p_c_display()
        ),
    )
}

fn criterion_8(run: &ToyRun) -> Outcome {
    let grammar = &run.grammar;
    let data = sample_dataset(grammar, 60, 0.1, 8).unwrap();
    let hyper = toy_hyper(grammar, 4);
    let we = make_embeddings(hyper.vocab_size, 4, 8).unwrap().we;
    let cfg = TrainConfig {
        epochs: 5,
        seed: 8,
        ..TrainConfig::default()
    };
    let csv = || {
        let out = train(&data, we.clone(), &cfg, &hyper).unwrap();
        let mut buf = Vec::new();
        write_loss_csv(&out.curve, &mut buf).unwrap();
        buf
    };
    let same_csv = csv() == csv();

    let ckpt = Checkpoint {
        hyper: run.hyper.clone(),
        params: run.outcome.params.clone(),
        vocab: grammar.vocab().words().to_vec(),
        seed: fixtures::TOY_RUN.seed,
    };
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    ckpt.params.visit(|_, _, xs| a.extend(xs.iter().map(|x| x.to_bits())));
    back.params.visit(|_, _, xs| b.extend(xs.iter().map(|x| x.to_bits())));
    let bit_exact = a == b && back == ckpt && back.to_bytes() == bytes;
    outcome(
        same_csv && bit_exact,
        format!("loss CSV byte-identical across runs: {same_csv}; checkpoint round trip bit-exact: {bit_exact} ({} bytes)", bytes.len()),
    )
}

fn criterion_9() -> Outcome {
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let corpus = vec![words("a man standing in a room with a suitcase"), words("a dog on the table")];
    let self_scores = bleu_n(&corpus, &corpus, 4).unwrap();
    let self_ok = self_scores.iter().all(|&s| (s - 1.0).abs() < 1e-12);

    let cands = vec![words("the cat sat on the mat"), words("a dog")];
    let refs = vec![words("the cat is on the mat"), words("a dog runs")];
    let got = bleu_n(&cands, &refs, 4).unwrap();
    let expected = fixtures::bleu_hand_fixture();
    let worst = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        self_ok && worst < 1e-9,
        format!("self BLEU-1..4 = {self_scores:?}; hand fixture max diff {worst:.2e} (<1e-9)"),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; only a name filter is honoured.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |n: usize| filter.as_deref().is_none_or(|f| f == n.to_string());

    let mut results: Vec<(usize, Outcome)> = Vec::new();
    for (n, f) in [
        (1, criterion_1 as fn() -> Outcome),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (9, criterion_9),
    ] {
        if wanted(n) {
            results.push((n, f()));
        }
    }
    if [6, 7, 8].iter().any(|&n| wanted(n)) {
        let run = toy_run();
        for (n, f) in [
            (6, criterion_6 as fn(&ToyRun) -> Outcome),
            (7, criterion_7),
            (8, criterion_8),
        ] {
            if wanted(n) {
                results.push((n, f(&run)));
            }
        }
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, o) in &results {
        println!("criterion {n}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
