//! Analysis of unbinding vectors: clustering, N/V conformity, cluster
//! interpretation, 2-D projection, plus corpus BLEU.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{PosTag, Sample, Vocabulary};
use crate::error::{mismatch, Error, Result};
use crate::model::{forward_caption, Decoding, HyperParams, ModelParams};
use crate::tensor::Vector;

#[derive(Clone, Debug, PartialEq)]
pub struct UnbindingRecord {
    pub u: Vector,
    pub word_id: usize,
    pub pos_tag: PosTag,
    /// 1-based.
    pub position_in_caption: usize,
    pub caption_id: usize,
}

/// Greedy free-running generation per sample, one record per emitted word.
/// `tags[w]` is the tag of word id `w`.
pub fn collect_unbinding(
    params: &ModelParams,
    hyper: &HyperParams,
    samples: &[Sample],
    tags: &[PosTag],
) -> Result<Vec<UnbindingRecord>> {
    if tags.len() != hyper.vocab_size {
        return Err(mismatch("collect_unbinding tags", hyper.vocab_size, tags.len()));
    }
    let mut out = Vec::new();
    for (caption_id, s) in samples.iter().enumerate() {
        let gen = forward_caption(&s.features, params, hyper, None, Decoding::Greedy)?;
        for (t, step) in gen.steps.into_iter().enumerate() {
            out.push(UnbindingRecord {
                pos_tag: tags[step.word],
                word_id: step.word,
                u: step.u,
                position_in_caption: t + 1,
                caption_id,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vector>,
    pub inertia: f64,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance. Ties go to the lower index.
fn nearest(centroids: &[Vector], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c.as_slice(), x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign_all(centroids: &[Vector], vectors: &[Vector]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = vectors
        .iter()
        .map(|v| {
            let (i, d) = nearest(centroids, v.as_slice());
            inertia += d;
            i
        })
        .collect();
    (labels, inertia)
}

fn check_dims(vectors: &[Vector], op: &'static str) -> Result<usize> {
    let dim = vectors.first().ok_or(Error::Empty(op))?.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(mismatch(op, dim, bad.len()));
    }
    Ok(dim)
}

fn kmeans_pp<R: Rng>(vectors: &[Vector], k: usize, rng: &mut R) -> Vec<Vector> {
    let mut centroids = vec![vectors[rng.random_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| sq_dist(v.as_slice(), centroids[0].as_slice()))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..vectors.len())
        };
        let c = vectors[pick].clone();
        for (slot, v) in d2.iter_mut().zip(vectors) {
            *slot = slot.min(sq_dist(v.as_slice(), c.as_slice()));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from k-means++ seeding until the assignment stops changing.
pub fn kmeans(vectors: &[Vector], n_clusters: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    let dim = check_dims(vectors, "kmeans")?;
    if n_clusters == 0 || n_clusters > vectors.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= N_u <= {} points, got N_u={n_clusters}",
            vectors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(vectors, n_clusters, &mut rng);
    let (mut labels, inertia) = assign_all(&centroids, vectors);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; n_clusters];
        let mut counts = vec![0usize; n_clusters];
        for (v, &l) in vectors.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(v.as_slice()) {
                *s += x;
            }
        }
        let mut next: Vec<Vector> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| {
                if n == 0 {
                    old.clone()
                } else {
                    Vector::from_raw(s.into_iter().map(|x| x / n as f64).collect())
                }
            })
            .collect();
        for c in 0..n_clusters {
            if counts[c] == 0 {
                // farthest point from its own centroid
                let far = vectors
                    .iter()
                    .zip(&labels)
                    .map(|(v, &l)| sq_dist(v.as_slice(), next[l].as_slice()))
                    .enumerate()
                    .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best })
                    .0;
                next[c] = vectors[far].clone();
            }
        }
        let (new_labels, inertia) = assign_all(&next, vectors);
        history.push(inertia);
        centroids = next;
        let done = new_labels == labels;
        labels = new_labels;
        if done {
            break;
        }
    }
    Ok(ClusterModel {
        centroids,
        inertia: *history.last().expect("history is non-empty"),
        inertia_history: history,
        iterations,
        seed,
    })
}

pub fn assign_nearest(model: &ClusterModel, vectors: &[Vector]) -> Result<Vec<usize>> {
    let dim = model.centroids[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(mismatch("assign_nearest", dim, bad.len()));
    }
    Ok(vectors.iter().map(|v| nearest(&model.centroids, v.as_slice()).0).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Nouns,
    Pronouns,
    IndefiniteArticles,
    DefiniteArticles,
    Adjectives,
    Verbs,
    PrepositionsConjunctions,
    Adverbs,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Nouns,
        Category::Pronouns,
        Category::IndefiniteArticles,
        Category::DefiniteArticles,
        Category::Adjectives,
        Category::Verbs,
        Category::PrepositionsConjunctions,
        Category::Adverbs,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Nouns => "nouns",
            Category::Pronouns => "pronouns",
            Category::IndefiniteArticles => "indefinite articles",
            Category::DefiniteArticles => "definite articles",
            Category::Adjectives => "adjectives",
            Category::Verbs => "verbs",
            Category::PrepositionsConjunctions => "prepositions & conjunctions",
            Category::Adverbs => "adverbs",
        }
    }

    pub fn expects_noun_cluster(self) -> bool {
        !matches!(
            self,
            Category::Verbs | Category::PrepositionsConjunctions | Category::Adverbs
        )
    }

    pub fn of(tag: PosTag, word: &str) -> Option<Category> {
        Some(match tag {
            PosTag::Noun => Category::Nouns,
            PosTag::Pron => Category::Pronouns,
            PosTag::Det => match word.to_ascii_lowercase().as_str() {
                "a" | "an" => Category::IndefiniteArticles,
                "the" => Category::DefiniteArticles,
                _ => return None,
            },
            PosTag::Adj => Category::Adjectives,
            PosTag::Verb => Category::Verbs,
            PosTag::PrepSpatial | PosTag::PrepOther | PosTag::Conj => Category::PrepositionsConjunctions,
            PosTag::Adv => Category::Adverbs,
            PosTag::End | PosTag::Start => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformityRow {
    pub category: Category,
    pub n_w: usize,
    pub n_r: usize,
}

impl ConformityRow {
    /// `None` for an empty category.
    pub fn p_c(&self) -> Option<f64> {
        (self.n_w > 0).then(|| self.n_r as f64 / self.n_w as f64)
    }

    pub fn p_c_display(&self) -> String {
        self.p_c().map(|p| format!("{p:.3}")).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformityTable {
    pub noun_cluster: usize,
    pub rows: Vec<ConformityRow>,
}

fn check_assignments(records: &[UnbindingRecord], assignments: &[usize]) -> Result<()> {
    if records.len() != assignments.len() {
        return Err(mismatch("assignments", records.len(), assignments.len()));
    }
    Ok(())
}

/// Cluster (out of two) holding most noun tokens; ties go to cluster 0.
pub fn noun_cluster(records: &[UnbindingRecord], assignments: &[usize]) -> usize {
    let mut counts = [0usize; 2];
    for (r, &a) in records.iter().zip(assignments) {
        if r.pos_tag == PosTag::Noun && a < 2 {
            counts[a] += 1;
        }
    }
    usize::from(counts[1] > counts[0])
}

/// Conformity to the N/V split for a two-cluster assignment. With
/// `exclude_initial_det`, determiners in caption position 1 are skipped.
pub fn conformity_table(
    records: &[UnbindingRecord],
    assignments: &[usize],
    vocab: &Vocabulary,
    exclude_initial_det: bool,
) -> Result<ConformityTable> {
    check_assignments(records, assignments)?;
    if let Some(&bad) = assignments.iter().find(|&&a| a > 1) {
        return Err(Error::InvalidArgument(format!(
            "conformity needs a two-cluster assignment, found cluster {bad}"
        )));
    }
    let noun = noun_cluster(records, assignments);
    let mut counts: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for (r, &a) in records.iter().zip(assignments) {
        if exclude_initial_det && r.position_in_caption == 1 && r.pos_tag == PosTag::Det {
            continue;
        }
        let Some(cat) = Category::of(r.pos_tag, vocab.word(r.word_id)) else {
            continue;
        };
        let expected = if cat.expects_noun_cluster() { noun } else { 1 - noun };
        let e = counts.entry(cat).or_default();
        e.0 += 1;
        if a == expected {
            e.1 += 1;
        }
    }
    let rows = Category::ALL
        .iter()
        .map(|&c| {
            let (n_w, n_r) = counts.get(&c).copied().unwrap_or_default();
            ConformityRow {
                category: c,
                n_w,
                n_r,
            }
        })
        .collect();
    Ok(ConformityTable {
        noun_cluster: noun,
        rows,
    })
}

pub fn write_conformity_csv<W: Write>(table: &ConformityTable, mut out: W) -> Result<()> {
    writeln!(out, "category,N_w,N_r,P_c")?;
    for r in &table.rows {
        writeln!(out, "{},{},{},{}", r.category.label(), r.n_w, r.n_r, r.p_c_display())?;
    }
    Ok(())
}

/// Share of noun tokens in the noun cluster and of verb/preposition tokens
/// in the other one.
#[derive(Clone, Debug, PartialEq)]
pub struct NvSeparation {
    pub noun_cluster: usize,
    pub noun_share: f64,
    pub verb_share: f64,
}

impl NvSeparation {
    pub fn is_strict_majority(&self) -> bool {
        self.noun_share > 0.5 && self.verb_share > 0.5
    }
}

pub fn nv_separation(records: &[UnbindingRecord], assignments: &[usize]) -> Result<NvSeparation> {
    check_assignments(records, assignments)?;
    let noun = noun_cluster(records, assignments);
    let (mut n_in, mut n_all, mut v_in, mut v_all) = (0usize, 0usize, 0usize, 0usize);
    for (r, &a) in records.iter().zip(assignments) {
        match r.pos_tag {
            PosTag::Noun => {
                n_all += 1;
                n_in += usize::from(a == noun);
            }
            PosTag::Verb | PosTag::PrepSpatial | PosTag::PrepOther => {
                v_all += 1;
                v_in += usize::from(a != noun);
            }
            _ => {}
        }
    }
    let share = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(NvSeparation {
        noun_cluster: noun,
        noun_share: share(n_in, n_all),
        verb_share: share(v_in, v_all),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub pos: Vec<(PosTag, f64)>,
    /// Proportion per caption position (1-based), ascending.
    pub positions: Vec<(usize, f64)>,
    /// Set when every token of the cluster sits at one caption position.
    pub positional: Option<usize>,
}

impl ClusterSummary {
    pub fn position_share(&self, position: usize) -> f64 {
        self.positions
            .iter()
            .find(|&&(p, _)| p == position)
            .map_or(0.0, |&(_, s)| s)
    }
}

pub fn cluster_report(
    records: &[UnbindingRecord],
    assignments: &[usize],
    n_clusters: usize,
) -> Result<Vec<ClusterSummary>> {
    check_assignments(records, assignments)?;
    let mut pos: Vec<BTreeMap<PosTag, usize>> = vec![BTreeMap::new(); n_clusters];
    let mut positions: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_clusters];
    let mut sizes = vec![0usize; n_clusters];
    for (r, &a) in records.iter().zip(assignments) {
        if a >= n_clusters {
            return Err(Error::IndexOutOfRange {
                index: a,
                len: n_clusters,
            });
        }
        sizes[a] += 1;
        *pos[a].entry(r.pos_tag).or_default() += 1;
        *positions[a].entry(r.position_in_caption).or_default() += 1;
    }
    Ok((0..n_clusters)
        .map(|c| {
            let n = sizes[c] as f64;
            let positional = match positions[c].len() {
                1 => positions[c].keys().next().copied(),
                _ => None,
            };
            ClusterSummary {
                cluster: c,
                size: sizes[c],
                pos: pos[c].iter().map(|(&t, &k)| (t, k as f64 / n)).collect(),
                positions: positions[c].iter().map(|(&p, &k)| (p, k as f64 / n)).collect(),
                positional,
            }
        })
        .collect())
}

/// Rows `cluster,label,proportion`: one per POS tag present, positions 1 and 2,
/// and a `Position k (1.00)` flag row for purely positional clusters.
pub fn write_cluster_report_csv<W: Write>(report: &[ClusterSummary], mut out: W) -> Result<()> {
    writeln!(out, "cluster,label,proportion")?;
    for c in report {
        for (t, p) in &c.pos {
            writeln!(out, "{},POS {},{:.4}", c.cluster, t, p)?;
        }
        for k in [1, 2] {
            writeln!(out, "{},Position {},{:.4}", c.cluster, k, c.position_share(k))?;
        }
        if let Some(k) = c.positional {
            writeln!(out, "{},Position {} (1.00),1.0000", c.cluster, k)?;
        }
    }
    Ok(())
}

/// Fraction of tokens whose tag is the most frequent tag of their cluster.
pub fn pos_purity(report: &[ClusterSummary]) -> f64 {
    let total: usize = report.iter().map(|c| c.size).sum();
    if total == 0 {
        return 0.0;
    }
    let agree: f64 = report
        .iter()
        .map(|c| c.pos.iter().map(|&(_, p)| p).fold(0.0, f64::max) * c.size as f64)
        .sum();
    agree / total as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Variance along each of the two axes.
    pub variance: [f64; 2],
    /// All input vectors identical; points are zeros.
    pub degenerate: bool,
}

/// Mean-centred projection onto the top two principal axes. Each axis is
/// signed so that its largest-magnitude component is positive.
pub fn pca_project(vectors: &[Vector]) -> Result<Projection> {
    let dim = check_dims(vectors, "pca_project")?;
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument("pca_project needs at least 2 vectors".into()));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_slice()) {
            *m += x / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, dim, |i, j| vectors[i].as_slice()[j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    if cov.iter().all(|&x| x.abs() <= f64::EPSILON * 1e-3) {
        return Ok(Projection {
            points: vec![[0.0; 2]; n],
            variance: [0.0; 2],
            degenerate: true,
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Vec::with_capacity(2);
    let mut variance = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut axis: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = axis.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
        variance[k] = eig.eigenvalues[idx].max(0.0);
        axes.push(axis);
    }
    let points = (0..n)
        .map(|i| {
            let mut pt = [0.0; 2];
            for (k, axis) in axes.iter().enumerate() {
                pt[k] = (0..dim).map(|j| centred[(i, j)] * axis[j]).sum();
            }
            pt
        })
        .collect();
    Ok(Projection {
        points,
        variance,
        degenerate: false,
    })
}

pub fn write_projection_csv<W: Write>(
    projection: &Projection,
    records: &[UnbindingRecord],
    assignments: &[usize],
    vocab: &Vocabulary,
    mut out: W,
) -> Result<()> {
    check_assignments(records, assignments)?;
    if projection.points.len() != records.len() {
        return Err(mismatch("write_projection_csv", records.len(), projection.points.len()));
    }
    writeln!(out, "x,y,word,pos,cluster")?;
    for ((pt, r), a) in projection.points.iter().zip(records).zip(assignments) {
        writeln!(out, "{},{},{},{},{}", pt[0], pt[1], vocab.word(r.word_id), r.pos_tag, a)?;
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU-1..=n_max with one reference per candidate.
pub fn bleu_n<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n_max: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("bleu_n"));
    }
    if candidates.len() != references.len() {
        return Err(mismatch("bleu_n", candidates.len(), references.len()));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=n_max {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                total[n - 1] += k;
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
        }
    }
    if c_len == 0 {
        return Ok(vec![0.0; n_max]);
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut scores = Vec::with_capacity(n_max);
    let mut zero = false;
    for n in 0..n_max {
        if matched[n] == 0 {
            zero = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        scores.push(if zero {
            0.0
        } else {
            bp * (log_sum / (n + 1) as f64).exp()
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn rec(tag: PosTag, word_id: usize, pos: usize) -> UnbindingRecord {
        UnbindingRecord {
            u: v(&[0.0]),
            word_id,
            pos_tag: tag,
            position_in_caption: pos,
            caption_id: 0,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(["dog", "it", "a", "the", "red", "ran", "on", "fast", "<end>"].map(String::from).to_vec())
            .unwrap()
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![v(&[0.0, 1.0]), v(&[2.0, 3.0]), v(&[4.0, -1.0])];
        let m = kmeans(&pts, 1, 7, 50).unwrap();
        assert!(m.centroids[0].max_abs_diff(&v(&[2.0, 1.0])) < 1e-12);
    }

    #[test]
    fn two_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let c = if i % 2 == 0 { -50.0 } else { 50.0 };
            pts.push(v(&[c + rng.random::<f64>(), rng.random::<f64>()]));
            truth.push(i % 2);
        }
        let m = kmeans(&pts, 2, 11, 100).unwrap();
        let got = assign_nearest(&m, &pts).unwrap();
        let flipped = got[0] != truth[0];
        for (g, t) in got.iter().zip(&truth) {
            assert_eq!(*g, if flipped { 1 - t } else { *t });
        }
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let pts = vec![v(&[0.0]), v(&[1.0])];
        assert!(kmeans(&pts, 3, 0, 10).is_err());
        assert!(kmeans(&[], 1, 0, 10).is_err());
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let pts = vec![v(&[1.0, 1.0]); 5];
        let m = kmeans(&pts, 3, 2, 10).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let m = ClusterModel {
            centroids: vec![v(&[-1.0]), v(&[1.0]), v(&[5.0])],
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
            seed: 0,
        };
        assert_eq!(assign_nearest(&m, &[v(&[0.0]), v(&[5.0]), v(&[3.0])]).unwrap(), vec![0, 2, 1]);
        assert!(assign_nearest(&m, &[v(&[0.0, 1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn kmeans_properties(
            raw in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 4..30),
            k in 1usize..4,
            seed in 0u64..1000,
        ) {
            let pts: Vec<Vector> = raw.iter().map(|r| v(r)).collect();
            let m = kmeans(&pts, k, seed, 100).unwrap();
            let again = kmeans(&pts, k, seed, 100).unwrap();
            prop_assert_eq!(&m, &again);
            for w in m.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            let ids = assign_nearest(&m, &m.centroids).unwrap();
            // distinct centroids map to themselves
            for (i, &a) in ids.iter().enumerate() {
                prop_assert!(a == i || m.centroids[a] == m.centroids[i]);
            }
            // brute-force nearest
            let got = assign_nearest(&m, &pts).unwrap();
            for (p, &g) in pts.iter().zip(&got) {
                let mut best = 0;
                for c in 1..m.centroids.len() {
                    if p.sub(&m.centroids[c]).norm() < p.sub(&m.centroids[best]).norm() { best = c; }
                }
                let dg = p.sub(&m.centroids[g]).norm();
                let db = p.sub(&m.centroids[best]).norm();
                prop_assert!((dg - db).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conformity_all_conforming() {
        let vocab = vocab();
        let recs = vec![
            rec(PosTag::Noun, 0, 2),
            rec(PosTag::Pron, 1, 3),
            rec(PosTag::Det, 2, 4),
            rec(PosTag::Det, 3, 5),
            rec(PosTag::Adj, 4, 6),
            rec(PosTag::Verb, 5, 7),
            rec(PosTag::PrepSpatial, 6, 8),
            rec(PosTag::Adv, 7, 9),
            rec(PosTag::End, 8, 10),
        ];
        let assign = vec![1, 1, 1, 1, 1, 0, 0, 0, 0];
        let t = conformity_table(&recs, &assign, &vocab, true).unwrap();
        assert_eq!(t.noun_cluster, 1);
        for r in &t.rows {
            assert_eq!(r.n_w, 1);
            assert_eq!(r.p_c(), Some(1.0));
        }
    }

    #[test]
    fn conformity_initial_det_and_empty_rows() {
        let vocab = vocab();
        let recs = vec![rec(PosTag::Det, 2, 1), rec(PosTag::Noun, 0, 2), rec(PosTag::Det, 3, 3)];
        let assign = vec![1, 0, 1];
        let t = conformity_table(&recs, &assign, &vocab, true).unwrap();
        let indef = &t.rows[2];
        assert_eq!((indef.n_w, indef.n_r), (0, 0));
        assert_eq!(indef.p_c_display(), "");
        assert_eq!((t.rows[3].n_w, t.rows[3].n_r), (1, 0));
        let t = conformity_table(&recs, &assign, &vocab, false).unwrap();
        assert_eq!((t.rows[2].n_w, t.rows[2].n_r), (1, 0));
        assert!(conformity_table(&recs, &[0, 2, 0], &vocab, true).is_err());
    }

    #[test]
    fn cluster_report_positional_flag() {
        let recs = vec![
            rec(PosTag::Det, 2, 1),
            rec(PosTag::Det, 3, 1),
            rec(PosTag::Noun, 0, 2),
            rec(PosTag::Verb, 5, 3),
        ];
        let rep = cluster_report(&recs, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(rep[0].positional, Some(1));
        assert_eq!(rep[1].positional, None);
        assert_eq!(rep[1].position_share(2), 0.5);
        for c in &rep {
            let s: f64 = c.pos.iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        write_cluster_report_csv(&rep, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("0,Position 1 (1.00),1.0000"));

        let single = cluster_report(&recs, &[0, 0, 0, 0], 1).unwrap();
        assert_eq!(single[0].pos, vec![(PosTag::Det, 0.5), (PosTag::Noun, 0.25), (PosTag::Verb, 0.25)]);
        assert!((pos_purity(&rep) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pca_recovers_planar_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<[f64; 2]> = (0..12).map(|_| [rng.random::<f64>() * 4.0, rng.random::<f64>()]).collect();
        let mx = raw.iter().map(|p| p[0]).sum::<f64>() / 12.0;
        let my = raw.iter().map(|p| p[1]).sum::<f64>() / 12.0;
        let pts: Vec<Vector> = raw.iter().map(|p| v(&[p[0] - mx, p[1] - my])).collect();
        let proj = pca_project(&pts).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let a = pts[i].sub(&pts[j]).norm();
                let b = ((proj.points[i][0] - proj.points[j][0]).powi(2)
                    + (proj.points[i][1] - proj.points[j][1]).powi(2))
                .sqrt();
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_variance_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vector> = (0..40)
            .map(|_| {
                let a: f64 = rng.random::<f64>() - 0.5;
                let b: f64 = rng.random::<f64>() - 0.5;
                v(&[3.0 * a, 2.0 * a + b, 0.1 * rng.random::<f64>(), b])
            })
            .collect();
        let proj = pca_project(&pts).unwrap();
        // covariance by explicit loops
        let n = pts.len() as f64;
        let dim = 4;
        let mean: Vec<f64> = (0..dim).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let mut cov = [[0.0; 4]; 4];
        for p in &pts {
            for a in 0..dim {
                for b in 0..dim {
                    cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
                }
            }
        }
        let power = |c: &[[f64; 4]; 4]| {
            let mut x = [1.0, 0.7, 0.3, 0.5];
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let mut y = [0.0; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        y[a] += c[a][b] * x[b];
                    }
                }
                let norm = y.iter().map(|t| t * t).sum::<f64>().sqrt();
                lambda = norm;
                for a in 0..4 {
                    x[a] = y[a] / norm;
                }
            }
            (lambda, x)
        };
        let (l1, x1) = power(&cov);
        let mut deflated = cov;
        for a in 0..4 {
            for b in 0..4 {
                deflated[a][b] -= l1 * x1[a] * x1[b];
            }
        }
        let (l2, _) = power(&deflated);
        for k in 0..2 {
            let var = proj.points.iter().map(|p| p[k] * p[k]).sum::<f64>() / n;
            let expected = [l1, l2][k];
            assert!((var - expected).abs() < 1e-8, "axis {k}: {var} vs {expected}");
            assert!((proj.variance[k] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn pca_degenerate_and_duplicates() {
        let same = vec![v(&[1.0, 2.0, 3.0]); 4];
        let p = pca_project(&same).unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|q| *q == [0.0, 0.0]));
        assert!(pca_project(&same[..1]).is_err());

        let base = vec![v(&[0.0, 1.0, 2.0]), v(&[3.0, -1.0, 0.5]), v(&[1.0, 1.0, 1.0])];
        let mut doubled = base.clone();
        doubled.extend(base.iter().cloned());
        let p = pca_project(&doubled).unwrap();
        for i in 0..3 {
            assert_eq!(p.points[i], p.points[i + 3]);
        }
    }

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let c = vec![words("a man in a room"), words("the dog")];
        assert_eq!(bleu_n(&c, &c, 4).unwrap(), vec![1.0; 4]);
        let c = vec![words("a man standing in a room")];
        assert!(bleu_n(&c, &c, 4).unwrap().iter().all(|&s| (s - 1.0).abs() < 1e-15));
        let r = vec![words("x y z w v u")];
        assert_eq!(bleu_n(&c, &r, 4).unwrap()[0], 0.0);
        assert!(bleu_n::<&str>(&[], &[], 4).is_err());
    }

    #[test]
    fn bleu_hand_fixture() {
        let cands = vec![words("the cat sat on the mat"), words("a dog")];
        let refs = vec![words("the cat is on the mat"), words("a dog runs")];
        let s = bleu_n(&cands, &refs, 4).unwrap();
        // clipped matches / candidate n-grams: 7/8, 4/6, 1/4, 0/3; c=8, r=9
        let bp = (1.0f64 - 9.0 / 8.0).exp();
        let p = [7.0 / 8.0, 4.0 / 6.0, 1.0 / 4.0];
        assert!((s[0] - bp * p[0]).abs() < 1e-9);
        assert!((s[1] - bp * (p[0] * p[1]).sqrt()).abs() < 1e-9);
        assert!((s[2] - bp * (p[0] * p[1] * p[2]).cbrt()).abs() < 1e-9);
        assert_eq!(s[3], 0.0);
    }
}
