//! `tpgn` command-line driver: data generation, training, generation,
//! analysis and checks.

pub mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use tpgn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tpgn_core::data::{
    load_embeddings_text, make_embeddings, read_dataset, read_tag_file, sample_dataset, tags_from_samples,
    write_dataset, PosTag, Sample, SceneGrammar, Vocabulary,
};
use tpgn_core::gradcheck::{gradient_check, random_check_problem};
use tpgn_core::interpret::{
    assign_nearest, bleu_n, cluster_report, collect_unbinding, conformity_table, kmeans, nv_separation,
    pca_project, pos_purity, write_cluster_report_csv, write_conformity_csv, write_projection_csv,
};
use tpgn_core::model::{forward_caption, Decoding, HyperParams, WxMode};
use tpgn_core::tensor::Vector;
use tpgn_core::tpr::{bind_and_superpose, generate_sequence, make_role_basis, unbind, Binding};
use tpgn_core::train::{evaluate, train_with_progress, write_loss_csv};

use config::{EmbeddingSpec, RunConfig};

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Core(#[from] tpgn_core::Error),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tpgn", about = "Tensor-product caption generator toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bind and unbind "Jay saw Kay" with a small role basis.
    TprDemo,
    /// Sample a scene-caption dataset from the built-in grammar.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, loss.csv and train.log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one generated caption per dataset line.
    Generate {
        #[command(flatten)]
        io: ModelData,
        #[arg(long, conflicts_with = "sample")]
        greedy: bool,
        /// Sample from the output distribution; caption i uses seed SEED + i.
        #[arg(long, value_name = "SEED")]
        sample: Option<u64>,
    },
    /// Cluster unbinding vectors and write conformity, cluster and projection CSVs.
    Analyze {
        #[command(flatten)]
        io: ModelData,
        #[arg(long)]
        clusters: usize,
        #[arg(long)]
        out: PathBuf,
        /// `word TAG` lines overriding the dataset's POS column.
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Count caption-initial determiners in the conformity table.
        #[arg(long)]
        include_initial: bool,
    },
    /// Corpus BLEU-1..4 of greedy captions against the dataset captions.
    EvalBleu {
        #[command(flatten)]
        io: ModelData,
    },
    /// Compare analytic gradients with central differences on a random model.
    GradCheck {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct ModelData {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

/// Run one command line (including the program name). Returns the exit code:
/// 0 on success, 2 for usage errors, 1 for runtime errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::TprDemo => tpr_demo(),
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Train { config, out } => train_cmd(&config, out),
        Command::Generate { io, greedy: _, sample } => generate(&io, sample),
        Command::Analyze {
            io,
            clusters,
            out,
            tags,
            seed,
            include_initial,
        } => analyze(&io, clusters, &out, tags.as_deref(), seed, !include_initial),
        Command::EvalBleu { io } => eval_bleu(&io),
        Command::GradCheck { d, seed } => grad_check(d, seed),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?))
}

fn fmt_vec(v: &Vector) -> String {
    let parts: Vec<String> = v.as_slice().iter().map(|x| format!("{x:6.3}")).collect();
    format!("[{}]", parts.join(" "))
}

fn tpr_demo() -> CliResult<()> {
    let names = ["Jay", "Kay", "saw"];
    let fillers: Vec<Vector> = (0..3).map(|k| Vector::basis(3, k)).collect();
    let role_names = ["subject", "verb", "object"];
    let roles = vec![
        Vector::new(vec![1.0, 1.0, 0.0])?,
        Vector::new(vec![0.0, 1.0, 1.0])?,
        Vector::new(vec![1.0, 0.0, 1.0])?,
    ];
    let basis = make_role_basis(roles)?;
    println!("fillers (one-hot):");
    for (n, f) in names.iter().zip(&fillers) {
        println!("  {n:<8}{}", fmt_vec(f));
    }
    println!("roles and their unbinding duals (r_i . u_j = delta_ij):");
    for (k, n) in role_names.iter().enumerate() {
        println!("  {n:<8}r = {}  u = {}", fmt_vec(&basis.roles()[k]), fmt_vec(&basis.duals()[k]));
    }

    let sentence = |subj: usize, obj: usize| {
        bind_and_superpose(
            &[
                Binding::new(fillers[subj].clone(), 0),
                Binding::new(fillers[2].clone(), 1),
                Binding::new(fillers[obj].clone(), 2),
            ],
            &basis,
        )
    };
    let jsk = sentence(0, 1)?;
    println!("T(Jay saw Kay) = Jay (x) subject + saw (x) verb + Kay (x) object:");
    for i in 0..3 {
        println!("  {}", fmt_vec(&Vector::new(jsk.matrix().row(i).to_vec())?));
    }
    println!("unbinding T u_role:");
    for (k, n) in role_names.iter().enumerate() {
        let f = unbind(&jsk, &basis, k)?;
        let word = names[f.argmax()];
        println!("  {n:<8}{} -> {word}", fmt_vec(&f));
    }
    let words: Vec<&str> = generate_sequence(&jsk, &basis, &[0, 1, 2])?
        .iter()
        .map(|f| names[f.argmax()])
        .collect();
    println!("sequence in order (subject, verb, object): {}", words.join(" "));
    let ksj = sentence(1, 0)?;
    println!(
        "T(Kay saw Jay) differs from T(Jay saw Kay): max |difference| = {}",
        jsk.matrix().max_abs_diff(ksj.matrix())
    );
    Ok(())
}

fn grammar_for(cfg: &RunConfig) -> CliResult<SceneGrammar> {
    let toy = SceneGrammar::toy();
    if cfg.t_max == toy.max_len() {
        return Ok(toy);
    }
    let mut lex: Vec<(String, Vec<(String, PosTag)>)> = Vec::new();
    for slot in toy.slots() {
        let words = slot
            .words
            .iter()
            .map(|&w| (toy.vocab().word(w).to_string(), toy.tag(w)))
            .collect();
        lex.push((slot.name.clone(), words));
    }
    let borrowed: Vec<Vec<(&str, PosTag)>> = lex
        .iter()
        .map(|(_, ws)| ws.iter().map(|(w, t)| (w.as_str(), *t)).collect())
        .collect();
    let lexicons: Vec<(&str, &[(&str, PosTag)])> = lex
        .iter()
        .zip(&borrowed)
        .map(|((name, _), ws)| (name.as_str(), ws.as_slice()))
        .collect();
    let templates: Vec<String> = toy
        .templates()
        .iter()
        .map(|t| t.iter().map(|&s| toy.slots()[s].name.as_str()).collect::<Vec<_>>().join(" "))
        .collect();
    let templates: Vec<&str> = templates.iter().map(String::as_str).collect();
    Ok(SceneGrammar::new(&lexicons, &templates, cfg.t_max)?)
}

fn gen_data(config: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let grammar = grammar_for(&cfg)?;
    let samples = sample_dataset(&grammar, cfg.n_samples, cfg.noise, cfg.seed)?;
    let mut w = create(out)?;
    write_dataset(&samples, grammar.vocab(), &mut w)?;
    w.flush().map_err(|e| io_err(out, e))?;
    println!(
        "wrote {} samples (feature dim {}, vocabulary {}) to {}",
        samples.len(),
        grammar.feature_dim(),
        grammar.vocab().len(),
        out.display()
    );
    Ok(())
}

fn load_samples(path: &Path, vocab: &Vocabulary) -> CliResult<Vec<Sample>> {
    let samples = read_dataset(open(path)?, vocab).map_err(|e| io_err(path, e))?;
    if samples.is_empty() {
        return Err(CliError::Invalid(format!("{}: dataset is empty", path.display())));
    }
    Ok(samples)
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn train_cmd(config: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Invalid("no output directory: pass --out or set output_dir".into()))?;
    let dataset_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Config {
            line: 0,
            message: "train requires the `dataset` key".into(),
        })?;
    let grammar = grammar_for(&cfg)?;
    let vocab = grammar.vocab();
    let samples = load_samples(&dataset_path, vocab)?;
    let hyper = HyperParams {
        d: cfg.d,
        vocab_size: vocab.len(),
        feature_dim: samples[0].features.len(),
        max_len: cfg.t_max,
        start_id: grammar.start_id(),
        end_id: grammar.end_id(),
    };
    hyper.validate()?;
    let table = match &cfg.embeddings {
        EmbeddingSpec::Synthetic => make_embeddings(vocab.len(), cfg.d, cfg.seed)?,
        EmbeddingSpec::File(p) => {
            let t = load_embeddings_text(open(p)?, vocab).map_err(|e| io_err(p, e))?;
            if t.we.rows() != cfg.d {
                return Err(CliError::Invalid(format!(
                    "{}: embeddings have dimension {}, config d = {}",
                    p.display(),
                    t.we.rows(),
                    cfg.d
                )));
            }
            if let tpgn_core::data::EmbeddingSource::File { missing } = t.source {
                if missing > 0 {
                    eprintln!("warning: {missing} vocabulary words missing from {}; using zero vectors", p.display());
                }
            }
            t
        }
    };

    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let log_path = out.join("train.log");
    let mut log = create(&log_path)?;
    let log_line = |log: &mut BufWriter<File>, msg: String| -> CliResult<()> {
        writeln!(log, "[{}] {msg}", unix_time()).map_err(|e| io_err(&log_path, e))
    };
    log_line(
        &mut log,
        format!(
            "start: {} samples, d={}, V={}, d_v={}, config {:?}",
            samples.len(),
            hyper.d,
            hyper.vocab_size,
            hyper.feature_dim,
            cfg.train
        ),
    )?;
    let start = Instant::now();
    let mut log_err = None;
    let result = train_with_progress(&samples, table.we, &cfg.train, &hyper, |s| {
        if s.epoch % 10 == 0 || s.epoch == 1 || s.epoch == cfg.train.epochs {
            println!("epoch {:>4}  loss {:.6}  token accuracy {:.4}", s.epoch, s.mean_loss, s.token_accuracy);
        }
        if let Err(e) = log_line(
            &mut log,
            format!("epoch {} loss {} accuracy {} elapsed {:.1?}", s.epoch, s.mean_loss, s.token_accuracy, start.elapsed()),
        ) {
            log_err.get_or_insert(e);
        }
    });
    if let Some(e) = log_err {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(tpgn_core::Error::Diverged { epoch, last_good }) => {
            let path = out.join("last_good.ckpt");
            let ckpt = Checkpoint {
                hyper: hyper.clone(),
                params: *last_good,
                vocab: vocab.words().to_vec(),
                seed: cfg.seed,
            };
            save_checkpoint(&ckpt, &path)?;
            log_line(&mut log, format!("diverged at epoch {epoch}; saved {}", path.display()))?;
            log.flush().map_err(|e| io_err(&log_path, e))?;
            return Err(CliError::Invalid(format!(
                "training diverged at epoch {epoch}; last good parameters saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let loss_path = out.join("loss.csv");
    let mut w = create(&loss_path)?;
    write_loss_csv(&outcome.curve, &mut w).map_err(|e| io_err(&loss_path, e))?;
    w.flush().map_err(|e| io_err(&loss_path, e))?;

    let ckpt_path = out.join("model.ckpt");
    let ckpt = Checkpoint {
        hyper: hyper.clone(),
        params: outcome.params,
        vocab: vocab.words().to_vec(),
        seed: cfg.seed,
    };
    save_checkpoint(&ckpt, &ckpt_path)?;
    let eval = evaluate(&ckpt.params, &hyper, &samples)?;
    let summary = format!(
        "training set: token accuracy {:.4}, exact match {:.4}, mean loss {:.6}",
        eval.teacher_forced_token_accuracy, eval.exact_match, eval.mean_loss
    );
    println!("{summary}");
    log_line(&mut log, format!("{summary}; elapsed {:.1?}", start.elapsed()))?;
    log.flush().map_err(|e| io_err(&log_path, e))?;
    println!("wrote {}, {}, {}", ckpt_path.display(), loss_path.display(), log_path.display());
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    vocab: Vocabulary,
    samples: Vec<Sample>,
}

fn load_model_data(io: &ModelData) -> CliResult<Loaded> {
    let ckpt = load_checkpoint(&io.ckpt).map_err(|e| io_err(&io.ckpt, e))?;
    let vocab = Vocabulary::new(ckpt.vocab.clone())?;
    let samples = load_samples(&io.data, &vocab)?;
    if samples[0].features.len() != ckpt.hyper.feature_dim {
        return Err(CliError::Invalid(format!(
            "dataset features have dimension {}, model expects {}",
            samples[0].features.len(),
            ckpt.hyper.feature_dim
        )));
    }
    Ok(Loaded { ckpt, vocab, samples })
}

fn caption_words<'a>(ids: &[usize], vocab: &'a Vocabulary, end: usize) -> Vec<&'a str> {
    ids.iter().take_while(|&&w| w != end).map(|&w| vocab.word(w)).collect()
}

fn generate(io: &ModelData, sample: Option<u64>) -> CliResult<()> {
    let m = load_model_data(io)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, s) in m.samples.iter().enumerate() {
        let decoding = match sample {
            Some(seed) => Decoding::Sample {
                seed: seed.wrapping_add(i as u64),
            },
            None => Decoding::Greedy,
        };
        let g = forward_caption(&s.features, &m.ckpt.params, &m.ckpt.hyper, None, decoding)?;
        match writeln!(out, "{}", caption_words(&g.word_ids, &m.vocab, m.ckpt.hyper.end_id).join(" ")) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            Err(e) => return Err(CliError::Io(e.to_string())),
        }
    }
    Ok(())
}

/// Tag per vocabulary id: built-in grammar tags when the vocabulary matches,
/// then dataset tags, then the optional tag file.
fn vocab_tags(m: &Loaded, tag_file: Option<&Path>) -> CliResult<Vec<PosTag>> {
    let hyper = &m.ckpt.hyper;
    let mut tags: Vec<Option<PosTag>> = vec![None; m.vocab.len()];
    let toy = SceneGrammar::toy();
    if toy.vocab().words() == m.vocab.words() {
        for (w, t) in tags.iter_mut().enumerate() {
            *t = Some(toy.tag(w));
        }
    }
    tags[hyper.start_id] = Some(PosTag::Start);
    tags[hyper.end_id] = Some(PosTag::End);
    let mut overlay = tags_from_samples(&m.samples, &m.vocab);
    if let Some(p) = tag_file {
        overlay.extend(read_tag_file(open(p)?).map_err(|e| io_err(p, e))?);
    }
    for (word, tag) in overlay {
        if let Some(id) = m.vocab.id(&word) {
            tags[id] = Some(tag);
        }
    }
    tags.iter()
        .enumerate()
        .map(|(w, t)| {
            t.ok_or_else(|| CliError::Invalid(format!("no POS tag for word {:?}; pass --tags", m.vocab.word(w))))
        })
        .collect()
}

fn analyze(
    io: &ModelData,
    clusters: usize,
    out: &Path,
    tag_file: Option<&Path>,
    seed: u64,
    exclude_initial: bool,
) -> CliResult<()> {
    let m = load_model_data(io)?;
    let tags = vocab_tags(&m, tag_file)?;
    let records = collect_unbinding(&m.ckpt.params, &m.ckpt.hyper, &m.samples, &tags)?;
    if records.len() < clusters.max(2) {
        return Err(CliError::Invalid(format!(
            "{} unbinding vectors are too few for {clusters} clusters",
            records.len()
        )));
    }
    let us: Vec<Vector> = records.iter().map(|r| r.u.clone()).collect();
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let nv_model = kmeans(&us, 2, seed, KMEANS_MAX_ITER)?;
    let nv_assign = assign_nearest(&nv_model, &us)?;
    let table = conformity_table(&records, &nv_assign, &m.vocab, exclude_initial)?;
    let path = out.join("conformity.csv");
    let mut w = create(&path)?;
    write_conformity_csv(&table, &mut w)?;
    w.flush().map_err(|e| io_err(&path, e))?;
    let sep = nv_separation(&records, &nv_assign)?;

    let model = kmeans(&us, clusters, seed, KMEANS_MAX_ITER)?;
    let assign = assign_nearest(&model, &us)?;
    let report = cluster_report(&records, &assign, clusters)?;
    let path = out.join("cluster_report.csv");
    let mut w = create(&path)?;
    write_cluster_report_csv(&report, &mut w)?;
    w.flush().map_err(|e| io_err(&path, e))?;

    let projection = pca_project(&us)?;
    if projection.degenerate {
        eprintln!("warning: all unbinding vectors are identical; projection is all zeros");
    }
    let path = out.join("projection.csv");
    let mut w = create(&path)?;
    write_projection_csv(&projection, &records, &assign, &m.vocab, &mut w)?;
    w.flush().map_err(|e| io_err(&path, e))?;

    println!("{} unbinding vectors from {} captions", records.len(), m.samples.len());
    println!("N/V split (2 clusters): noun cluster {}", sep.noun_cluster);
    println!("  nouns in noun cluster: {:.3}", sep.noun_share);
    println!("  verbs and prepositions in the other cluster: {:.3}", sep.verb_share);
    for r in &table.rows {
        if r.n_w > 0 {
            println!("  {:<28} N_w {:>6}  N_r {:>6}  P_c {}", r.category.label(), r.n_w, r.n_r, r.p_c_display());
        }
    }
    println!(
        "{clusters} clusters: {:.1}% of tokens share their cluster's most frequent POS tag",
        100.0 * pos_purity(&report)
    );
    for c in report.iter().filter(|c| c.positional.is_some()) {
        println!("  cluster {} is positional: Position {} (1.00)", c.cluster, c.positional.unwrap_or(0));
    }
    println!("wrote conformity.csv, cluster_report.csv, projection.csv to {}", out.display());
    Ok(())
}

fn eval_bleu(io: &ModelData) -> CliResult<()> {
    let m = load_model_data(io)?;
    let end = m.ckpt.hyper.end_id;
    let mut cands = Vec::with_capacity(m.samples.len());
    let mut refs = Vec::with_capacity(m.samples.len());
    for s in &m.samples {
        let g = forward_caption(&s.features, &m.ckpt.params, &m.ckpt.hyper, None, Decoding::Greedy)?;
        cands.push(g.word_ids.iter().copied().take_while(|&w| w != end).collect::<Vec<_>>());
        refs.push(s.caption.iter().copied().take_while(|&w| w != end).collect::<Vec<_>>());
    }
    let scores = bleu_n(&cands, &refs, 4)?;
    for (n, s) in scores.iter().enumerate() {
        println!("BLEU-{} {:.4}", n + 1, s);
    }
    Ok(())
}

fn grad_check(d: usize, seed: u64) -> CliResult<()> {
    let mut worst: f64 = 0.0;
    for mode in [WxMode::TiedAverage, WxMode::Free] {
        let (params, hyper, v, target) = random_check_problem(d, seed, mode)?;
        let r = gradient_check(&params, &hyper, &v, &target)?;
        println!(
            "Wx {:<5} checked {:>5} entries (skipped {:>3} below floor), max relative error {:.3e} in {}",
            mode.as_str(),
            r.checked,
            r.skipped,
            r.max_rel_error,
            r.worst_tensor
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e} (threshold {GRAD_CHECK_TOLERANCE:e})");
    if worst < GRAD_CHECK_TOLERANCE {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::Invalid(format!("gradient check failed: {worst:.3e} >= {GRAD_CHECK_TOLERANCE:e}")))
    }
}
