//! Scene-grammar dataset, embeddings, and their text formats.
//!
//! A scene is a template (a sequence of slots such as `DET N V P DET N`) with
//! one word drawn per slot. Its feature vector concatenates a one-hot block
//! per slot occurrence, so captions are a function of the features when no
//! noise is added.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Det,
    Noun,
    Verb,
    PrepSpatial,
    PrepOther,
    Adj,
    Pron,
    Conj,
    Adv,
    End,
    Start,
}

impl PosTag {
    pub const ALL: [PosTag; 11] = [
        PosTag::Det,
        PosTag::Noun,
        PosTag::Verb,
        PosTag::PrepSpatial,
        PosTag::PrepOther,
        PosTag::Adj,
        PosTag::Pron,
        PosTag::Conj,
        PosTag::Adv,
        PosTag::End,
        PosTag::Start,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Det => "DET",
            PosTag::Noun => "N",
            PosTag::Verb => "V",
            PosTag::PrepSpatial => "P-spatial",
            PosTag::PrepOther => "P-other",
            PosTag::Adj => "ADJ",
            PosTag::Pron => "PRON",
            PosTag::Conj => "CONJ",
            PosTag::Adv => "ADV",
            PosTag::End => "END",
            PosTag::Start => "START",
        }
    }

    pub fn parse(s: &str) -> Option<PosTag> {
        PosTag::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense word list with reverse lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid vocabulary word {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Clone, Debug)]
pub struct Slot {
    pub name: String,
    pub words: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SceneGrammar {
    vocab: Vocabulary,
    tags: Vec<PosTag>,
    slots: Vec<Slot>,
    /// Each template is a list of indices into `slots`.
    templates: Vec<Vec<usize>>,
    start_id: usize,
    end_id: usize,
    max_len: usize,
    /// `(slot, occurrence)` pairs in feature order, with block offsets.
    feature_blocks: Vec<(usize, usize, usize)>,
}

impl SceneGrammar {
    /// `lexicons`: slot name and `(word, tag)` list per slot. `templates`: slot
    /// names separated by spaces. Start and end tokens are appended to the
    /// vocabulary as `<start>` and `<end>`.
    pub fn new(
        lexicons: &[(&str, &[(&str, PosTag)])],
        templates: &[&str],
        max_len: usize,
    ) -> Result<Self> {
        let mut words = Vec::new();
        let mut tags = Vec::new();
        let mut slots = Vec::new();
        for (name, entries) in lexicons {
            if entries.is_empty() {
                return Err(Error::InvalidArgument(format!("slot {name} has an empty lexicon")));
            }
            let mut ids = Vec::new();
            for (w, t) in entries.iter() {
                ids.push(words.len());
                words.push(w.to_string());
                tags.push(*t);
            }
            slots.push(Slot {
                name: name.to_string(),
                words: ids,
            });
        }
        let start_id = words.len();
        words.push("<start>".into());
        tags.push(PosTag::Start);
        let end_id = words.len();
        words.push("<end>".into());
        tags.push(PosTag::End);
        let vocab = Vocabulary::new(words)?;

        let mut parsed = Vec::new();
        for t in templates {
            let mut seq = Vec::new();
            for tok in t.split_whitespace() {
                let idx = slots.iter().position(|s| s.name == tok).ok_or_else(|| {
                    Error::InvalidArgument(format!("template token {tok} has no lexicon"))
                })?;
                seq.push(idx);
            }
            if seq.is_empty() {
                return Err(Error::InvalidArgument("empty template".into()));
            }
            parsed.push(seq);
        }
        if parsed.is_empty() {
            return Err(Error::InvalidArgument("grammar has no templates".into()));
        }

        let mut feature_blocks: Vec<(usize, usize, usize)> = Vec::new();
        let mut offset = 0;
        for seq in &parsed {
            let mut seen: HashMap<usize, usize> = HashMap::new();
            for &slot in seq {
                let occ = seen.entry(slot).or_insert(0);
                if !feature_blocks.iter().any(|&(s, o, _)| s == slot && o == *occ) {
                    feature_blocks.push((slot, *occ, offset));
                    offset += slots[slot].words.len();
                }
                *occ += 1;
            }
        }

        Ok(Self {
            vocab,
            tags,
            slots,
            templates: parsed,
            start_id,
            end_id,
            max_len,
            feature_blocks,
        })
    }

    /// Two templates (`DET N V P DET N`, `DET ADJ N V P DET N`) over
    /// lexicons of sizes DET 2, ADJ 3, N 6, V 4, P 4.
    pub fn toy() -> Self {
        use PosTag::*;
        Self::new(
            &[
                ("DET", &[("a", Det), ("the", Det)]),
                ("ADJ", &[("red", Adj), ("small", Adj), ("wooden", Adj)]),
                (
                    "N",
                    &[
                        ("man", Noun),
                        ("woman", Noun),
                        ("dog", Noun),
                        ("table", Noun),
                        ("room", Noun),
                        ("suitcase", Noun),
                    ],
                ),
                (
                    "V",
                    &[("standing", Verb), ("sitting", Verb), ("lying", Verb), ("walking", Verb)],
                ),
                (
                    "P",
                    &[
                        ("in", PrepSpatial),
                        ("on", PrepSpatial),
                        ("near", PrepSpatial),
                        ("with", PrepOther),
                    ],
                ),
            ],
            &["DET N V P DET N", "DET ADJ N V P DET N"],
            8,
        )
        .expect("toy grammar is well formed")
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tag(&self, word: usize) -> PosTag {
        self.tags[word]
    }

    pub fn tags(&self) -> &[PosTag] {
        &self.tags
    }

    pub fn start_id(&self) -> usize {
        self.start_id
    }

    pub fn end_id(&self) -> usize {
        self.end_id
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn templates(&self) -> &[Vec<usize>] {
        &self.templates
    }

    /// Sum of lexicon sizes over all slot occurrences.
    pub fn feature_dim(&self) -> usize {
        self.feature_blocks
            .iter()
            .map(|&(s, _, _)| self.slots[s].words.len())
            .sum()
    }

    fn block_offset(&self, slot: usize, occurrence: usize) -> usize {
        self.feature_blocks
            .iter()
            .find(|&&(s, o, _)| s == slot && o == occurrence)
            .map(|&(_, _, off)| off)
            .expect("every template slot has a feature block")
    }

    /// Noise-free features and caption for a template with a choice index per slot.
    pub fn render(&self, template: usize, choices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let seq = &self.templates[template];
        let mut features = vec![0.0; self.feature_dim()];
        let mut caption = Vec::with_capacity(seq.len() + 1);
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for (&slot, &choice) in seq.iter().zip(choices) {
            let occ = seen.entry(slot).or_insert(0);
            features[self.block_offset(slot, *occ) + choice] = 1.0;
            *occ += 1;
            caption.push(self.slots[slot].words[choice]);
        }
        caption.push(self.end_id);
        (features, caption)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vector,
    /// Word ids, ending with the end token.
    pub caption: Vec<usize>,
    pub pos_tags: Vec<PosTag>,
}

/// Draw `n` scenes: uniform template, uniform word per slot, Gaussian feature noise.
pub fn sample_dataset(grammar: &SceneGrammar, n: usize, noise: f64, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise}")));
    }
    if let Some(t) = grammar.templates.iter().find(|t| t.len() + 1 > grammar.max_len) {
        return Err(Error::InvalidArgument(format!(
            "template of {} words plus end token exceeds max_len {}",
            t.len(),
            grammar.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let template = rng.random_range(0..grammar.templates.len());
        let choices: Vec<usize> = grammar.templates[template]
            .iter()
            .map(|&s| rng.random_range(0..grammar.slots[s].words.len()))
            .collect();
        let (mut features, caption) = grammar.render(template, &choices);
        if noise > 0.0 {
            for x in &mut features {
                *x += normal.sample(&mut rng);
            }
        }
        let pos_tags = caption.iter().map(|&w| grammar.tag(w)).collect();
        out.push(Sample {
            features: Vector::new(features)?,
            caption,
            pos_tags,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    Synthetic { seed: u64 },
    File { missing: usize },
}

/// Word embeddings as the columns of a `d x V` matrix, recentred to zero mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub we: Mat,
    pub source: EmbeddingSource,
}

impl EmbeddingTable {
    /// Largest absolute entry of the mean column.
    pub fn mean_column_norm(&self) -> f64 {
        let (d, v) = self.we.shape();
        (0..d)
            .map(|i| (0..v).map(|j| self.we.get(i, j)).sum::<f64>().abs() / v as f64)
            .fold(0.0, f64::max)
    }
}

/// Gaussian `d x V` table with the mean column subtracted.
pub fn make_embeddings(vocab_size: usize, d: usize, seed: u64) -> Result<EmbeddingTable> {
    if vocab_size == 0 || d == 0 {
        return Err(Error::InvalidArgument("vocab size and d must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut we = Mat::from_fn(d, vocab_size, |_, _| rng.sample(StandardNormal));
    recentre(&mut we, &vec![true; vocab_size]);
    Ok(EmbeddingTable {
        we,
        source: EmbeddingSource::Synthetic { seed },
    })
}

/// Subtract, from the selected columns, their mean. Unselected columns are
/// left at zero so the overall mean is zero as well.
fn recentre(we: &mut Mat, selected: &[bool]) {
    let n = selected.iter().filter(|&&s| s).count();
    if n == 0 {
        return;
    }
    let (d, v) = we.shape();
    for i in 0..d {
        let mean = (0..v).filter(|&j| selected[j]).map(|j| we.get(i, j)).sum::<f64>() / n as f64;
        for j in (0..v).filter(|&j| selected[j]) {
            we.set(i, j, we.get(i, j) - mean);
        }
    }
}

/// Read `word v1 ... vd` lines. Words absent from the file get zero columns.
pub fn load_embeddings_text<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("bad embedding value {p:?}"),
                    })
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("word {word:?} has no vector"),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {d} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        if let Some(id) = vocab.id(word) {
            found[id] = Some(values);
        }
    }
    let d = dim.ok_or(Error::Empty("load_embeddings_text"))?;
    let missing = found.iter().filter(|f| f.is_none()).count();
    let mut we = Mat::from_fn(d, vocab.len(), |i, j| found[j].as_ref().map_or(0.0, |v| v[i]));
    let present: Vec<bool> = found.iter().map(Option::is_some).collect();
    recentre(&mut we, &present);
    Ok(EmbeddingTable {
        we,
        source: EmbeddingSource::File { missing },
    })
}

pub fn write_embeddings_text<W: Write>(table: &EmbeddingTable, vocab: &Vocabulary, mut out: W) -> Result<()> {
    let (d, v) = table.we.shape();
    if v != vocab.len() {
        return Err(crate::error::mismatch("write_embeddings_text", vocab.len(), v));
    }
    for j in 0..v {
        write!(out, "{}", vocab.word(j))?;
        for i in 0..d {
            write!(out, " {}", table.we.get(i, j))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// One sample per line: `f1,f2,...<TAB>w1 w2 ...<TAB>t1 t2 ...`.
pub fn write_dataset<W: Write>(samples: &[Sample], vocab: &Vocabulary, mut out: W) -> Result<()> {
    for s in samples {
        let feats: Vec<String> = s.features.as_slice().iter().map(|x| x.to_string()).collect();
        let words: Vec<&str> = s.caption.iter().map(|&w| vocab.word(w)).collect();
        let tags: Vec<&str> = s.pos_tags.iter().map(|t| t.as_str()).collect();
        writeln!(out, "{}\t{}\t{}", feats.join(","), words.join(" "), tags.join(" "))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let features: Vec<f64> = fields[0]
            .split(',')
            .map(|x| {
                x.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("non-numeric feature {x:?}")))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(err(format!("expected {d} features, found {}", features.len())))
            }
            _ => {}
        }
        let caption: Vec<usize> = fields[1]
            .split_whitespace()
            .map(|w| vocab.id(w).ok_or_else(|| err(format!("unknown word {w:?}"))))
            .collect::<Result<_>>()?;
        let pos_tags: Vec<PosTag> = fields[2]
            .split_whitespace()
            .map(|t| PosTag::parse(t).ok_or_else(|| err(format!("unknown tag {t:?}"))))
            .collect::<Result<_>>()?;
        if caption.len() != pos_tags.len() {
            return Err(err(format!(
                "{} caption tokens but {} tags",
                caption.len(),
                pos_tags.len()
            )));
        }
        if caption.is_empty() {
            return Err(err("empty caption".into()));
        }
        out.push(Sample {
            features: Vector::new(features).map_err(|e| err(e.to_string()))?,
            caption,
            pos_tags,
        });
    }
    Ok(out)
}

/// `word TAG` per line.
pub fn read_tag_file<R: BufRead>(reader: R) -> Result<HashMap<String, PosTag>> {
    let mut map = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => continue,
            [w, t] => {
                let tag = PosTag::parse(t).ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: format!("unknown tag {t:?}"),
                })?;
                map.insert(w.to_string(), tag);
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "expected `word TAG`".into(),
                })
            }
        }
    }
    Ok(map)
}

/// Word-to-tag map observed in a dataset's tag column.
pub fn tags_from_samples(samples: &[Sample], vocab: &Vocabulary) -> HashMap<String, PosTag> {
    let mut map = HashMap::new();
    for s in samples {
        for (&w, &t) in s.caption.iter().zip(&s.pos_tags) {
            map.entry(vocab.word(w).to_string()).or_insert(t);
        }
    }
    map
}
