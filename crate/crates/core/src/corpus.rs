//! Corpus I/O and synthetic mention streams.
//!
//! The corpus format is JSON lines, one document per line:
//!
//! ```json
//! {"doc_id":"d1","tokens":["He","ran"],"clusters":[[[0,0]]]}
//! ```
//!
//! Spans are **inclusive** `[start, end]` token indices. Predictions use the
//! same shape with predicted clusters in place of gold ones.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irp::PronounLexicon;
use crate::model::{Document, MentionSpan};

pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    parse_jsonl_reader(File::open(path)?)
}

/// Parses and validates every non-blank line. Errors carry 1-based line numbers.
pub fn parse_jsonl_reader<R: Read>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn to_jsonl(docs: &[Document]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_jsonl(docs)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Writes `docs` with their clusters replaced by `predicted`, one set per document.
pub fn write_predictions(path: impl AsRef<Path>, docs: &[Document], predicted: &[Vec<Vec<MentionSpan>>]) -> Result<()> {
    if docs.len() != predicted.len() {
        return Err(Error::DocMismatch(format!(
            "{} documents but {} prediction sets",
            docs.len(),
            predicted.len()
        )));
    }
    let out: Vec<Document> = docs
        .iter()
        .zip(predicted)
        .map(|(d, p)| Document { doc_id: d.doc_id.clone(), tokens: d.tokens.clone(), gold_clusters: p.clone() })
        .collect();
    write_jsonl(path, &out)
}

pub const RESULTS_HEADER: [&str; 13] = [
    "policy",
    "tau1",
    "tau2",
    "irp_mode",
    "classifier",
    "seed",
    "muc_f1",
    "b3_f1",
    "ceaf_f1",
    "avg_f1",
    "evictions",
    "hit_rate",
    "max_batch_elems",
];

/// One results CSV row. Summary rows put `mean` or `std` in the seed column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub tau1: usize,
    pub tau2: usize,
    pub irp_mode: String,
    pub classifier: String,
    pub seed: String,
    pub muc_f1: f64,
    pub b3_f1: f64,
    pub ceaf_f1: f64,
    pub avg_f1: f64,
    pub evictions: f64,
    pub hit_rate: f64,
    pub max_batch_elems: f64,
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_documents: usize,
    pub entities_per_doc: usize,
    /// Mean mentions per entity; counts follow a Zipf profile over entity rank.
    pub mentions_per_entity_mean: f64,
    /// Zipf exponent. 0 makes every entity get exactly the (rounded) mean.
    pub zipf_s: f64,
    /// Mean number of filler tokens before each mention (geometric).
    pub span_gap_mean: f64,
    /// Entities whose mentions are spread over the whole document; the rest
    /// are confined to a local window.
    pub long_range_fraction: f64,
    pub pronoun_rate: f64,
    pub max_tokens_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    /// Roughly the size of a long literary document: ~290 mentions, ~2100 tokens.
    fn default() -> Self {
        Self {
            n_documents: 10,
            entities_per_doc: 40,
            mentions_per_entity_mean: 7.275,
            zipf_s: 1.0,
            span_gap_mean: 5.5,
            long_range_fraction: 0.3,
            pronoun_rate: 0.3,
            max_tokens_per_doc: 100_000,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_documents < 1 || self.entities_per_doc < 1 {
            return bad("n_documents and entities_per_doc must be at least 1");
        }
        if !(1.0..=f64::INFINITY).contains(&self.mentions_per_entity_mean) {
            return bad("mentions_per_entity_mean must be at least 1");
        }
        if ![self.zipf_s, self.span_gap_mean].iter().all(|x| (0.0..=f64::INFINITY).contains(x)) {
            return bad("zipf_s and span_gap_mean must be non-negative");
        }
        for (name, r) in [("long_range_fraction", self.long_range_fraction), ("pronoun_rate", self.pronoun_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }

    /// Mentions per entity by rank, at least one each.
    pub fn mention_counts(&self) -> Vec<usize> {
        let e = self.entities_per_doc;
        let weights: Vec<f64> = (1..=e).map(|k| (k as f64).powf(-self.zipf_s)).collect();
        let total: f64 = weights.iter().sum();
        let budget = self.mentions_per_entity_mean * e as f64;
        weights.iter().map(|w| ((budget * w / total).round() as usize).max(1)).collect()
    }
}

const FIRST_NAMES: [&str; 24] = [
    "alice", "bruno", "clara", "dmitri", "elena", "farid", "greta", "hugo", "ines", "jonas", "kira", "leon",
    "maya", "nils", "olga", "pavel", "quinn", "rosa", "sami", "tove", "ugo", "vera", "wim", "yara",
];
const LAST_NAMES: [&str; 20] = [
    "abbott", "brandt", "castell", "dorian", "ellery", "fenwick", "gallo", "harker", "ivers", "jessup",
    "kessler", "lindqvist", "moreau", "novak", "orsini", "prescott", "quayle", "rinaldi", "sorel", "thorne",
];
const TITLES: [&str; 8] = ["doctor", "captain", "professor", "judge", "sister", "colonel", "mister", "madame"];
const FILLER: [&str; 24] = [
    "walked", "quietly", "across", "a", "wide", "field", "and", "then", "paused", "near", "an", "old",
    "gate", "while", "rain", "fell", "over", "distant", "hills", "before", "evening", "came", "slowly",
    "again",
];
const PRONOUNS: [&str; 10] = ["he", "she", "they", "him", "her", "them", "his", "their", "himself", "herself"];

#[derive(Clone, Debug)]
struct Entity {
    first: &'static str,
    last: &'static str,
    title: &'static str,
}

impl Entity {
    /// Surface forms share tokens so that inclusion grouping has work to do.
    fn surface(&self, rng: &mut ChaCha8Rng, first_mention: bool) -> Vec<String> {
        let forms: [Vec<&str>; 3] =
            [vec![self.first, self.last], vec![self.last], vec![self.title, self.first, self.last]];
        let pick = if first_mention { 0 } else { rng.gen_range(0..forms.len()) };
        forms[pick].iter().map(|s| s.to_string()).collect()
    }
}

fn geometric(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    // failures before first success with p = 1 / (mean + 1)
    let p = 1.0 / (mean + 1.0);
    let mut n = 0;
    while !rng.gen_bool(p) {
        n += 1;
    }
    n
}

/// Builds a deterministic corpus from `p`.
pub fn generate_synthetic(p: &SynthParams) -> Result<Vec<Document>> {
    p.validate()?;
    let counts = p.mention_counts();
    let n_mentions: usize = counts.iter().sum();
    // every mention needs at least one token
    if n_mentions > p.max_tokens_per_doc {
        return Err(Error::Generation(format!(
            "{n_mentions} mentions cannot fit in {} tokens",
            p.max_tokens_per_doc
        )));
    }
    let lexicon = PronounLexicon::default();
    let pronouns: Vec<&str> = PRONOUNS.iter().copied().filter(|p| lexicon.contains(p)).collect();

    (0..p.n_documents)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(d as u64);
            generate_document(p, &counts, &pronouns, d, &mut rng)
        })
        .collect()
}

fn generate_document(
    p: &SynthParams,
    counts: &[usize],
    pronouns: &[&str],
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Document> {
    let n_ent = counts.len();
    let entities: Vec<Entity> = (0..n_ent)
        .map(|_| Entity {
            first: FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())],
            last: LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())],
            title: TITLES[rng.gen_range(0..TITLES.len())],
        })
        .collect();

    let n_long = (p.long_range_fraction * n_ent as f64).round() as usize;
    let mut ranks: Vec<usize> = (0..n_ent).collect();
    ranks.shuffle(rng);
    let mut long_range = vec![false; n_ent];
    for &e in &ranks[..n_long] {
        long_range[e] = true;
    }

    // Order mentions by a position key in [0, 1).
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    for (e, &n) in counts.iter().enumerate() {
        let (lo, width) = if long_range[e] {
            (0.0, 1.0)
        } else {
            let width = 0.1;
            (rng.gen::<f64>() * (1.0 - width), width)
        };
        for _ in 0..n {
            keyed.push((lo + rng.gen::<f64>() * width, e));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut tokens: Vec<String> = Vec::new();
    let mut clusters: Vec<Vec<MentionSpan>> = vec![Vec::new(); n_ent];
    for (_, e) in keyed {
        for _ in 0..geometric(rng, p.span_gap_mean) {
            tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
        }
        let first = clusters[e].is_empty();
        let surface = if rng.gen_bool(p.pronoun_rate) && !pronouns.is_empty() {
            vec![pronouns[rng.gen_range(0..pronouns.len())].to_string()]
        } else {
            entities[e].surface(rng, first)
        };
        let start = tokens.len();
        tokens.extend(surface);
        clusters[e].push(MentionSpan::new(start, tokens.len() - 1));
        if tokens.len() > p.max_tokens_per_doc {
            return Err(Error::Generation(format!(
                "document {index} exceeded {} tokens; lower span_gap_mean or mention counts",
                p.max_tokens_per_doc
            )));
        }
    }
    // trailing filler so the last mention is not the final token
    tokens.push(".".to_string());
    Document::new(format!("synth-{index:04}"), tokens, clusters)
}
