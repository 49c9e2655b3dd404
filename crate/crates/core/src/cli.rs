//! Command-line driver: `gen`, `run`, `sweep` and `score`.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{self, ResultRow, SynthParams};
use crate::engine::{run_document, ClassifierKind, EngineConfig, Phase, ReplayOutput};
use crate::error::{Error, Result};
use crate::eviction::EvictionPolicy;
use crate::irp::{InclusionMode, IrpMode, PronounLexicon};
use crate::metrics::{MetricCounts, ScoreReport};
use crate::model::{Document, MentionSpan};

pub const SEED_ENV: &str = "MEMCOREF_SEED";
pub const DEFAULT_GRID: &str = "10/10,10/20,10/30,30/30,50/30";

#[derive(Debug, Parser)]
#[command(name = "memcoref", version, about = "Memory-bounded incremental coreference clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a corpus of mention streams.
    Gen(GenArgs),
    /// Replay one configuration over a corpus.
    Run(RunArgs),
    /// Replay a grid of policies x tau1/tau2 x seeds.
    Sweep(SweepArgs),
    /// Score predicted clusters against gold.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub docs: usize,
    #[arg(long, default_value_t = 40)]
    pub entities: usize,
    #[arg(long, default_value_t = 7.275)]
    pub mentions_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub zipf_s: f64,
    #[arg(long, default_value_t = 5.5)]
    pub gap_mean: f64,
    #[arg(long, default_value_t = 0.3)]
    pub long_range: f64,
    #[arg(long, default_value_t = 0.3)]
    pub pronoun_rate: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_tokens: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

/// Options shared by `run` and `sweep`.
#[derive(Debug, Args, Clone)]
pub struct ReplayArgs {
    #[arg(long, default_value = "oracle")]
    pub classifier: String,
    #[arg(long, default_value = "group")]
    pub irp: String,
    #[arg(long, default_value = "blind")]
    pub phase: String,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 1024)]
    pub hidden_dim: u64,
    /// Pronoun list file, one entry per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Keep "it" in the pronoun list.
    #[arg(long)]
    pub keep_it: bool,
    /// Use raw character substrings for non-pronoun inclusion.
    #[arg(long)]
    pub raw_substring: bool,
    /// Pool counts across documents instead of averaging per-document scores.
    #[arg(long)]
    pub micro: bool,
    /// Worker threads (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub tau1: usize,
    #[arg(long, default_value_t = 30)]
    pub tau2: usize,
    #[arg(long, default_value = "saes-train")]
    pub train_policy: String,
    #[arg(long, default_value = "saes-inf")]
    pub infer_policy: String,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for predictions.jsonl and report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub replay: ReplayArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub corpus: PathBuf,
    #[arg(long, default_value = DEFAULT_GRID)]
    pub grid: String,
    /// Comma-separated entries, each `name` or `train/infer`; `saes` is `saes-train/saes-inf`.
    #[arg(long, default_value = "saes,lru,dual-cache")]
    pub policies: String,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub replay: ReplayArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub micro: bool,
}

/// Parses `"10/10,50/30"` into `(tau1, tau2)` cells.
pub fn parse_grid(grid: &str) -> Result<Vec<(usize, usize)>> {
    let cells = grid
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|cell| {
            let (a, b) = cell
                .trim()
                .split_once('/')
                .ok_or_else(|| Error::Config(format!("grid cell {cell:?} is not tau1/tau2")))?;
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|_| Error::Config(format!("grid cell {cell:?} is not tau1/tau2")))
            };
            let (tau1, tau2) = (parse(a)?, parse(b)?);
            if tau1 < 1 || tau2 < 2 {
                return Err(Error::Config(format!("grid cell {cell:?} needs tau1 >= 1 and tau2 >= 2")));
            }
            Ok((tau1, tau2))
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    Ok(cells)
}

/// Parses one sweep policy entry into `(label, train, infer)`.
pub fn parse_policy_entry(entry: &str) -> Result<(String, EvictionPolicy, EvictionPolicy)> {
    let entry = entry.trim();
    let (train, infer) = match entry.split_once('/') {
        Some((t, i)) => (t.parse()?, i.parse()?),
        None if entry.eq_ignore_ascii_case("saes") => (EvictionPolicy::SaesTrain, EvictionPolicy::SaesInf),
        None => {
            let p: EvictionPolicy = entry.parse()?;
            (p, p)
        }
    };
    Ok((entry.to_string(), train, infer))
}

impl ReplayArgs {
    fn config(
        &self,
        tau1: usize,
        tau2: usize,
        train: EvictionPolicy,
        infer: EvictionPolicy,
        seed: u64,
    ) -> Result<EngineConfig<f64>> {
        let lexicon = match &self.lexicon {
            Some(path) => Some(PronounLexicon::from_file(path, !self.keep_it)?),
            None => None,
        };
        let cfg = EngineConfig {
            tau1,
            tau2,
            delta: self.delta,
            train_policy: train,
            infer_policy: infer,
            irp_mode: self.irp.parse::<IrpMode>()?,
            classifier: self.classifier.parse::<ClassifierKind<f64>>()?,
            seed,
            hidden_dim: self.hidden_dim,
            pronoun_excludes_it: !self.keep_it,
            inclusion_mode: if self.raw_substring { InclusionMode::RawSubstring } else { InclusionMode::TokenSubsequence },
            lexicon,
        };
        cfg.validate_for(self.phase()?)?;
        Ok(cfg)
    }

    fn phase(&self) -> Result<Phase> {
        self.phase.parse()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Replay results for a whole corpus, in document order.
#[derive(Clone, Debug)]
pub struct CorpusRun {
    pub outputs: Vec<ReplayOutput>,
    pub counts: Vec<MetricCounts<f64>>,
    pub reports: Vec<ScoreReport<f64>>,
}

impl CorpusRun {
    pub fn aggregate(&self, micro: bool) -> ScoreReport<f64> {
        if micro {
            self.counts.iter().fold(MetricCounts::default(), |acc, c| acc.add(c)).report()
        } else {
            ScoreReport::macro_average(&self.reports)
        }
    }

    pub fn evictions(&self) -> u64 {
        self.outputs.iter().map(|o| o.trace.evictions).sum()
    }

    /// Hits over lookups pooled across documents.
    pub fn hit_rate(&self) -> f64 {
        let hits: u64 = self.outputs.iter().map(|o| o.trace.hit_count).sum();
        let lookups: u64 = self.outputs.iter().map(|o| o.trace.lookups).sum();
        if lookups == 0 {
            1.0
        } else {
            hits as f64 / lookups as f64
        }
    }

    pub fn max_batch_elems(&self) -> u64 {
        self.outputs.iter().map(|o| o.trace.max_batch_elems).max().unwrap_or(0)
    }
}

/// Replays every document (seed `cfg.seed ^ index`) on a pool of `workers` threads.
pub fn run_corpus(docs: &[Document], cfg: &EngineConfig<f64>, phase: Phase, workers: usize) -> Result<CorpusRun> {
    let per_doc = |(i, doc): (usize, &Document)| -> Result<(ReplayOutput, MetricCounts<f64>)> {
        let out = run_document(doc, &doc.mention_stream(), &cfg.for_document(i), phase)?;
        let counts = MetricCounts::compute(&doc.gold_clusters, &out.predicted)?;
        Ok((out, counts))
    };
    let results: Vec<_> =
        pool(workers)?.install(|| docs.par_iter().enumerate().map(per_doc).collect::<Result<Vec<_>>>())?;
    let (outputs, counts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let reports = counts.iter().map(MetricCounts::report).collect();
    Ok(CorpusRun { outputs, counts, reports })
}

#[derive(Serialize)]
struct DocumentReport<'a> {
    doc_id: &'a str,
    scores: ScoreReport<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    telemetry: Option<Telemetry>,
}

#[derive(Serialize)]
struct Telemetry {
    mentions: usize,
    predicted_clusters: usize,
    evictions: u64,
    assignments: u64,
    condensations: u64,
    hit_count: u64,
    lookups: u64,
    hit_rate: f64,
    max_batch_elems: u64,
}

#[derive(Serialize)]
struct RunReport<'a> {
    tau1: usize,
    tau2: usize,
    train_policy: String,
    infer_policy: String,
    phase: String,
    irp_mode: String,
    classifier: String,
    delta: f64,
    seed: u64,
    aggregation: &'static str,
    documents: Vec<DocumentReport<'a>>,
    aggregate: ScoreReport<f64>,
    evictions: u64,
    hit_rate: f64,
    max_batch_elems: u64,
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let params = SynthParams {
        n_documents: a.docs,
        entities_per_doc: a.entities,
        mentions_per_entity_mean: a.mentions_mean,
        zipf_s: a.zipf_s,
        span_gap_mean: a.gap_mean,
        long_range_fraction: a.long_range,
        pronoun_rate: a.pronoun_rate,
        max_tokens_per_doc: a.max_tokens,
        seed: a.seed,
    };
    let docs = corpus::generate_synthetic(&params)?;
    corpus::write_jsonl(&a.out, &docs)?;
    println!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let phase = a.replay.phase()?;
    let cfg = a.replay.config(a.tau1, a.tau2, a.train_policy.parse()?, a.infer_policy.parse()?, a.seed)?;
    let docs = corpus::parse_jsonl(&a.corpus)?;
    let run = run_corpus(&docs, &cfg, phase, a.replay.workers)?;

    std::fs::create_dir_all(&a.out)?;
    let predicted: Vec<Vec<Vec<MentionSpan>>> = run.outputs.iter().map(|o| o.predicted.clone()).collect();
    corpus::write_predictions(a.out.join("predictions.jsonl"), &docs, &predicted)?;

    let aggregate = run.aggregate(a.replay.micro);
    let documents = docs
        .iter()
        .zip(&run.outputs)
        .zip(&run.reports)
        .map(|((d, o), r)| DocumentReport {
            doc_id: &d.doc_id,
            scores: *r,
            telemetry: Some(Telemetry {
                mentions: o.trace.decisions.len(),
                predicted_clusters: o.predicted.len(),
                evictions: o.trace.evictions,
                assignments: o.trace.assignments,
                condensations: o.trace.condensations,
                hit_count: o.trace.hit_count,
                lookups: o.trace.lookups,
                hit_rate: o.trace.hit_rate(),
                max_batch_elems: o.trace.max_batch_elems,
            }),
        })
        .collect();
    let report = RunReport {
        tau1: cfg.tau1,
        tau2: cfg.tau2,
        train_policy: cfg.train_policy.to_string(),
        infer_policy: cfg.infer_policy.to_string(),
        phase: phase.to_string(),
        irp_mode: cfg.irp_mode.to_string(),
        classifier: cfg.classifier.to_string(),
        delta: cfg.delta,
        seed: cfg.seed,
        aggregation: if a.replay.micro { "micro" } else { "macro" },
        documents,
        aggregate,
        evictions: run.evictions(),
        hit_rate: run.hit_rate(),
        max_batch_elems: run.max_batch_elems(),
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(a.out.join("report.json"), json)?;
    println!(
        "{} documents  avg_f1 {:.2}  muc {:.2}  b3 {:.2}  ceaf {:.2}  evictions {}  hit_rate {:.4}",
        docs.len(),
        aggregate.avg_f1,
        aggregate.muc.f1,
        aggregate.b3.f1,
        aggregate.ceaf.f1,
        report.evictions,
        report.hit_rate
    );
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary_rows(detail: &[ResultRow]) -> [ResultRow; 2] {
    let col = |f: fn(&ResultRow) -> f64| mean_std(&detail.iter().map(f).collect::<Vec<_>>());
    let stats = [
        col(|r| r.muc_f1),
        col(|r| r.b3_f1),
        col(|r| r.ceaf_f1),
        col(|r| r.avg_f1),
        col(|r| r.evictions),
        col(|r| r.hit_rate),
        col(|r| r.max_batch_elems),
    ];
    let build = |label: &str, pick: fn((f64, f64)) -> f64| ResultRow {
        seed: label.to_string(),
        muc_f1: pick(stats[0]),
        b3_f1: pick(stats[1]),
        ceaf_f1: pick(stats[2]),
        avg_f1: pick(stats[3]),
        evictions: pick(stats[4]),
        hit_rate: pick(stats[5]),
        max_batch_elems: pick(stats[6]),
        ..detail[0].clone()
    };
    [build("mean", |s| s.0), build("std", |s| s.1)]
}

/// Runs the sweep and returns detail rows followed by their mean/std rows,
/// grouped per (policy, cell).
pub fn sweep_rows(docs: &[Document], a: &SweepArgs) -> Result<Vec<ResultRow>> {
    let grid = parse_grid(&a.grid)?;
    let policies = a.policies.split(',').filter(|s| !s.trim().is_empty()).map(parse_policy_entry).collect::<Result<Vec<_>>>()?;
    if policies.is_empty() {
        return Err(Error::Config("no policies given".into()));
    }
    if a.seeds < 1 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let phase = a.replay.phase()?;
    let mut rows = Vec::new();
    for (label, train, infer) in &policies {
        for &(tau1, tau2) in &grid {
            let mut detail = Vec::new();
            for k in 0..a.seeds {
                let seed = a.seed.wrapping_add(k);
                let cfg = a.replay.config(tau1, tau2, *train, *infer, seed)?;
                let run = run_corpus(docs, &cfg, phase, a.replay.workers)?;
                let agg = run.aggregate(a.replay.micro);
                detail.push(ResultRow {
                    policy: label.clone(),
                    tau1,
                    tau2,
                    irp_mode: cfg.irp_mode.to_string(),
                    classifier: cfg.classifier.to_string(),
                    seed: seed.to_string(),
                    muc_f1: agg.muc.f1,
                    b3_f1: agg.b3.f1,
                    ceaf_f1: agg.ceaf.f1,
                    avg_f1: agg.avg_f1,
                    evictions: run.evictions() as f64,
                    hit_rate: run.hit_rate(),
                    max_batch_elems: run.max_batch_elems() as f64,
                });
            }
            let summary = summary_rows(&detail);
            rows.extend(detail);
            rows.extend(summary);
        }
    }
    Ok(rows)
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    // Validate flags before touching the corpus so usage errors win.
    parse_grid(&a.grid)?;
    for entry in a.policies.split(',').filter(|s| !s.trim().is_empty()) {
        let (_, train, infer) = parse_policy_entry(entry)?;
        a.replay.config(1, 2, train, infer, a.seed)?;
    }
    let docs = corpus::parse_jsonl(&a.corpus)?;
    let rows = sweep_rows(&docs, a)?;
    corpus::write_results_csv(&a.out, &rows)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreOutput<'a> {
    aggregation: &'static str,
    documents: Vec<DocumentReport<'a>>,
    aggregate: ScoreReport<f64>,
}

/// Scores `pred` against `gold`, matching documents by id.
pub fn score_documents(gold: &[Document], pred: &[Document], micro: bool) -> Result<(Vec<ScoreReport<f64>>, ScoreReport<f64>)> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|d| d.doc_id.as_str()).collect();
    let by_id: HashMap<&str, &Document> = pred.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let pred_ids: BTreeSet<&str> = by_id.keys().copied().collect();
    if gold_ids != pred_ids {
        let missing: Vec<_> = gold_ids.difference(&pred_ids).copied().collect();
        let extra: Vec<_> = pred_ids.difference(&gold_ids).copied().collect();
        return Err(Error::DocMismatch(format!("missing from pred: {missing:?}; missing from gold: {extra:?}")));
    }
    let counts =
        gold.iter().map(|g| MetricCounts::compute(&g.gold_clusters, &by_id[g.doc_id.as_str()].gold_clusters)).collect::<Result<Vec<_>>>()?;
    let reports: Vec<_> = counts.iter().map(MetricCounts::<f64>::report).collect();
    let aggregate = if micro {
        counts.iter().fold(MetricCounts::default(), |acc, c| acc.add(c)).report()
    } else {
        ScoreReport::macro_average(&reports)
    };
    Ok((reports, aggregate))
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let gold = corpus::parse_jsonl(&a.gold)?;
    let pred = corpus::parse_jsonl(&a.pred)?;
    let (reports, aggregate) = score_documents(&gold, &pred, a.micro)?;
    let out = ScoreOutput {
        aggregation: if a.micro { "micro" } else { "macro" },
        documents: gold
            .iter()
            .zip(reports)
            .map(|(d, scores)| DocumentReport { doc_id: &d.doc_id, scores, telemetry: None })
            .collect(),
        aggregate,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Score(a) => cmd_score(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid(DEFAULT_GRID).unwrap().len(), 5);
        assert_eq!(parse_grid("50/30").unwrap(), vec![(50, 30)]);
        assert!(matches!(parse_grid("50/1"), Err(Error::Config(_))));
        assert!(parse_grid("50x30").is_err());
        assert!(parse_grid("0/5").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn policy_entries() {
        let (l, t, i) = parse_policy_entry("saes").unwrap();
        assert_eq!((l.as_str(), t, i), ("saes", EvictionPolicy::SaesTrain, EvictionPolicy::SaesInf));
        let (_, t, i) = parse_policy_entry("saes-train/lru").unwrap();
        assert_eq!((t, i), (EvictionPolicy::SaesTrain, EvictionPolicy::Lru));
        let (_, t, i) = parse_policy_entry("lru").unwrap();
        assert_eq!((t, i), (EvictionPolicy::Lru, EvictionPolicy::Lru));
        assert!(parse_policy_entry("fifo").is_err());
    }

    #[test]
    fn mean_std_identical() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
