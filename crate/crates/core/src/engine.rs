//! The incremental clustering loop.
//!
//! Each mention is scored against every cached cluster. If the best
//! probability exceeds 0.5 the mention joins that cluster; otherwise a new
//! singleton is opened, evicting one cluster first when the cache already holds
//! `tau1`. Clusters that grow past `tau2` stored mentions are condensed right
//! after the assignment that pushed them over.
//!
//! Evicted clusters are frozen, not dropped: the prediction for a document is
//! every cluster ever opened with all mentions ever assigned to it.
//! Condensation only limits what the classifier sees.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eviction::{dual_cache_touch, select_victim, EvictionPolicy};
use crate::irp::{condense_cluster, InclusionMode, IrpMode, PronounLexicon};
use crate::model::{CacheState, ClusterId, Document, MentionSpan, TrackedCluster};
use crate::scalar::Scalar;

pub const DEFAULT_TAU1: usize = 50;
pub const DEFAULT_TAU2: usize = 30;
pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_HIDDEN_DIM: u64 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Gold clusters are known; the train-phase policy applies.
    AnnotatedReplay,
    /// No gold statistics for eviction; the inference-phase policy applies.
    Blind,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::AnnotatedReplay => "annotated",
            Phase::Blind => "blind",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "annotated" | "train" => Ok(Phase::AnnotatedReplay),
            "blind" | "inference" => Ok(Phase::Blind),
            _ => Err(Error::Config(format!("unknown phase {s:?}"))),
        }
    }
}

/// Pairwise link probabilities `(mention, earlier mention) -> p` supplied from outside.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable<T> {
    pub pairs: HashMap<(MentionSpan, MentionSpan), T>,
}

impl<T: Scalar> ScoreTable<T> {
    pub fn insert(&mut self, mention: MentionSpan, antecedent: MentionSpan, p: T) {
        self.pairs.insert((mention, antecedent), p);
    }

    /// Highest pair probability against the stored mentions of `cluster`.
    pub fn cluster_probability(&self, mention: MentionSpan, cluster: &TrackedCluster) -> T {
        cluster
            .mentions
            .iter()
            .filter_map(|a| self.pairs.get(&(mention, *a)).copied())
            .fold(T::zero(), T::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierKind<T> {
    /// Probability 1 for cached clusters of the mention's gold entity, 0 elsewhere.
    Oracle,
    /// Oracle decisions, each flipped independently with `flip_prob`.
    NoisyOracle { flip_prob: T },
    Threshold(Arc<ScoreTable<T>>),
}

impl<T: Scalar> fmt::Display for ClassifierKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Oracle => write!(f, "oracle"),
            ClassifierKind::NoisyOracle { flip_prob } => write!(f, "noisy:{flip_prob}"),
            ClassifierKind::Threshold(_) => write!(f, "threshold"),
        }
    }
}

impl<T: Scalar> FromStr for ClassifierKind<T> {
    type Err = Error;

    /// `oracle` or `noisy:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "oracle" {
            return Ok(ClassifierKind::Oracle);
        }
        if let Some(p) = s.strip_prefix("noisy:") {
            let p: f64 = p.parse().map_err(|_| Error::Config(format!("bad flip probability in {s:?}")))?;
            check_flip(p)?;
            return Ok(ClassifierKind::NoisyOracle { flip_prob: T::lit(p) });
        }
        Err(Error::Config(format!("unknown classifier {s:?}")))
    }
}

fn check_flip(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("flip probability must lie in [0, 1], got {p}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig<T> {
    pub tau1: usize,
    pub tau2: usize,
    pub delta: T,
    pub train_policy: EvictionPolicy,
    pub infer_policy: EvictionPolicy,
    pub irp_mode: IrpMode,
    pub classifier: ClassifierKind<T>,
    pub seed: u64,
    pub hidden_dim: u64,
    pub pronoun_excludes_it: bool,
    pub inclusion_mode: InclusionMode,
    /// Replaces the built-in pronoun list when set.
    pub lexicon: Option<PronounLexicon>,
}

impl<T: Scalar> Default for EngineConfig<T> {
    fn default() -> Self {
        Self {
            tau1: DEFAULT_TAU1,
            tau2: DEFAULT_TAU2,
            delta: T::lit(DEFAULT_DELTA),
            train_policy: EvictionPolicy::SaesTrain,
            infer_policy: EvictionPolicy::SaesInf,
            irp_mode: IrpMode::GroupBased,
            classifier: ClassifierKind::Oracle,
            seed: 0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            pronoun_excludes_it: true,
            inclusion_mode: InclusionMode::TokenSubsequence,
            lexicon: None,
        }
    }
}

impl<T: Scalar> EngineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tau1 < 1 {
            return Err(Error::Config("tau1 must be at least 1".into()));
        }
        if self.tau2 < 2 {
            return Err(Error::Config(format!("tau2 must be at least 2, got {}", self.tau2)));
        }
        if !(self.delta > T::zero() && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.hidden_dim < 1 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        self.train_policy.validate()?;
        self.infer_policy.validate()?;
        if let ClassifierKind::NoisyOracle { flip_prob } = self.classifier {
            check_flip(flip_prob.to_f64().unwrap_or(f64::NAN))?;
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the phase rule: blind replays have no
    /// remaining-mention counts, so their policy cannot be `SaesTrain`.
    pub fn validate_for(&self, phase: Phase) -> Result<()> {
        self.validate()?;
        if phase == Phase::Blind && self.infer_policy.needs_gold() {
            return Err(Error::PhaseMismatch("saes-train cannot drive a blind replay".into()));
        }
        Ok(())
    }

    pub fn policy_for(&self, phase: Phase) -> EvictionPolicy {
        match phase {
            Phase::AnnotatedReplay => self.train_policy,
            Phase::Blind => self.infer_policy,
        }
    }

    pub fn lexicon(&self) -> PronounLexicon {
        self.lexicon.clone().unwrap_or_else(|| PronounLexicon::standard(self.pronoun_excludes_it))
    }

    /// The same config reseeded for the document at `doc_index`.
    pub fn for_document(&self, doc_index: usize) -> Self {
        Self { seed: self.seed ^ doc_index as u64, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepDecision {
    Assigned(ClusterId),
    NewCluster(ClusterId),
    EvictedThenNew { victim: ClusterId, cluster: ClusterId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayTrace {
    pub decisions: Vec<StepDecision>,
    pub evictions: u64,
    pub assignments: u64,
    pub new_clusters: u64,
    /// Assignments made while the mention's gold entity had a cached cluster.
    pub hit_count: u64,
    /// Mentions whose gold entity already occurred earlier in the stream.
    pub lookups: u64,
    pub condensations: u64,
    pub max_batch_elems: u64,
    /// Largest cache size and stored cluster size observed after any step.
    pub max_cache_len: usize,
    pub max_stored: usize,
}

impl ReplayTrace {
    /// `hit_count / lookups`, or 1 when no mention had an earlier coreferent.
    pub fn hit_rate(&self) -> f64 {
        if self.lookups == 0 {
            1.0
        } else {
            self.hit_count as f64 / self.lookups as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub predicted: Vec<Vec<MentionSpan>>,
    pub trace: ReplayTrace,
}

/// Elements in the classifier input tensor: `w * (max_cluster_size + 1) * d_h`.
pub fn batch_budget(w: u64, max_cluster_size: u64, d_h: u64) -> u64 {
    w * (max_cluster_size + 1) * d_h
}

/// Flips each binary oracle decision with probability `flip_prob`.
pub fn noisy_oracle<T: Scalar, R: Rng + ?Sized>(gold: &[T], flip_prob: T, rng: &mut R) -> Result<Vec<T>> {
    let p = flip_prob.to_f64().unwrap_or(f64::NAN);
    check_flip(p)?;
    Ok(gold
        .iter()
        .map(|&g| {
            let flip = rng.gen::<f64>() < p;
            if flip {
                T::one() - g
            } else {
                g
            }
        })
        .collect())
}

/// Remaining gold mentions per entity at stream positions `>= position`.
pub fn gold_remaining(doc: &Document, stream: &[MentionSpan], position: usize) -> HashMap<usize, u64> {
    let entity_of = entity_index(doc);
    let mut out: HashMap<usize, u64> = (0..doc.gold_clusters.len()).map(|e| (e, 0)).collect();
    for m in stream.iter().skip(position) {
        if let Some(&e) = entity_of.get(m) {
            *out.entry(e).or_insert(0) += 1;
        }
    }
    out
}

fn entity_index(doc: &Document) -> HashMap<MentionSpan, usize> {
    doc.gold_clusters
        .iter()
        .enumerate()
        .flat_map(|(e, c)| c.iter().map(move |m| (*m, e)))
        .collect()
}

/// One document replay. Feed mentions in the stream order given to [`Engine::new`].
pub struct Engine<'a, T> {
    doc: &'a Document,
    stream: &'a [MentionSpan],
    cfg: &'a EngineConfig<T>,
    policy: EvictionPolicy,
    lexicon: PronounLexicon,
    entity_of: HashMap<MentionSpan, usize>,
    remaining: Vec<u64>,
    seen_entities: HashSet<usize>,
    state: CacheState,
    position: usize,
    irp_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    history: BTreeMap<ClusterId, Vec<MentionSpan>>,
    trace: ReplayTrace,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub fn new(doc: &'a Document, stream: &'a [MentionSpan], cfg: &'a EngineConfig<T>, phase: Phase) -> Result<Self> {
        cfg.validate_for(phase)?;
        let policy = cfg.policy_for(phase);
        if phase == Phase::AnnotatedReplay && doc.gold_clusters.is_empty() && !stream.is_empty() {
            return Err(Error::PhaseMismatch(format!("annotated replay of {} needs gold clusters", doc.doc_id)));
        }
        let mut unique = HashSet::with_capacity(stream.len());
        for m in stream {
            m.check(doc.tokens.len())?;
            if !unique.insert(*m) {
                return Err(Error::Validation {
                    doc_id: doc.doc_id.clone(),
                    reason: format!("mention {m} occurs twice in the stream"),
                });
            }
        }
        let entity_of = entity_index(doc);
        let mut remaining = vec![0u64; doc.gold_clusters.len()];
        for m in stream {
            if let Some(&e) = entity_of.get(m) {
                remaining[e] += 1;
            }
        }
        let irp_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(1);
        Ok(Self {
            doc,
            stream,
            cfg,
            policy,
            lexicon: cfg.lexicon(),
            entity_of,
            remaining,
            seen_entities: HashSet::new(),
            state: CacheState::new(),
            position: 0,
            irp_rng,
            noise_rng,
            history: BTreeMap::new(),
            trace: ReplayTrace::default(),
        })
    }

    pub fn state(&self) -> &CacheState {
        &self.state
    }

    pub fn trace(&self) -> &ReplayTrace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.position >= self.stream.len()
    }

    /// Processes the next mention of the stream.
    pub fn step(&mut self) -> Option<Result<StepDecision>> {
        let m = *self.stream.get(self.position)?;
        Some(self.process_mention(m))
    }

    fn probabilities(&mut self, mention: MentionSpan, entity: Option<usize>) -> Result<Vec<T>> {
        let gold: Vec<T> = self
            .state
            .clusters
            .iter()
            .map(|c| match (entity, c.gold_entity) {
                (Some(e), Some(g)) if e == g => T::one(),
                _ => T::zero(),
            })
            .collect();
        match &self.cfg.classifier {
            ClassifierKind::Oracle => Ok(gold),
            ClassifierKind::NoisyOracle { flip_prob } => noisy_oracle(&gold, *flip_prob, &mut self.noise_rng),
            ClassifierKind::Threshold(table) => {
                Ok(self.state.clusters.iter().map(|c| table.cluster_probability(mention, c)).collect())
            }
        }
    }

    /// Cluster index with the highest probability; ties go to the most
    /// recently accessed cluster, then to the smallest id.
    fn best_cluster(&self, probs: &[T]) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        for (i, &p) in probs.iter().enumerate() {
            let better = match best {
                None => true,
                Some((j, q)) => {
                    let (a, b) = (&self.state.clusters[i], &self.state.clusters[j]);
                    p > q
                        || (p == q
                            && (a.last_access_step > b.last_access_step
                                || (a.last_access_step == b.last_access_step && a.cluster_id < b.cluster_id)))
                }
            };
            if better {
                best = Some((i, p));
            }
        }
        best
    }

    fn cluster_remaining(&self) -> HashMap<ClusterId, u64> {
        self.state
            .clusters
            .iter()
            .map(|c| (c.cluster_id, c.gold_entity.map_or(0, |e| self.remaining[e])))
            .collect()
    }

    pub fn process_mention(&mut self, mention: MentionSpan) -> Result<StepDecision> {
        match self.stream.get(self.position) {
            Some(&expected) if expected == mention => {}
            _ => {
                return Err(Error::Config(format!(
                    "mention {mention} fed out of stream order at position {}",
                    self.position
                )))
            }
        }
        let entity = self.entity_of.get(&mention).copied();
        let cached = entity.is_some_and(|e| self.state.clusters.iter().any(|c| c.gold_entity == Some(e)));
        let lookup = entity.is_some_and(|e| self.seen_entities.contains(&e));

        if !self.state.is_empty() {
            let elems = batch_budget(self.state.len() as u64, self.state.max_stored() as u64, self.cfg.hidden_dim);
            self.trace.max_batch_elems = self.trace.max_batch_elems.max(elems);
        }

        let probs = self.probabilities(mention, entity)?;
        let chosen = self.best_cluster(&probs).filter(|&(_, p)| p > T::lit(0.5)).map(|(i, _)| i);

        let decision = match chosen {
            Some(i) => {
                self.state.step += 1;
                let step = self.state.step;
                let id = self.state.clusters[i].cluster_id;
                self.state.clusters[i].assign(mention, step);
                self.history.entry(id).or_default().push(mention);
                dual_cache_touch(&mut self.state, id, &self.policy, self.cfg.tau1);
                self.condense_if_needed(i)?;
                self.trace.assignments += 1;
                if cached {
                    self.trace.hit_count += 1;
                }
                StepDecision::Assigned(id)
            }
            None => {
                let victim = if self.state.len() >= self.cfg.tau1 {
                    let rm = self.policy.needs_gold().then(|| self.cluster_remaining());
                    let victim = select_victim(&self.state, &self.policy, rm.as_ref(), self.cfg.delta)?;
                    self.state.remove(victim);
                    self.trace.evictions += 1;
                    Some(victim)
                } else {
                    None
                };
                self.state.step += 1;
                let id = self.state.open(mention, entity);
                self.history.insert(id, vec![mention]);
                self.trace.new_clusters += 1;
                match victim {
                    Some(victim) => StepDecision::EvictedThenNew { victim, cluster: id },
                    None => StepDecision::NewCluster(id),
                }
            }
        };

        if let Some(e) = entity {
            self.remaining[e] = self.remaining[e].saturating_sub(1);
            self.seen_entities.insert(e);
        }
        if lookup {
            self.trace.lookups += 1;
        }
        self.position += 1;
        self.trace.decisions.push(decision);
        self.trace.max_cache_len = self.trace.max_cache_len.max(self.state.len());
        self.trace.max_stored = self.trace.max_stored.max(self.state.max_stored());
        debug_assert!(self.state.len() <= self.cfg.tau1);
        Ok(decision)
    }

    fn condense_if_needed(&mut self, idx: usize) -> Result<()> {
        if self.cfg.irp_mode == IrpMode::Off || self.state.clusters[idx].mentions.len() <= self.cfg.tau2 {
            return Ok(());
        }
        let condensed = condense_cluster(
            self.doc,
            &self.state.clusters[idx].mentions,
            self.cfg.tau2,
            &self.lexicon,
            self.cfg.inclusion_mode,
            &mut self.irp_rng,
            self.cfg.irp_mode,
        )?;
        self.state.clusters[idx].mentions = condensed;
        self.trace.condensations += 1;
        Ok(())
    }

    pub fn finish(self) -> ReplayOutput {
        let predicted = self
            .history
            .into_values()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        ReplayOutput { predicted, trace: self.trace }
    }
}

/// Replays `stream` through a fresh engine and returns every cluster it formed.
pub fn run_document<T: Scalar>(
    doc: &Document,
    stream: &[MentionSpan],
    cfg: &EngineConfig<T>,
    phase: Phase,
) -> Result<ReplayOutput> {
    let mut engine = Engine::new(doc, stream, cfg, phase)?;
    while let Some(r) = engine.step() {
        r?;
    }
    Ok(engine.finish())
}
