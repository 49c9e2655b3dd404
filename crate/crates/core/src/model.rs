//! Documents, mention spans and the tracked-cluster cache.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive token span `[start, end]`. Ordering is lexicographic by `(start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
}

impl MentionSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, n_tokens: usize) -> Result<()> {
        if self.start > self.end || self.end >= n_tokens {
            return Err(Error::SpanBounds { span: *self, len: n_tokens });
        }
        Ok(())
    }
}

impl From<[usize; 2]> for MentionSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<MentionSpan> for [usize; 2] {
    fn from(s: MentionSpan) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for MentionSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// A tokenized document with gold coreference clusters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    #[serde(rename = "clusters")]
    pub gold_clusters: Vec<Vec<MentionSpan>>,
}

impl Document {
    /// Builds a document and checks span bounds and cluster disjointness.
    pub fn new(
        doc_id: impl Into<String>,
        tokens: Vec<String>,
        gold_clusters: Vec<Vec<MentionSpan>>,
    ) -> Result<Self> {
        let doc = Self { doc_id: doc_id.into(), tokens, gold_clusters };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for cluster in &self.gold_clusters {
            for span in cluster {
                span.check(self.tokens.len()).map_err(|e| Error::Validation {
                    doc_id: self.doc_id.clone(),
                    reason: e.to_string(),
                })?;
                if !seen.insert(*span) {
                    return Err(Error::Validation {
                        doc_id: self.doc_id.clone(),
                        reason: format!("span {span} appears more than once in the clusters"),
                    });
                }
            }
        }
        Ok(())
    }

    /// All gold mentions in ascending span order. This is the default stream.
    pub fn mention_stream(&self) -> Vec<MentionSpan> {
        let mut stream: Vec<_> = self.gold_clusters.iter().flatten().copied().collect();
        stream.sort_unstable();
        stream
    }

    pub fn mention_count(&self) -> usize {
        self.gold_clusters.iter().map(Vec::len).sum()
    }

    pub fn mention_text(&self, span: MentionSpan) -> Result<String> {
        mention_text(self, span)
    }
}

/// Lowercased tokens of `span`, joined by single spaces.
pub fn mention_text(doc: &Document, span: MentionSpan) -> Result<String> {
    Ok(mention_tokens(doc, span)?.join(" "))
}

pub(crate) fn mention_tokens(doc: &Document, span: MentionSpan) -> Result<Vec<String>> {
    span.check(doc.tokens.len())?;
    Ok(doc.tokens[span.start..=span.end].iter().map(|t| t.to_lowercase()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Segment membership, only meaningful under the dual-cache policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    #[default]
    Recency,
    Frequency,
}

/// A cluster currently held in the cache.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedCluster {
    pub cluster_id: ClusterId,
    /// Stored mentions, sorted ascending. Bounded by `tau2` once condensation is on.
    pub mentions: Vec<MentionSpan>,
    pub created_step: u64,
    pub last_access_step: u64,
    /// Every mention ever assigned, unaffected by condensation.
    pub assigned_count: u64,
    pub gold_entity: Option<usize>,
    pub segment: Segment,
}

impl TrackedCluster {
    pub fn new(cluster_id: ClusterId, first: MentionSpan, step: u64, gold_entity: Option<usize>) -> Self {
        Self {
            cluster_id,
            mentions: vec![first],
            created_step: step,
            last_access_step: step,
            assigned_count: 1,
            gold_entity,
            segment: Segment::Recency,
        }
    }

    /// Records an assignment at `step`, keeping `mentions` sorted.
    pub fn assign(&mut self, mention: MentionSpan, step: u64) {
        let pos = self.mentions.partition_point(|m| *m < mention);
        self.mentions.insert(pos, mention);
        self.assigned_count += 1;
        self.last_access_step = step;
    }

    pub fn stored_count(&self) -> u64 {
        self.mentions.len() as u64
    }

    pub fn lru(&self, step: u64) -> u64 {
        lru_of(self, step)
    }

    pub fn age(&self, step: u64) -> u64 {
        age_of(self, step)
    }
}

/// Steps since the cluster was last accessed.
pub fn lru_of(c: &TrackedCluster, state_step: u64) -> u64 {
    debug_assert!(state_step >= c.last_access_step);
    state_step.saturating_sub(c.last_access_step)
}

/// Steps since creation, clamped to at least 1.
pub fn age_of(c: &TrackedCluster, state_step: u64) -> u64 {
    debug_assert!(state_step >= c.created_step);
    state_step.saturating_sub(c.created_step).max(1)
}

/// The bounded set of tracked clusters plus the global step counter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheState {
    pub clusters: Vec<TrackedCluster>,
    /// Number of mentions consumed so far.
    pub step: u64,
    pub next_cluster_id: u64,
}

impl CacheState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn get(&self, id: ClusterId) -> Option<&TrackedCluster> {
        self.clusters.iter().find(|c| c.cluster_id == id)
    }

    pub fn get_mut(&mut self, id: ClusterId) -> Option<&mut TrackedCluster> {
        self.clusters.iter_mut().find(|c| c.cluster_id == id)
    }

    pub fn remove(&mut self, id: ClusterId) -> Option<TrackedCluster> {
        let idx = self.clusters.iter().position(|c| c.cluster_id == id)?;
        Some(self.clusters.remove(idx))
    }

    /// Opens a singleton cluster stamped with the current step.
    pub fn open(&mut self, first: MentionSpan, gold_entity: Option<usize>) -> ClusterId {
        let id = ClusterId(self.next_cluster_id);
        self.next_cluster_id += 1;
        self.clusters.push(TrackedCluster::new(id, first, self.step, gold_entity));
        id
    }

    pub fn max_stored(&self) -> usize {
        self.clusters.iter().map(|c| c.mentions.len()).max().unwrap_or(0)
    }
}
