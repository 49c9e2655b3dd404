//! Eviction scoring and victim selection.
//!
//! Two statistics-aware scores share a recency multiplier `1 + 1/(lru + delta)`:
//!
//! * annotated replay: `rm * (1 + 1/(lru + delta))` where `rm` is the number of
//!   gold mentions of the cluster's entity not yet consumed;
//! * blind replay: `(em / age) * (1 + 1/(lru + delta))` where `em` counts every
//!   mention ever assigned and `age` is the clamped number of steps since creation.
//!
//! The cluster with the smallest score is evicted. Exact ties go to the larger
//! `lru`, then to the smaller cluster id.
//!
//! `Lru` and `DualCache` are the baselines. The dual cache is a reconstruction:
//! an LFU segment of `ceil(lfu_fraction * tau1)` slots guarded by a promotion
//! threshold on `assigned_count`, with everything else in an LRU segment.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{age_of, lru_of, CacheState, ClusterId, Segment, TrackedCluster};
use crate::scalar::Scalar;

pub const DEFAULT_LFU_FRACTION: f64 = 0.5;
pub const DEFAULT_PROMOTION_THRESHOLD: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EvictionPolicy {
    SaesTrain,
    SaesInf,
    Lru,
    DualCache { lfu_fraction: f64, promotion_threshold: u64 },
}

impl EvictionPolicy {
    pub fn dual_cache_default() -> Self {
        EvictionPolicy::DualCache {
            lfu_fraction: DEFAULT_LFU_FRACTION,
            promotion_threshold: DEFAULT_PROMOTION_THRESHOLD,
        }
    }

    pub fn needs_gold(&self) -> bool {
        matches!(self, EvictionPolicy::SaesTrain)
    }

    pub fn validate(&self) -> Result<()> {
        if let EvictionPolicy::DualCache { lfu_fraction, promotion_threshold } = *self {
            if !(lfu_fraction > 0.0 && lfu_fraction < 1.0) {
                return Err(Error::Config(format!("lfu_fraction must lie in (0, 1), got {lfu_fraction}")));
            }
            if promotion_threshold == 0 {
                return Err(Error::Config("promotion_threshold must be at least 1".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EvictionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvictionPolicy::SaesTrain => write!(f, "saes-train"),
            EvictionPolicy::SaesInf => write!(f, "saes-inf"),
            EvictionPolicy::Lru => write!(f, "lru"),
            EvictionPolicy::DualCache { lfu_fraction, promotion_threshold } => {
                if *lfu_fraction == DEFAULT_LFU_FRACTION && *promotion_threshold == DEFAULT_PROMOTION_THRESHOLD {
                    write!(f, "dual-cache")
                } else {
                    write!(f, "dual-cache:{lfu_fraction}:{promotion_threshold}")
                }
            }
        }
    }
}

impl FromStr for EvictionPolicy {
    type Err = Error;

    /// Accepts `saes-train`, `saes-inf`, `lru`, `dual-cache` and
    /// `dual-cache:<lfu_fraction>:<promotion_threshold>`.
    fn from_str(s: &str) -> Result<Self> {
        let policy = match s.trim().to_ascii_lowercase().as_str() {
            "saes-train" | "saes_train" => EvictionPolicy::SaesTrain,
            "saes-inf" | "saes_inf" => EvictionPolicy::SaesInf,
            "lru" => EvictionPolicy::Lru,
            "dual-cache" | "dual_cache" | "dualcache" => EvictionPolicy::dual_cache_default(),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["dual-cache", frac, thr] => EvictionPolicy::DualCache {
                        lfu_fraction: frac
                            .parse()
                            .map_err(|_| Error::Config(format!("bad lfu fraction in {s:?}")))?,
                        promotion_threshold: thr
                            .parse()
                            .map_err(|_| Error::Config(format!("bad promotion threshold in {s:?}")))?,
                    },
                    _ => return Err(Error::Config(format!("unknown eviction policy {s:?}"))),
                }
            }
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown<T> {
    pub cluster_id: ClusterId,
    pub score: T,
    pub rm: Option<u64>,
    pub em: u64,
    pub age: u64,
    pub lru: u64,
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if delta > T::zero() && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("delta must be a positive finite number, got {delta}")))
    }
}

fn recency<T: Scalar>(lru: u64, delta: T) -> T {
    T::one() + T::one() / (T::from_count(lru) + delta)
}

/// Annotated-replay score: `rm * (1 + 1/(lru + delta))`.
pub fn saes_train_score<T: Scalar>(rm: u64, lru: u64, delta: T) -> Result<T> {
    check_delta(delta)?;
    if rm == 0 {
        return Ok(T::zero());
    }
    Ok(T::from_count(rm) * recency(lru, delta))
}

/// Blind-replay score: `(em / age) * (1 + 1/(lru + delta))`.
pub fn saes_inf_score<T: Scalar>(em: u64, age: u64, lru: u64, delta: T) -> Result<T> {
    check_delta(delta)?;
    if age < 1 {
        return Err(Error::Config("cluster age must be at least 1".into()));
    }
    Ok(T::from_count(em) / T::from_count(age) * recency(lru, delta))
}

fn rm_for(c: &TrackedCluster, gold_remaining: Option<&HashMap<ClusterId, u64>>) -> Option<u64> {
    gold_remaining.map(|m| m.get(&c.cluster_id).copied().unwrap_or(0))
}

/// Per-cluster score components at the current step.
///
/// For `Lru` and `DualCache` the score is the pure recency term `1/(1 + lru)`,
/// reported for telemetry only; their victims follow the rules in [`select_victim`].
pub fn score_clusters<T: Scalar>(
    cache: &CacheState,
    policy: &EvictionPolicy,
    gold_remaining: Option<&HashMap<ClusterId, u64>>,
    delta: T,
) -> Result<Vec<ScoreBreakdown<T>>> {
    if policy.needs_gold() && gold_remaining.is_none() {
        return Err(Error::PhaseMismatch("saes-train needs remaining gold mention counts".into()));
    }
    cache
        .clusters
        .iter()
        .map(|c| {
            let lru = lru_of(c, cache.step);
            let age = age_of(c, cache.step);
            let rm = rm_for(c, gold_remaining);
            let score = match policy {
                EvictionPolicy::SaesTrain => saes_train_score(rm.unwrap_or(0), lru, delta)?,
                EvictionPolicy::SaesInf => saes_inf_score(c.assigned_count, age, lru, delta)?,
                EvictionPolicy::Lru | EvictionPolicy::DualCache { .. } => {
                    T::one() / (T::one() + T::from_count(lru))
                }
            };
            Ok(ScoreBreakdown { cluster_id: c.cluster_id, score, rm, em: c.assigned_count, age, lru })
        })
        .collect()
}

// Ordering where `Less` means "evict first".
fn by_score<T: Scalar>(a: &ScoreBreakdown<T>, b: &ScoreBreakdown<T>) -> Ordering {
    a.score
        .partial_cmp(&b.score)
        .unwrap_or(Ordering::Equal)
        .then(b.lru.cmp(&a.lru))
        .then(a.cluster_id.cmp(&b.cluster_id))
}

fn by_recency(a: &TrackedCluster, b: &TrackedCluster, step: u64) -> Ordering {
    lru_of(b, step).cmp(&lru_of(a, step)).then(a.cluster_id.cmp(&b.cluster_id))
}

fn by_frequency(a: &TrackedCluster, b: &TrackedCluster, step: u64) -> Ordering {
    a.assigned_count
        .cmp(&b.assigned_count)
        .then(lru_of(b, step).cmp(&lru_of(a, step)))
        .then(a.cluster_id.cmp(&b.cluster_id))
}

/// Picks the cluster to evict from a full cache.
///
/// `gold_remaining` maps cluster ids to remaining gold mentions and must be
/// supplied for `SaesTrain`; clusters missing from the map count as `rm = 0`.
pub fn select_victim<T: Scalar>(
    cache: &CacheState,
    policy: &EvictionPolicy,
    gold_remaining: Option<&HashMap<ClusterId, u64>>,
    delta: T,
) -> Result<ClusterId> {
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    policy.validate()?;
    let step = cache.step;
    let victim = match policy {
        EvictionPolicy::SaesTrain | EvictionPolicy::SaesInf => {
            let scores = score_clusters(cache, policy, gold_remaining, delta)?;
            scores.into_iter().min_by(by_score).map(|s| s.cluster_id)
        }
        EvictionPolicy::Lru => {
            cache.clusters.iter().min_by(|a, b| by_recency(a, b, step)).map(|c| c.cluster_id)
        }
        EvictionPolicy::DualCache { .. } => {
            let recency_victim = cache
                .clusters
                .iter()
                .filter(|c| c.segment == Segment::Recency)
                .min_by(|a, b| by_recency(a, b, step));
            recency_victim
                .or_else(|| cache.clusters.iter().min_by(|a, b| by_frequency(a, b, step)))
                .map(|c| c.cluster_id)
        }
    };
    victim.ok_or(Error::EmptyCache)
}

/// Number of slots reserved for the frequency segment.
pub fn lfu_capacity(lfu_fraction: f64, tau1: usize) -> usize {
    ((lfu_fraction * tau1 as f64).ceil() as usize).clamp(1, tau1.max(1))
}

/// Applies the dual-cache promotion rule after an access to `cluster_id`.
///
/// A recency-segment cluster whose `assigned_count` reached the threshold moves
/// to the frequency segment; when that segment is full its least frequent
/// occupant is demoted first. No-op for other policies.
pub fn dual_cache_touch(cache: &mut CacheState, cluster_id: ClusterId, policy: &EvictionPolicy, tau1: usize) {
    let EvictionPolicy::DualCache { lfu_fraction, promotion_threshold } = *policy else {
        return;
    };
    let Some(c) = cache.get(cluster_id) else {
        return;
    };
    if c.segment == Segment::Frequency || c.assigned_count < promotion_threshold {
        return;
    }
    let capacity = lfu_capacity(lfu_fraction, tau1);
    let step = cache.step;
    let occupants = cache.clusters.iter().filter(|c| c.segment == Segment::Frequency).count();
    if occupants >= capacity {
        let demote = cache
            .clusters
            .iter()
            .filter(|c| c.segment == Segment::Frequency)
            .min_by(|a, b| by_frequency(a, b, step))
            .map(|c| c.cluster_id);
        if let Some(id) = demote.and_then(|id| cache.get_mut(id)) {
            id.segment = Segment::Recency;
        }
    }
    if let Some(c) = cache.get_mut(cluster_id) {
        c.segment = Segment::Frequency;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MentionSpan;

    const DELTA: f64 = 1e-5;

    fn cluster(id: u64, created: u64, last: u64, em: u64) -> TrackedCluster {
        let mut c = TrackedCluster::new(ClusterId(id), MentionSpan::new(id as usize, id as usize), created, None);
        c.last_access_step = last;
        c.assigned_count = em;
        c
    }

    fn cache(step: u64, clusters: Vec<TrackedCluster>) -> CacheState {
        let next = clusters.len() as u64;
        CacheState { clusters, step, next_cluster_id: next }
    }

    #[test]
    fn train_score_examples() {
        assert_eq!(saes_train_score(0, 0, DELTA).unwrap(), 0.0);
        assert_eq!(saes_train_score(0, 37, DELTA).unwrap(), 0.0);
        let s = saes_train_score(5, 0, DELTA).unwrap();
        assert!((s - 500005.0).abs() < 1e-6, "{s}");
        let s = saes_train_score(3, 4, DELTA).unwrap();
        assert!((s - 3.0 * (1.0 + 1.0 / 4.00001)).abs() < 1e-12);
        assert!((s - 3.7499981).abs() < 1e-6);
    }

    #[test]
    fn inf_score_examples() {
        let s = saes_inf_score(3, 6, 2, DELTA).unwrap();
        assert!((s - 0.74999875).abs() < 1e-7, "{s}");
        let a = saes_inf_score(1, 1, 0, DELTA).unwrap();
        assert!((a - 100001.0).abs() < 1e-6);
        let b = saes_inf_score(4, 4, 0, DELTA).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn score_errors() {
        assert!(matches!(saes_train_score(1, 0, 0.0), Err(Error::Config(_))));
        assert!(matches!(saes_train_score(1, 0, -1e-5), Err(Error::Config(_))));
        assert!(saes_inf_score(1, 0, 0, DELTA).is_err());
    }

    #[test]
    fn f32_scores_agree() {
        let s: f32 = saes_inf_score(3, 6, 2, 1e-5f32).unwrap();
        assert!((s - 0.74999875).abs() < 1e-5);
    }

    #[test]
    fn train_victim_prefers_stale_on_equal_rm() {
        // step 10: lru = 1 and 9
        let c = cache(10, vec![cluster(0, 0, 9, 1), cluster(1, 0, 1, 1)]);
        let rm = HashMap::from([(ClusterId(0), 5), (ClusterId(1), 5)]);
        assert_eq!(select_victim(&c, &EvictionPolicy::SaesTrain, Some(&rm), DELTA).unwrap(), ClusterId(1));
    }

    #[test]
    fn train_victim_zero_rm() {
        let c = cache(50, vec![cluster(0, 0, 50, 1), cluster(1, 0, 0, 1)]);
        let rm = HashMap::from([(ClusterId(0), 0), (ClusterId(1), 4)]);
        assert_eq!(select_victim(&c, &EvictionPolicy::SaesTrain, Some(&rm), DELTA).unwrap(), ClusterId(0));
    }

    #[test]
    fn inf_victim_lower_activity() {
        let c = cache(10, vec![cluster(0, 0, 7, 6), cluster(1, 0, 7, 2)]);
        assert_eq!(select_victim(&c, &EvictionPolicy::SaesInf, None, DELTA).unwrap(), ClusterId(1));
    }

    #[test]
    fn train_without_gold_is_phase_mismatch() {
        let c = cache(3, vec![cluster(0, 0, 1, 1)]);
        assert!(matches!(
            select_victim(&c, &EvictionPolicy::SaesTrain, None, DELTA),
            Err(Error::PhaseMismatch(_))
        ));
    }

    #[test]
    fn empty_cache_errors() {
        assert!(matches!(
            select_victim(&CacheState::new(), &EvictionPolicy::Lru, None, DELTA),
            Err(Error::EmptyCache)
        ));
    }

    #[test]
    fn exact_tie_goes_to_smaller_id() {
        let c = cache(9, vec![cluster(4, 0, 3, 2), cluster(2, 0, 3, 2)]);
        assert_eq!(select_victim(&c, &EvictionPolicy::SaesInf, None, DELTA).unwrap(), ClusterId(2));
        assert_eq!(select_victim(&c, &EvictionPolicy::Lru, None, DELTA).unwrap(), ClusterId(2));
    }

    #[test]
    fn dual_cache_pure_lru_when_unpromoted() {
        // lru = 0, 1, 2, 3
        let c = cache(3, (0..4).map(|i| cluster(i, 0, 3 - i, 1)).collect());
        let p = EvictionPolicy::dual_cache_default();
        assert_eq!(select_victim(&c, &p, None, DELTA).unwrap(), ClusterId(3));
    }

    #[test]
    fn dual_cache_promotion_at_threshold() {
        let p = EvictionPolicy::DualCache { lfu_fraction: 0.5, promotion_threshold: 3 };
        let mut c = cache(5, vec![cluster(0, 0, 5, 2), cluster(1, 0, 4, 1)]);
        dual_cache_touch(&mut c, ClusterId(0), &p, 4);
        assert_eq!(c.get(ClusterId(0)).unwrap().segment, Segment::Recency);
        c.get_mut(ClusterId(0)).unwrap().assigned_count = 3;
        dual_cache_touch(&mut c, ClusterId(0), &p, 4);
        assert_eq!(c.get(ClusterId(0)).unwrap().segment, Segment::Frequency);
    }

    #[test]
    fn dual_cache_demotes_least_frequent_when_full() {
        let p = EvictionPolicy::DualCache { lfu_fraction: 0.5, promotion_threshold: 2 };
        // tau1 = 2 -> one frequency slot
        let mut c = cache(5, vec![cluster(0, 0, 2, 4), cluster(1, 0, 5, 2)]);
        c.clusters[0].segment = Segment::Frequency;
        dual_cache_touch(&mut c, ClusterId(1), &p, 2);
        assert_eq!(c.get(ClusterId(0)).unwrap().segment, Segment::Recency);
        assert_eq!(c.get(ClusterId(1)).unwrap().segment, Segment::Frequency);
    }

    #[test]
    fn dual_cache_falls_back_to_min_frequency() {
        let mut c = cache(9, vec![cluster(0, 0, 9, 7), cluster(1, 0, 8, 3)]);
        for cl in &mut c.clusters {
            cl.segment = Segment::Frequency;
        }
        let p = EvictionPolicy::dual_cache_default();
        assert_eq!(select_victim(&c, &p, None, DELTA).unwrap(), ClusterId(1));
    }

    #[test]
    fn dual_cache_bad_fraction() {
        for frac in [0.0, 1.0, -0.2, 1.5] {
            let p = EvictionPolicy::DualCache { lfu_fraction: frac, promotion_threshold: 2 };
            assert!(matches!(p.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn policy_parse_roundtrip() {
        for s in ["saes-train", "saes-inf", "lru", "dual-cache", "dual-cache:0.25:3"] {
            let p: EvictionPolicy = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("dual-cache:1.0:2".parse::<EvictionPolicy>().is_err());
        assert!("mru".parse::<EvictionPolicy>().is_err());
    }

    #[test]
    fn lru_zero_maximizes_multiplier() {
        let top = recency(0, DELTA);
        for lru in 1..100 {
            assert!(recency(lru, DELTA) < top);
        }
    }
}
