//! Coreference scoring: MUC, B-cubed, CEAF-phi4 and their average.
//!
//! Every metric is first reduced to four sums (recall numerator/denominator,
//! precision numerator/denominator) so that corpus-level micro averages can be
//! formed by adding sums across documents. A zero denominator yields 0, unless
//! both denominators of the metric are zero, in which case both sides are empty
//! (no links, mentions or entities) and the component is 1.
//!
//! Mentions present on only one side are kept and count against the score.

use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Scalar> Prf<T> {
    pub fn new(precision: T, recall: T) -> Self {
        let sum = precision + recall;
        let f1 = if sum > T::zero() { T::lit(2.0) * precision * recall / sum } else { T::zero() };
        Self { precision, recall, f1 }
    }

    fn scaled(self, k: T) -> Self {
        Self { precision: self.precision * k, recall: self.recall * k, f1: self.f1 * k }
    }
}

/// Raw sums behind one metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts<T> {
    pub recall_num: T,
    pub recall_den: T,
    pub precision_num: T,
    pub precision_den: T,
}

impl<T: Scalar> Counts<T> {
    pub fn prf(&self) -> Prf<T> {
        let both_empty = self.recall_den == T::zero() && self.precision_den == T::zero();
        let ratio = |num: T, den: T| {
            if den > T::zero() {
                num / den
            } else if both_empty {
                T::one()
            } else {
                T::zero()
            }
        };
        Prf::new(ratio(self.precision_num, self.precision_den), ratio(self.recall_num, self.recall_den))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            recall_num: self.recall_num + other.recall_num,
            recall_den: self.recall_den + other.recall_den,
            precision_num: self.precision_num + other.precision_num,
            precision_den: self.precision_den + other.precision_den,
        }
    }
}

type Side<'a, M> = (Vec<&'a [M]>, HashMap<&'a M, usize>);

/// Drops empty clusters and maps each mention to its cluster index.
fn index_side<M: Hash + Eq + Debug>(clusters: &[Vec<M>]) -> Result<Side<'_, M>> {
    let kept: Vec<&[M]> = clusters.iter().filter(|c| !c.is_empty()).map(Vec::as_slice).collect();
    let mut index = HashMap::new();
    for (i, c) in kept.iter().enumerate() {
        for m in c.iter() {
            if index.insert(m, i).is_some() {
                return Err(Error::Partition(format!("{m:?}")));
            }
        }
    }
    Ok((kept, index))
}

/// Overlap sizes `|key_i ∩ response_j|` for every non-empty intersection.
fn overlaps<M: Hash + Eq>(key: &[&[M]], response_index: &HashMap<&M, usize>) -> HashMap<(usize, usize), u64> {
    let mut out = HashMap::new();
    for (i, c) in key.iter().enumerate() {
        for m in c.iter() {
            if let Some(&j) = response_index.get(m) {
                *out.entry((i, j)).or_insert(0) += 1;
            }
        }
    }
    out
}

struct Sides<'a, M> {
    gold: Vec<&'a [M]>,
    pred: Vec<&'a [M]>,
    gold_index: HashMap<&'a M, usize>,
    pred_index: HashMap<&'a M, usize>,
}

impl<'a, M: Hash + Eq + Debug> Sides<'a, M> {
    fn new(gold: &'a [Vec<M>], pred: &'a [Vec<M>]) -> Result<Self> {
        let (gold, gold_index) = index_side(gold)?;
        let (pred, pred_index) = index_side(pred)?;
        Ok(Self { gold, pred, gold_index, pred_index })
    }
}

// Links recovered from `key` clusters when partitioned by `response`.
fn muc_side<T: Scalar, M: Hash + Eq>(key: &[&[M]], response_index: &HashMap<&M, usize>) -> (T, T) {
    let mut num = 0u64;
    let mut den = 0u64;
    for c in key {
        let mut parts = std::collections::HashSet::new();
        let mut unmatched = 0u64;
        for m in c.iter() {
            match response_index.get(m) {
                Some(&j) => {
                    parts.insert(j);
                }
                None => unmatched += 1,
            }
        }
        let size = c.len() as u64;
        num += size - (parts.len() as u64 + unmatched);
        den += size - 1;
    }
    (T::from_count(num), T::from_count(den))
}

pub fn muc_counts<T: Scalar, M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Counts<T>> {
    let s = Sides::new(gold, pred)?;
    let (recall_num, recall_den) = muc_side(&s.gold, &s.pred_index);
    let (precision_num, precision_den) = muc_side(&s.pred, &s.gold_index);
    Ok(Counts { recall_num, recall_den, precision_num, precision_den })
}

pub fn b_cubed_counts<T: Scalar, M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Counts<T>> {
    let s = Sides::new(gold, pred)?;
    let ov = overlaps(&s.gold, &s.pred_index);
    let mut recall_num = T::zero();
    let mut precision_num = T::zero();
    // Sorted so float accumulation order is fixed.
    let mut cells: Vec<_> = ov.into_iter().collect();
    cells.sort_unstable();
    for ((g, p), n) in cells {
        let sq = T::from_count(n * n);
        recall_num = recall_num + sq / T::from_count(s.gold[g].len() as u64);
        precision_num = precision_num + sq / T::from_count(s.pred[p].len() as u64);
    }
    Ok(Counts {
        recall_num,
        recall_den: T::from_count(s.gold_index.len() as u64),
        precision_num,
        precision_den: T::from_count(s.pred_index.len() as u64),
    })
}

pub fn ceaf_phi4_counts<T: Scalar, M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Counts<T>> {
    let s = Sides::new(gold, pred)?;
    let sim = phi4_matrix(&s);
    let (_, total) = max_weight_assignment(&sim);
    Ok(Counts {
        recall_num: total,
        recall_den: T::from_count(s.gold.len() as u64),
        precision_num: total,
        precision_den: T::from_count(s.pred.len() as u64),
    })
}

fn phi4_matrix<T: Scalar, M: Hash + Eq>(s: &Sides<'_, M>) -> Vec<Vec<T>> {
    let mut sim = vec![vec![T::zero(); s.pred.len()]; s.gold.len()];
    for ((g, p), n) in overlaps(&s.gold, &s.pred_index) {
        let denom = T::from_count((s.gold[g].len() + s.pred[p].len()) as u64);
        sim[g][p] = T::lit(2.0) * T::from_count(n) / denom;
    }
    sim
}

/// `phi4(K, R) = 2 |K ∩ R| / (|K| + |R|)`.
pub fn phi4<T: Scalar, M: Hash + Eq>(key: &[M], response: &[M]) -> T {
    if key.is_empty() && response.is_empty() {
        return T::zero();
    }
    let set: std::collections::HashSet<&M> = key.iter().collect();
    let common = response.iter().filter(|m| set.contains(m)).count() as u64;
    T::lit(2.0) * T::from_count(common) / T::from_count((key.len() + response.len()) as u64)
}

pub fn muc<T: Scalar, M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Prf<T>> {
    Ok(muc_counts(gold, pred)?.prf())
}

pub fn b_cubed<T: Scalar, M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Prf<T>> {
    Ok(b_cubed_counts(gold, pred)?.prf())
}

pub fn ceaf_phi4<T: Scalar, M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Prf<T>> {
    Ok(ceaf_phi4_counts(gold, pred)?.prf())
}

pub fn avg_f1<T: Scalar>(muc_f1: T, b3_f1: T, ceaf_f1: T) -> T {
    (muc_f1 + b3_f1 + ceaf_f1) / T::lit(3.0)
}

/// Maximum-weight one-to-one matching of rows to columns of a rectangular
/// similarity matrix. Returns the column matched to each row (if any) and the
/// total weight. Hungarian method with potentials, O(n^3) on the padded square.
pub fn max_weight_assignment<T: Scalar>(sim: &[Vec<T>]) -> (Vec<Option<usize>>, T) {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (vec![None; rows], T::zero());
    }
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> T {
        if i < rows && j < cols {
            -sim[i][j]
        } else {
            T::zero()
        }
    };

    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; rows];
    let mut total = T::zero();
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
            total = total + sim[i - 1][j - 1];
        }
    }
    (assignment, total)
}

/// Sums for all three metrics on one document.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts<T> {
    pub muc: Counts<T>,
    pub b3: Counts<T>,
    pub ceaf: Counts<T>,
}

impl<T: Scalar> MetricCounts<T> {
    pub fn compute<M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Self> {
        Ok(Self {
            muc: muc_counts(gold, pred)?,
            b3: b_cubed_counts(gold, pred)?,
            ceaf: ceaf_phi4_counts(gold, pred)?,
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { muc: self.muc.add(&other.muc), b3: self.b3.add(&other.b3), ceaf: self.ceaf.add(&other.ceaf) }
    }

    pub fn report(&self) -> ScoreReport<T> {
        ScoreReport::from_prf(self.muc.prf(), self.b3.prf(), self.ceaf.prf())
    }
}

/// Percent-scaled scores for one document or a corpus aggregate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport<T> {
    pub muc: Prf<T>,
    pub b3: Prf<T>,
    pub ceaf: Prf<T>,
    pub avg_f1: T,
}

impl<T: Scalar> ScoreReport<T> {
    /// Takes fractions in `[0, 1]` and scales them to percentages.
    pub fn from_prf(muc: Prf<T>, b3: Prf<T>, ceaf: Prf<T>) -> Self {
        let k = T::lit(100.0);
        let (muc, b3, ceaf) = (muc.scaled(k), b3.scaled(k), ceaf.scaled(k));
        Self { muc, b3, ceaf, avg_f1: avg_f1(muc.f1, b3.f1, ceaf.f1) }
    }

    pub fn score<M: Hash + Eq + Debug>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Self> {
        Ok(MetricCounts::compute(gold, pred)?.report())
    }

    pub fn muc_f1(&self) -> T {
        self.muc.f1
    }

    pub fn b3_f1(&self) -> T {
        self.b3.f1
    }

    pub fn ceaf_f1(&self) -> T {
        self.ceaf.f1
    }

    /// Field-wise mean over documents. Empty input gives all zeros.
    pub fn macro_average(reports: &[Self]) -> Self {
        if reports.is_empty() {
            return Self::default();
        }
        let n = T::from_count(reports.len() as u64);
        let mean = |f: &dyn Fn(&Self) -> T| reports.iter().fold(T::zero(), |acc, r| acc + f(r)) / n;
        let prf = |g: &dyn Fn(&Self) -> Prf<T>| Prf {
            precision: mean(&|r| g(r).precision),
            recall: mean(&|r| g(r).recall),
            f1: mean(&|r| g(r).f1),
        };
        let muc = prf(&|r| r.muc);
        let b3 = prf(&|r| r.b3);
        let ceaf = prf(&|r| r.ceaf);
        Self { muc, b3, ceaf, avg_f1: avg_f1(muc.f1, b3.f1, ceaf.f1) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &[&str]) -> Vec<Vec<char>> {
        s.iter().map(|x| x.chars().collect()).collect()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn muc_split() {
        let r: Prf<f64> = muc(&c(&["abc"]), &c(&["ab", "c"])).unwrap();
        close(r.recall, 0.5);
        close(r.precision, 1.0);
        close(r.f1, 2.0 / 3.0);
    }

    #[test]
    fn muc_all_singletons() {
        let r: Prf<f64> = muc(&c(&["a", "b"]), &c(&["ab"])).unwrap();
        close(r.recall, 0.0);
        let r: Prf<f64> = muc(&c(&["a", "b"]), &c(&["a", "b"])).unwrap();
        close(r.recall, 1.0);
        close(r.f1, 1.0);
    }

    #[test]
    fn b3_merge() {
        let r: Prf<f64> = b_cubed(&c(&["ab", "c"]), &c(&["abc"])).unwrap();
        close(r.recall, 1.0);
        close(r.precision, 5.0 / 9.0);
        close(r.f1, 5.0 / 7.0);
    }

    #[test]
    fn b3_singletons_vs_one_cluster() {
        let r: Prf<f64> = b_cubed(&c(&["abcd"]), &c(&["a", "b", "c", "d"])).unwrap();
        close(r.precision, 1.0);
        close(r.recall, 0.25);
    }

    #[test]
    fn ceaf_examples() {
        let k = ceaf_phi4_counts::<f64, _>(&c(&["ab", "c"]), &c(&["abc"])).unwrap();
        close(k.recall_num, 0.8);
        let r = k.prf();
        close(r.recall, 0.4);
        close(r.precision, 0.8);
        close(r.f1, 0.8 * 0.8 / 1.2);

        let k = ceaf_phi4_counts::<f64, _>(&c(&["a", "b"]), &c(&["ab"])).unwrap();
        close(k.recall_num, 2.0 / 3.0);
        let r = k.prf();
        close(r.recall, 1.0 / 3.0);
        close(r.precision, 2.0 / 3.0);
    }

    #[test]
    fn perfect_is_one() {
        let g = c(&["abc", "de", "f"]);
        let r = ScoreReport::<f64>::score(&g, &g).unwrap();
        close(r.avg_f1, 100.0);
        close(r.muc.f1, 100.0);
        close(r.b3.f1, 100.0);
        close(r.ceaf.f1, 100.0);
    }

    #[test]
    fn empty_prediction_is_zero() {
        let r = ScoreReport::<f64>::score(&c(&["abc", "de"]), &[]).unwrap();
        close(r.avg_f1, 0.0);
    }

    #[test]
    fn both_empty_is_one() {
        let r = ScoreReport::<f64>::score::<char>(&[], &[]).unwrap();
        close(r.avg_f1, 100.0);
    }

    #[test]
    fn overlapping_clusters_rejected() {
        assert!(matches!(muc::<f64, _>(&c(&["ab", "bc"]), &c(&["a"])), Err(Error::Partition(_))));
        assert!(matches!(b_cubed::<f64, _>(&c(&["a"]), &c(&["aa"])), Err(Error::Partition(_))));
    }

    #[test]
    fn avg_f1_published_rows() {
        assert!((avg_f1(90.53, 84.43, 80.19) - 85.05f64).abs() < 0.007);
        assert!((avg_f1(87.85, 78.53, 77.42) - 81.27f64).abs() < 0.007);
        assert_eq!(avg_f1(0.0f64, 0.0, 0.0), 0.0);
    }

    #[test]
    fn assignment_rectangular() {
        let sim = vec![vec![0.1, 0.9, 0.0], vec![0.8, 0.85, 0.0]];
        let (a, total) = max_weight_assignment(&sim);
        assert_eq!(a, vec![Some(1), Some(0)]);
        close(total, 1.7);
        let tall = vec![vec![0.5], vec![0.7], vec![0.1]];
        let (a, total) = max_weight_assignment(&tall);
        assert_eq!(a, vec![None, Some(0), None]);
        close(total, 0.7);
    }

    #[test]
    fn micro_sums_counts() {
        let a = MetricCounts::<f64>::compute(&c(&["abc"]), &c(&["ab", "c"])).unwrap();
        let b = MetricCounts::<f64>::compute(&c(&["de"]), &c(&["de"])).unwrap();
        let sum = a.add(&b);
        // MUC: recall links (1 + 1) / (2 + 1)
        close(sum.muc.prf().recall, 2.0 / 3.0);
    }

    #[test]
    fn macro_average_mean() {
        let a = ScoreReport::<f64>::score(&c(&["ab"]), &c(&["ab"])).unwrap();
        let b = ScoreReport::<f64>::score(&c(&["ab"]), &c(&["a", "b"])).unwrap();
        let m = ScoreReport::macro_average(&[a, b]);
        close(m.avg_f1, (a.avg_f1 + b.avg_f1) / 2.0);
    }
}
