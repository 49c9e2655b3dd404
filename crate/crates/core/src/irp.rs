//! Cluster condensation: keep the boundary mentions, group the interior by
//! textual relation, and sample the remaining slots across groups.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mention_tokens, Document, MentionSpan};
use crate::union_find::UnionFind;

/// Personal and demonstrative pronouns, including `it`.
pub const FULL_PRONOUNS: [&str; 32] = [
    "i", "me", "my", "mine", "myself", "you", "your", "yours", "yourself", "yourselves", "he", "him",
    "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself", "we", "us", "our",
    "ours", "ourselves", "they", "them", "their", "themselves", "that", "this",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrpMode {
    #[default]
    GroupBased,
    Random,
    Off,
}

impl fmt::Display for IrpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IrpMode::GroupBased => "group",
            IrpMode::Random => "random",
            IrpMode::Off => "off",
        })
    }
}

impl FromStr for IrpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "group" | "group-based" | "group_based" => Ok(IrpMode::GroupBased),
            "random" => Ok(IrpMode::Random),
            "off" | "none" => Ok(IrpMode::Off),
            _ => Err(Error::Config(format!("unknown irp mode {s:?}"))),
        }
    }
}

/// How non-pronoun mention texts are tested for inclusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InclusionMode {
    /// One token sequence occurs contiguously inside the other.
    #[default]
    TokenSubsequence,
    /// Plain character substring on the joined text.
    RawSubstring,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounLexicon {
    entries: BTreeSet<String>,
}

impl Default for PronounLexicon {
    /// The full list without `it`.
    fn default() -> Self {
        Self::standard(true)
    }
}

impl PronounLexicon {
    pub fn standard(exclude_it: bool) -> Self {
        Self::from_entries(FULL_PRONOUNS.iter().copied().filter(|p| !(exclude_it && *p == "it")))
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = entries
            .into_iter()
            .map(|s| s.as_ref().trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        Self { entries }
    }

    /// One entry per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: impl AsRef<Path>, exclude_it: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lex = Self::from_entries(text.lines().filter(|l| !l.trim_start().starts_with('#')));
        if exclude_it {
            lex.entries.remove("it");
        }
        Ok(lex)
    }

    pub fn contains(&self, text: &str) -> bool {
        self.entries.contains(text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }
}

/// Partition of a mention list; groups ordered by first occurrence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionGroups {
    pub groups: Vec<Vec<MentionSpan>>,
}

impl MentionGroups {
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Lowercased surface of a mention, as both a token list and joined text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MentionText {
    pub tokens: Vec<String>,
    pub text: String,
}

impl MentionText {
    pub fn new(tokens: Vec<String>) -> Self {
        let text = tokens.join(" ");
        Self { tokens, text }
    }

    pub fn of(doc: &Document, span: MentionSpan) -> Result<Self> {
        Ok(Self::new(mention_tokens(doc, span)?))
    }
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Whether two mentions belong in the same group before transitive closure.
///
/// Pronoun pairs match on equal text only. Non-pronoun pairs match on equal
/// text or inclusion. A pronoun never matches a non-pronoun.
pub fn texts_related(a: &MentionText, b: &MentionText, lexicon: &PronounLexicon, mode: InclusionMode) -> bool {
    match (lexicon.contains(&a.text), lexicon.contains(&b.text)) {
        (true, true) => a.text == b.text,
        (false, false) => {
            a.text == b.text
                || match mode {
                    InclusionMode::TokenSubsequence => {
                        contains_run(&a.tokens, &b.tokens) || contains_run(&b.tokens, &a.tokens)
                    }
                    InclusionMode::RawSubstring => a.text.contains(&b.text) || b.text.contains(&a.text),
                }
        }
        _ => false,
    }
}

/// Union-find closure of [`texts_related`] over `mentions`.
pub fn semantic_grouping(
    doc: &Document,
    mentions: &[MentionSpan],
    lexicon: &PronounLexicon,
    mode: InclusionMode,
) -> Result<MentionGroups> {
    let texts = mentions.iter().map(|&m| MentionText::of(doc, m)).collect::<Result<Vec<_>>>()?;
    let mut uf = UnionFind::new(texts.len());
    for i in 0..texts.len() {
        for j in i + 1..texts.len() {
            if texts_related(&texts[i], &texts[j], lexicon, mode) {
                uf.union(i, j);
            }
        }
    }
    let groups = uf.groups().into_iter().map(|g| g.into_iter().map(|i| mentions[i]).collect()).collect();
    Ok(MentionGroups { groups })
}

/// Number of mentions to draw from each group so that the total is `k`.
///
/// With fewer slots than groups, the `k` largest groups get one slot each
/// (stable on group order). Otherwise every group gets one slot and the rest
/// go one at a time to the group with the most unused capacity, earliest
/// group first on ties.
pub fn allocate_quotas(sizes: &[usize], k: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if k > total {
        return Err(Error::SamplingCapacity { requested: k, available: total });
    }
    let m = sizes.len();
    let mut quotas = vec![0; m];
    if k < m {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
        for &g in &order[..k] {
            quotas[g] = 1;
        }
        return Ok(quotas);
    }
    quotas.fill(1);
    let mut capacity: Vec<usize> = sizes.iter().map(|&n| n - 1).collect();
    let mut remaining = (k - m).min(capacity.iter().sum());
    while remaining > 0 {
        let mut best = 0;
        for j in 1..m {
            if capacity[j] > capacity[best] {
                best = j;
            }
        }
        quotas[best] += 1;
        capacity[best] -= 1;
        remaining -= 1;
    }
    Ok(quotas)
}

/// Draws exactly `k` mentions across `groups` per [`allocate_quotas`], sampling
/// uniformly without replacement inside each group.
pub fn group_based_sampling<R: Rng + ?Sized>(
    groups: &MentionGroups,
    k: usize,
    rng: &mut R,
) -> Result<Vec<MentionSpan>> {
    let quotas = allocate_quotas(&groups.sizes(), k)?;
    let mut out = Vec::with_capacity(k);
    for (group, &q) in groups.groups.iter().zip(&quotas) {
        if q == 0 {
            continue;
        }
        out.extend(index::sample(rng, group.len(), q).into_iter().map(|i| group[i]));
    }
    Ok(out)
}

/// Shrinks `cluster` to at most `tau2` mentions.
///
/// Clusters of size `<= tau2` come back sorted but otherwise unchanged. Larger
/// clusters keep their first and last mention and fill `tau2 - 2` interior
/// slots by group-based or uniform sampling. The result is sorted.
#[allow(clippy::too_many_arguments)]
pub fn condense_cluster<R: Rng + ?Sized>(
    doc: &Document,
    cluster: &[MentionSpan],
    tau2: usize,
    lexicon: &PronounLexicon,
    inclusion: InclusionMode,
    rng: &mut R,
    mode: IrpMode,
) -> Result<Vec<MentionSpan>> {
    if tau2 < 2 {
        return Err(Error::Config(format!("tau2 must be at least 2, got {tau2}")));
    }
    let mut sorted = cluster.to_vec();
    sorted.sort_unstable();
    if sorted.len() <= tau2 || mode == IrpMode::Off {
        return Ok(sorted);
    }
    let interior = &sorted[1..sorted.len() - 1];
    let slots = tau2 - 2;
    let picked = match mode {
        IrpMode::GroupBased => {
            let groups = semantic_grouping(doc, interior, lexicon, inclusion)?;
            group_based_sampling(&groups, slots, rng)?
        }
        IrpMode::Random => index::sample(rng, interior.len(), slots).into_iter().map(|i| interior[i]).collect(),
        IrpMode::Off => unreachable!(),
    };
    let mut out = Vec::with_capacity(tau2);
    out.push(sorted[0]);
    out.extend(picked);
    out.push(sorted[sorted.len() - 1]);
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One mention per text, each text occupying its own token run.
    fn doc_of(texts: &[&str]) -> (Document, Vec<MentionSpan>) {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for t in texts {
            let start = tokens.len();
            tokens.extend(t.split(' ').map(str::to_string));
            spans.push(MentionSpan::new(start, tokens.len() - 1));
        }
        (Document { doc_id: "t".into(), tokens, gold_clusters: vec![] }, spans)
    }

    fn group_indices(groups: &MentionGroups, spans: &[MentionSpan]) -> Vec<Vec<usize>> {
        groups
            .groups
            .iter()
            .map(|g| g.iter().map(|s| spans.iter().position(|x| x == s).unwrap()).collect())
            .collect()
    }

    #[test]
    fn lexicon_defaults() {
        let lex = PronounLexicon::default();
        assert_eq!(lex.len(), 31);
        assert!(!lex.contains("it"));
        assert!(lex.contains("he") && lex.contains("this"));
        assert!(PronounLexicon::standard(false).contains("it"));
    }

    #[test]
    fn lexicon_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        std::fs::write(&p, "He\n\n# comment\nit\nthey\n").unwrap();
        let lex = PronounLexicon::from_file(&p, true).unwrap();
        assert_eq!(lex.iter().collect::<Vec<_>>(), vec!["he", "they"]);
        let lex = PronounLexicon::from_file(&p, false).unwrap();
        assert!(lex.contains("it"));
    }

    #[test]
    fn grouping_pronouns_and_names() {
        let (doc, spans) = doc_of(&["He", "the Doctor", "he", "doctor"]);
        let g = semantic_grouping(&doc, &spans, &PronounLexicon::default(), InclusionMode::default()).unwrap();
        assert_eq!(group_indices(&g, &spans), vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn grouping_never_mixes_pronoun_and_name() {
        let (doc, spans) = doc_of(&["he", "the"]);
        for mode in [InclusionMode::TokenSubsequence, InclusionMode::RawSubstring] {
            let g = semantic_grouping(&doc, &spans, &PronounLexicon::default(), mode).unwrap();
            assert_eq!(g.groups.len(), 2);
        }
    }

    #[test]
    fn grouping_transitive_inclusion() {
        let (doc, spans) = doc_of(&["obama", "barack obama", "president barack obama"]);
        let g = semantic_grouping(&doc, &spans, &PronounLexicon::default(), InclusionMode::default()).unwrap();
        assert_eq!(group_indices(&g, &spans), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn token_vs_raw_inclusion() {
        // "the" is not a pronoun; raw substring links "the" into "theodore", token mode does not.
        let (doc, spans) = doc_of(&["the", "theodore"]);
        let lex = PronounLexicon::default();
        let tok = semantic_grouping(&doc, &spans, &lex, InclusionMode::TokenSubsequence).unwrap();
        let raw = semantic_grouping(&doc, &spans, &lex, InclusionMode::RawSubstring).unwrap();
        assert_eq!(tok.groups.len(), 2);
        assert_eq!(raw.groups.len(), 1);
    }

    #[test]
    fn grouping_rejects_bad_span() {
        let (doc, _) = doc_of(&["a"]);
        let r = semantic_grouping(&doc, &[MentionSpan::new(0, 4)], &PronounLexicon::default(), InclusionMode::default());
        assert!(matches!(r, Err(Error::SpanBounds { .. })));
    }

    #[test]
    fn quota_examples() {
        assert_eq!(allocate_quotas(&[3, 1], 3).unwrap(), vec![2, 1]);
        assert_eq!(allocate_quotas(&[1, 2], 1).unwrap(), vec![0, 1]);
        assert_eq!(allocate_quotas(&[2, 2], 4).unwrap(), vec![2, 2]);
        assert_eq!(allocate_quotas(&[2, 3, 3], 2).unwrap(), vec![0, 1, 1]);
        assert!(matches!(allocate_quotas(&[1, 1], 3), Err(Error::SamplingCapacity { requested: 3, available: 2 })));
    }

    #[test]
    fn sampling_small_branch_draws_from_largest() {
        let a = MentionSpan::new(0, 0);
        let (b, c) = (MentionSpan::new(1, 1), MentionSpan::new(2, 2));
        let groups = MentionGroups { groups: vec![vec![a], vec![b, c]] };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = group_based_sampling(&groups, 1, &mut rng).unwrap();
            assert_eq!(s.len(), 1);
            assert!(s[0] == b || s[0] == c);
        }
    }

    #[test]
    fn sampling_exhausts_when_k_is_total() {
        let spans: Vec<_> = (0..4).map(|i| MentionSpan::new(i, i)).collect();
        let groups = MentionGroups { groups: vec![spans[..2].to_vec(), spans[2..].to_vec()] };
        let mut s = group_based_sampling(&groups, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        s.sort();
        assert_eq!(s, spans);
    }

    #[test]
    fn condense_examples() {
        let (doc, spans) = doc_of(&["a", "b", "c", "d", "e"]);
        let lex = PronounLexicon::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = condense_cluster(&doc, &spans, 3, &lex, InclusionMode::default(), &mut rng, IrpMode::GroupBased).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], spans[0]);
        assert_eq!(out[2], spans[4]);
        assert!(spans[1..4].contains(&out[1]));

        let three = &spans[..3];
        let same = condense_cluster(&doc, three, 3, &lex, InclusionMode::default(), &mut rng, IrpMode::GroupBased).unwrap();
        assert_eq!(same, three);

        let four = &spans[..4];
        let ends = condense_cluster(&doc, four, 2, &lex, InclusionMode::default(), &mut rng, IrpMode::Random).unwrap();
        assert_eq!(ends, vec![spans[0], spans[3]]);
    }

    #[test]
    fn condense_rejects_small_tau2() {
        let (doc, spans) = doc_of(&["a", "b", "c"]);
        let r = condense_cluster(
            &doc,
            &spans,
            1,
            &PronounLexicon::default(),
            InclusionMode::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
            IrpMode::GroupBased,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn condense_covers_every_group_when_slots_allow() {
        // interior groups: {x, x, x}, {he, he}, {y}; 3 groups, 5 slots
        let (doc, spans) = doc_of(&["first", "x", "he", "x", "y", "he", "x", "last"]);
        let lex = PronounLexicon::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = condense_cluster(&doc, &spans, 5, &lex, InclusionMode::default(), &mut rng, IrpMode::GroupBased).unwrap();
            let texts: BTreeSet<String> = out.iter().map(|s| doc.mention_text(*s).unwrap()).collect();
            for t in ["first", "x", "he", "y", "last"] {
                assert!(texts.contains(t), "seed {seed}: missing {t} in {texts:?}");
            }
        }
    }

    #[test]
    fn condense_is_seed_deterministic() {
        let texts: Vec<String> = (0..40).map(|i| format!("w{}", i % 7)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let (doc, spans) = doc_of(&refs);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            condense_cluster(&doc, &spans, 10, &PronounLexicon::default(), InclusionMode::default(), &mut rng, IrpMode::GroupBased)
                .unwrap()
        };
        assert_eq!(run(42), run(42));
    }
}
