use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, ScoredPair};
use crate::embed::{embedding_distance, Embedding};
use crate::error::{Error, Result};

/// Embeddings of one dataset variant (e.g. unmasked, or one mask type).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub tag: String,
    pub embeddings: Vec<Embedding>,
}

impl EmbeddingSet {
    pub fn new(tag: impl Into<String>, embeddings: Vec<Embedding>) -> Self {
        EmbeddingSet {
            tag: tag.into(),
            embeddings,
        }
    }
}

/// `id_a` indexes the set tagged `tag_a`, `id_b` the set tagged `tag_b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerificationPair {
    pub id_a: usize,
    pub id_b: usize,
    pub label: Label,
    pub tag_a: String,
    pub tag_b: String,
}

/// How candidates are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairSides {
    /// Unordered pairs `i < j` inside the template set; the unknown set is ignored.
    Within,
    /// Ordered pairs (template `i`, unknown `j`), skipping pairs that share a
    /// source photo (an image and its own masked rendering).
    #[default]
    Across,
}

fn candidates(a: &EmbeddingSet, b: &EmbeddingSet, sides: PairSides) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut push = |i: usize, j: usize, x: &Embedding, y: &Embedding| {
        if x.identity == y.identity {
            pos.push((i, j));
        } else {
            neg.push((i, j));
        }
    };
    match sides {
        PairSides::Within => {
            for i in 0..a.embeddings.len() {
                for j in i + 1..a.embeddings.len() {
                    push(i, j, &a.embeddings[i], &a.embeddings[j]);
                }
            }
        }
        PairSides::Across => {
            for (i, x) in a.embeddings.iter().enumerate() {
                for (j, y) in b.embeddings.iter().enumerate() {
                    if x.source != y.source {
                        push(i, j, x, y);
                    }
                }
            }
        }
    }
    (pos, neg)
}

/// Number of distinct (positive, negative) pairs available.
pub fn pair_availability(template: &EmbeddingSet, unknown: &EmbeddingSet, sides: PairSides) -> (usize, usize) {
    let (p, n) = candidates(template, unknown, sides);
    (p.len(), n.len())
}

/// Draw `n_pos` positive and `n_neg` negative pairs without replacement.
/// Output lists positives then negatives, each in enumeration order.
pub fn generate_pairs(
    template: &EmbeddingSet,
    unknown: &EmbeddingSet,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
    sides: PairSides,
) -> Result<Vec<VerificationPair>> {
    let (pos, neg) = candidates(template, unknown, sides);
    if n_pos > pos.len() || n_neg > neg.len() {
        return Err(Error::Validation(format!(
            "requested {n_pos} positive and {n_neg} negative pairs for {}/{}, at most {} and {} are available",
            template.tag,
            unknown.tag,
            pos.len(),
            neg.len()
        )));
    }
    let tag_b = match sides {
        PairSides::Within => &template.tag,
        PairSides::Across => &unknown.tag,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for (pool, n, label) in [(&pos, n_pos, Label::Positive), (&neg, n_neg, Label::Negative)] {
        let mut idx = sample(&mut rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|k| VerificationPair {
            id_a: pool[k].0,
            id_b: pool[k].1,
            label,
            tag_a: template.tag.clone(),
            tag_b: tag_b.clone(),
        }));
    }
    Ok(out)
}

fn find_set<'a>(sets: &'a [EmbeddingSet], tag: &str) -> Result<&'a EmbeddingSet> {
    sets.iter()
        .find(|s| s.tag == tag)
        .ok_or_else(|| Error::Lookup(format!("no embedding set tagged {tag:?}")))
}

/// Squared distance of each pair; checks that labels agree with identities.
pub fn score_pairs(pairs: &[VerificationPair], sets: &[EmbeddingSet]) -> Result<Vec<ScoredPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let get = |tag: &str, id: usize| -> Result<&Embedding> {
                find_set(sets, tag)?.embeddings.get(id).ok_or_else(|| {
                    Error::Lookup(format!("pair {k}: set {tag:?} has no embedding {id}"))
                })
            };
            let a = get(&p.tag_a, p.id_a)?;
            let b = get(&p.tag_b, p.id_b)?;
            let same = a.identity == b.identity;
            if same != (p.label == Label::Positive) {
                return Err(Error::Validation(format!(
                    "pair {k}: label {:?} disagrees with identities {} and {}",
                    p.label, a.identity, b.identity
                )));
            }
            Ok(ScoredPair::new(embedding_distance(a, b)?, p.label))
        })
        .collect()
}

/// CSV `id_a,id_b,label,tag_a,tag_b` with a header row.
pub fn write_pairs(path: &Path, pairs: &[VerificationPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in pairs {
        w.serialize(p)?;
    }
    if pairs.is_empty() {
        w.write_record(["id_a", "id_b", "label", "tag_a", "tag_b"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<VerificationPair>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
