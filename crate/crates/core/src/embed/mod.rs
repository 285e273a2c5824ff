//! Embedding-space math: squared distances, the triplet hinge, online
//! triplet mining, and a small trainable encoder.

mod encoder;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use encoder::{
    encode, loss_gradient, mean_triplet_loss, triplet_gradient, train_toy, EncoderGrad,
    EpochStats, StepSchedule, ToyEncoder, Sample, TrainConfig, TrainReport, NORM_EPSILON,
};
pub use io::{
    read_embeddings, read_embeddings_csv, write_embeddings, write_embeddings_csv, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};

/// Width of the embeddings used by the full-scale recognizer.
pub const FULL_SCALE_EMBEDDING_DIM: usize = 512;

const UNIT_NORM_TOL: f64 = 1e-6;

/// A unit-norm face representation with its identity and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f64>,
    pub identity: u32,
    /// Id of the photo this embedding came from; a masked rendering of a
    /// photo shares the id of the unmasked original.
    pub source: u64,
    pub masked: bool,
}

impl Embedding {
    pub fn new(vector: Vec<f64>, identity: u32, source: u64, masked: bool) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::Validation("embedding has no dimensions".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::Validation(format!(
                "embedding norm is {norm}, expected 1 within {UNIT_NORM_TOL}"
            )));
        }
        Ok(Embedding {
            vector,
            identity,
            source,
            masked,
        })
    }

    /// Scale `raw` to unit length.
    pub fn normalized(raw: Vec<f64>, identity: u32, source: u64, masked: bool) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Validation("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Embedding {
            vector: raw.into_iter().map(|v| v / norm).collect(),
            identity,
            source,
            masked,
        })
    }

    /// Encoder outputs are unit-norm up to the normalization epsilon.
    pub(crate) fn from_encoder(vector: Vec<f64>, identity: u32, source: u64, masked: bool) -> Self {
        Embedding {
            vector,
            identity,
            source,
            masked,
        }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Squared Euclidean distance.
pub fn sq_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn embedding_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    sq_l2(&a.vector, &b.vector)
}

/// Hinge margin, in squared-distance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossParams {
    alpha: f64,
}

pub const DEFAULT_MARGIN: f64 = 0.2;

impl TripletLossParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Validation(format!("margin must be positive, got {alpha}")));
        }
        Ok(TripletLossParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for TripletLossParams {
    fn default() -> Self {
        TripletLossParams {
            alpha: DEFAULT_MARGIN,
        }
    }
}

/// Indices into a batch: anchor and positive share an identity (but not a
/// source photo), the negative does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `max(0, d_ap - d_an + alpha)`.
pub fn hinge(d_ap: f64, d_an: f64, params: &TripletLossParams) -> f64 {
    (d_ap - d_an + params.alpha).max(0.0)
}

pub fn triplet_loss(batch: &[Embedding], t: &Triplet, params: &TripletLossParams) -> Result<f64> {
    let a = &batch[t.anchor];
    let d_ap = embedding_distance(a, &batch[t.positive])?;
    let d_an = embedding_distance(a, &batch[t.negative])?;
    Ok(hinge(d_ap, d_an, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MiningMode {
    All,
    #[default]
    SemiHard,
}

impl std::str::FromStr for MiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "all" => Ok(MiningMode::All),
            "semi_hard" | "semihard" => Ok(MiningMode::SemiHard),
            _ => Err(Error::Validation(format!(
                "unknown mining mode {s:?}; expected all or semi-hard"
            ))),
        }
    }
}

/// Pairwise squared distances of a batch, row-major.
fn distance_matrix(batch: &[Embedding]) -> Result<Vec<f64>> {
    let n = batch.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = embedding_distance(&batch[i], &batch[j])?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

/// Build triplets from the current batch.
///
/// `All` yields every valid combination, ordered by (anchor, positive,
/// negative). `SemiHard` yields one triplet per ordered (anchor, positive):
/// the closest negative that is still farther than the positive, or the
/// farthest negative when none is; ties go to the lowest batch index.
pub fn mine_triplets(batch: &[Embedding], mode: MiningMode) -> Result<Vec<Triplet>> {
    let n = batch.len();
    let d = distance_matrix(batch)?;
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            let (ea, ep) = (&batch[a], &batch[p]);
            if p == a || ea.identity != ep.identity || ea.source == ep.source {
                continue;
            }
            let d_ap = d[a * n + p];
            let negatives = (0..n).filter(|&k| batch[k].identity != ea.identity);
            match mode {
                MiningMode::All => {
                    out.extend(negatives.map(|negative| Triplet {
                        anchor: a,
                        positive: p,
                        negative,
                    }));
                }
                MiningMode::SemiHard => {
                    let mut semi: Option<(f64, usize)> = None;
                    let mut hardest: Option<(f64, usize)> = None;
                    for k in negatives {
                        let d_an = d[a * n + k];
                        if d_an > d_ap && semi.map_or(true, |(best, _)| d_an < best) {
                            semi = Some((d_an, k));
                        }
                        if hardest.map_or(true, |(best, _)| d_an > best) {
                            hardest = Some((d_an, k));
                        }
                    }
                    if let Some((_, negative)) = semi.or(hardest) {
                        out.push(Triplet {
                            anchor: a,
                            positive: p,
                            negative,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}
