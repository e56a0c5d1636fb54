//! Class prototypes and the three per-sample informativeness indicators:
//! distance entropy, probability entropy and metric.
//!
//! Features are stored as `f32` but every accumulation here runs in `f64`.
//! Entropies are in bits.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    DistanceEntropy,
    ProbabilityEntropy,
    Metric,
    /// Uniform random scores; the baseline arm in simulations.
    Random,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [
        Indicator::DistanceEntropy,
        Indicator::ProbabilityEntropy,
        Indicator::Metric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::DistanceEntropy => "distance_entropy",
            Indicator::ProbabilityEntropy => "probability_entropy",
            Indicator::Metric => "metric",
            Indicator::Random => "random",
        }
    }

    pub fn is_entropy(self) -> bool {
        matches!(self, Indicator::DistanceEntropy | Indicator::ProbabilityEntropy)
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "distance_entropy" => Ok(Indicator::DistanceEntropy),
            "entropy" | "probability_entropy" => Ok(Indicator::ProbabilityEntropy),
            "metric" => Ok(Indicator::Metric),
            "random" => Ok(Indicator::Random),
            other => Err(Error::InvalidArgument(format!("unknown indicator {other:?}"))),
        }
    }
}

/// Per-class mean feature vectors. Classes without support rows are marked absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototypes {
    n_classes: usize,
    dim: usize,
    vectors: Vec<f64>,
    present: Vec<bool>,
}

impl ClassPrototypes {
    pub fn from_parts(n_classes: usize, dim: usize, vectors: Vec<f64>, present: Vec<bool>) -> Result<Self> {
        if vectors.len() != n_classes * dim || present.len() != n_classes {
            return Err(Error::InvariantViolation(format!(
                "prototype buffers do not match {n_classes} x {dim}"
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("non-finite prototype entry".into()));
        }
        Ok(ClassPrototypes {
            n_classes,
            dim,
            vectors,
            present,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.present[class]
    }

    pub fn absent_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.present.iter().enumerate().filter(|(_, p)| !**p).map(|(c, _)| c)
    }

    pub fn vector(&self, class: usize) -> &[f64] {
        &self.vectors[class * self.dim..(class + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    /// Errors with the first absent class, if any.
    pub fn require_complete(&self) -> Result<()> {
        match self.absent_classes().next() {
            Some(c) => Err(Error::AbsentClass(c)),
            None => Ok(()),
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: dim,
            });
        }
        Ok(())
    }
}

/// Euclidean distances from one sample to every class prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector(pub Vec<f64>);

/// A probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(pub Vec<f64>);

/// Per-sample indicator values aligned with the source table's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub indicator: Indicator,
    pub n_classes: usize,
    pub sample_ids: Vec<u64>,
    pub labels: Vec<u32>,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Rows as `(id, label, score)`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u32, f64)> + '_ {
        self.sample_ids
            .iter()
            .zip(&self.labels)
            .zip(&self.scores)
            .map(|((&id, &l), &s)| (id, l, s))
    }

    pub fn score_of(&self, id: u64) -> Option<f64> {
        self.sample_ids.iter().position(|&x| x == id).map(|i| self.scores[i])
    }

    /// `id,label,indicator,score` rows with a header line.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "label", "indicator", "score"])?;
        for (id, label, score) in self.iter() {
            w.write_record([
                id.to_string(),
                label.to_string(),
                self.indicator.to_string(),
                score.to_string(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Runtime(format!("flushing CSV: {e}")))
    }

    /// Parses the CSV written by [`ScoreTable::to_csv`]. Lines starting with
    /// `#` are skipped.
    pub fn from_csv(bytes: &[u8], n_classes: Option<usize>) -> Result<ScoreTable> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let mut indicator = None;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| Error::InvariantViolation(format!("bad {what} in score CSV: {rec:?}"));
            let id: u64 = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad("id"))?;
            let label: u32 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("label"))?;
            let ind: Indicator = rec.get(2).ok_or_else(|| bad("indicator"))?.parse()?;
            let score: f64 = rec.get(3).and_then(|v| v.parse().ok()).ok_or_else(|| bad("score"))?;
            if !score.is_finite() {
                return Err(bad("score"));
            }
            match indicator {
                None => indicator = Some(ind),
                Some(i) if i != ind => {
                    return Err(Error::InvariantViolation("mixed indicators in score CSV".into()))
                }
                _ => {}
            }
            rows.push((id, label, score));
        }
        let indicator = indicator.ok_or(Error::EmptyScores)?;
        rows.sort_by_key(|r| r.0);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0));
        }
        let max_label = rows.iter().map(|r| r.1 as usize + 1).max().unwrap_or(0);
        let n_classes = n_classes.unwrap_or(max_label);
        if max_label > n_classes {
            return Err(Error::InvariantViolation(format!(
                "label {} outside [0, {n_classes})",
                max_label - 1
            )));
        }
        Ok(ScoreTable {
            indicator,
            n_classes,
            sample_ids: rows.iter().map(|r| r.0).collect(),
            labels: rows.iter().map(|r| r.1).collect(),
            scores: rows.iter().map(|r| r.2).collect(),
        })
    }
}

/// Unweighted per-class mean of the feature rows.
pub fn class_prototypes(table: &EmbeddingTable) -> Result<ClassPrototypes> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (k, d) = (table.n_classes(), table.dim());
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for row in 0..table.len() {
        let c = table.labels()[row] as usize;
        counts[c] += 1;
        for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(table.feature(row)) {
            *s += v as f64;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            sums[c * d..(c + 1) * d].iter_mut().for_each(|s| *s /= n);
        }
    }
    ClassPrototypes::from_parts(k, d, sums, counts.iter().map(|&n| n > 0).collect())
}

fn euclidean(feature: &[f32], proto: &[f64]) -> f64 {
    feature
        .iter()
        .zip(proto)
        .map(|(&f, &p)| {
            let diff = f as f64 - p;
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

pub fn distance_vector(feature: &[f32], prototypes: &ClassPrototypes) -> Result<DistanceVector> {
    prototypes.check_dim(feature.len())?;
    prototypes.require_complete()?;
    Ok(DistanceVector(
        (0..prototypes.n_classes())
            .map(|c| euclidean(feature, prototypes.vector(c)))
            .collect(),
    ))
}

/// Max-shifted softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over the negated distances.
pub fn prototype_probabilities(distances: &DistanceVector) -> ProbabilityVector {
    let neg: Vec<f64> = distances.0.iter().map(|&a| -a).collect();
    ProbabilityVector(softmax(&neg))
}

/// Shannon entropy in bits, with `0 * log(1/0) = 0`.
pub fn shannon_entropy(p: &ProbabilityVector) -> f64 {
    let h: f64 = p
        .0
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| -pi * pi.log2())
        .sum();
    let max = (p.0.len().max(1) as f64).log2();
    h.clamp(0.0, max)
}

fn score_rows<F>(table: &EmbeddingTable, indicator: Indicator, n_classes: usize, f: F) -> Result<ScoreTable>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let scores = (0..table.len())
        .into_par_iter()
        .map(f)
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreTable {
        indicator,
        n_classes,
        sample_ids: table.sample_ids().to_vec(),
        labels: table.labels().to_vec(),
        scores,
    })
}

pub fn distance_entropy_scores(table: &EmbeddingTable, prototypes: &ClassPrototypes) -> Result<ScoreTable> {
    prototypes.check_dim(table.dim())?;
    prototypes.require_complete()?;
    score_rows(table, Indicator::DistanceEntropy, prototypes.n_classes(), |row| {
        let d = distance_vector(table.feature(row), prototypes)?;
        Ok(shannon_entropy(&prototype_probabilities(&d)))
    })
}

pub fn probability_entropy_scores(table: &EmbeddingTable) -> Result<ScoreTable> {
    if table.logits().is_none() {
        return Err(Error::MissingLogits);
    }
    score_rows(table, Indicator::ProbabilityEntropy, table.n_classes(), |row| {
        let logits: Vec<f64> = table
            .logit_row(row)
            .expect("logits checked above")
            .iter()
            .map(|&v| v as f64)
            .collect();
        Ok(shannon_entropy(&ProbabilityVector(softmax(&logits))))
    })
}

/// Distance from each sample to its own class prototype.
pub fn metric_scores(table: &EmbeddingTable, prototypes: &ClassPrototypes) -> Result<ScoreTable> {
    prototypes.check_dim(table.dim())?;
    if prototypes.n_classes() != table.n_classes() {
        return Err(Error::ClassCountMismatch {
            expected: prototypes.n_classes(),
            actual: table.n_classes(),
        });
    }
    score_rows(table, Indicator::Metric, prototypes.n_classes(), |row| {
        let c = table.labels()[row] as usize;
        if !prototypes.is_present(c) {
            return Err(Error::AbsentClass(c));
        }
        Ok(euclidean(table.feature(row), prototypes.vector(c)))
    })
}

/// Copy of `table` with every feature row scaled to unit L2 norm. Zero rows stay zero.
pub fn l2_normalized(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let d = table.dim();
    let mut features = table.features().to_vec();
    if d > 0 {
        for row in features.chunks_exact_mut(d) {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
            }
        }
    }
    let out = EmbeddingTable::new(
        d,
        table.n_classes(),
        table.sample_ids().to_vec(),
        table.labels().to_vec(),
        features,
        table.logits().map(<[f32]>::to_vec),
    )?
    .with_domain(table.domain())
    .with_provenance(table.provenance())
    .with_class_names(table.class_names().to_vec())?;
    Ok(out)
}
