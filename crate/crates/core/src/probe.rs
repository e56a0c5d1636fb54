//! Lightweight classifiers over embeddings: nearest prototype and a
//! multinomial linear probe trained by full-batch gradient descent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iei::{self, ClassPrototypes};
use crate::store::EmbeddingTable;

pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";
const PROBE_VERSION: u32 = 1;
const PROBE_HEADER_LEN: usize = 64;
/// Rows per partial-gradient block. Blocks are reduced in index order so the
/// result does not depend on the number of worker threads.
const BLOCK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    NearestPrototype,
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub step_size: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            kind: ProbeKind::Linear,
            step_size: 0.1,
            epochs: 200,
            l2: 1e-4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub config: ProbeConfig,
    /// Objective value before every update and once after the last one.
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

impl LinearProbe {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeModel {
    NearestPrototype(ClassPrototypes),
    Linear(LinearProbe),
}

impl ProbeModel {
    pub fn kind(&self) -> ProbeKind {
        match self {
            ProbeModel::NearestPrototype(_) => ProbeKind::NearestPrototype,
            ProbeModel::Linear(_) => ProbeKind::Linear,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ProbeModel::NearestPrototype(p) => p.n_classes(),
            ProbeModel::Linear(l) => l.n_classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProbeModel::NearestPrototype(p) => p.dim(),
            ProbeModel::Linear(l) => l.dim,
        }
    }
}

pub fn fit(train: &EmbeddingTable, config: &ProbeConfig) -> Result<ProbeModel> {
    match config.kind {
        ProbeKind::NearestPrototype => fit_nearest_prototype(train),
        ProbeKind::Linear => fit_linear_probe(train, config),
    }
}

pub fn fit_nearest_prototype(train: &EmbeddingTable) -> Result<ProbeModel> {
    let protos = iei::class_prototypes(train)?;
    protos.require_complete()?;
    Ok(ProbeModel::NearestPrototype(protos))
}

/// Features widened to f64 once per fit.
struct Design<'a> {
    x: Vec<f64>,
    labels: &'a [u32],
    n: usize,
    dim: usize,
    k: usize,
}

impl<'a> Design<'a> {
    fn new(table: &'a EmbeddingTable) -> Self {
        Design {
            x: table.features().iter().map(|&v| v as f64).collect(),
            labels: table.labels(),
            n: table.len(),
            dim: table.dim(),
            k: table.n_classes(),
        }
    }

    /// Mean softmax cross-entropy plus `l2/2 * |W|^2`, and its gradient
    /// with respect to (W, b).
    fn objective(&self, weights: &[f64], bias: &[f64], l2: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let (d, k) = (self.dim, self.k);
        let blocks: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..self.n.div_ceil(BLOCK_ROWS))
            .into_par_iter()
            .map(|b| {
                let mut loss = 0.0;
                let mut gw = vec![0.0; k * d];
                let mut gb = vec![0.0; k];
                let mut z = vec![0.0; k];
                for i in b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(self.n) {
                    let xi = &self.x[i * d..(i + 1) * d];
                    for c in 0..k {
                        z[c] = bias[c] + dot(&weights[c * d..(c + 1) * d], xi);
                    }
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in z.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    let y = self.labels[i] as usize;
                    loss += total.ln() - (z[y].ln());
                    for c in 0..k {
                        let g = z[c] / total - if c == y { 1.0 } else { 0.0 };
                        gb[c] += g;
                        for (w, &x) in gw[c * d..(c + 1) * d].iter_mut().zip(xi) {
                            *w += g * x;
                        }
                    }
                }
                (loss, gw, gb)
            })
            .collect();
        let mut loss = 0.0;
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        for (l, w, b) in blocks {
            loss += l;
            gw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
            gb.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
        }
        let inv_n = 1.0 / self.n as f64;
        let reg: f64 = weights.iter().map(|w| w * w).sum();
        for (g, w) in gw.iter_mut().zip(weights) {
            *g = *g * inv_n + l2 * w;
        }
        gb.iter_mut().for_each(|g| *g *= inv_n);
        (loss * inv_n + 0.5 * l2 * reg, gw, gb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss and gradient of the linear-probe objective at arbitrary parameters.
/// Returns `(loss, dL/dW, dL/db)`.
pub fn linear_objective(
    train: &EmbeddingTable,
    weights: &[f64],
    bias: &[f64],
    l2: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (k, d) = (train.n_classes(), train.dim());
    if weights.len() != k * d || bias.len() != k {
        return Err(Error::InvalidArgument(format!(
            "parameter shapes do not match {k} classes x {d} dims"
        )));
    }
    Ok(Design::new(train).objective(weights, bias, l2))
}

pub fn fit_linear_probe(train: &EmbeddingTable, config: &ProbeConfig) -> Result<ProbeModel> {
    if train.n_classes() < 2 {
        return Err(Error::InvalidArgument("linear probe needs at least 2 classes".into()));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if !(config.step_size.is_finite() && config.step_size >= 0.0 && config.l2.is_finite() && config.l2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size {} and l2 {} must be finite and non-negative",
            config.step_size, config.l2
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let design = Design::new(train);
    let (k, d) = (design.k, design.dim);
    let mut weights = vec![0.0; k * d];
    let mut bias = vec![0.0; k];
    let mut loss_history = Vec::with_capacity(config.epochs + 1);
    let diverged = |epoch| Error::DivergenceDetected {
        epoch,
        step_size: config.step_size,
        l2: config.l2,
        epochs: config.epochs,
        seed: config.seed,
    };
    for epoch in 0..config.epochs {
        let (loss, gw, gb) = design.objective(&weights, &bias, config.l2);
        if !loss.is_finite() {
            return Err(diverged(epoch));
        }
        loss_history.push(loss);
        weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= config.step_size * g);
        bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= config.step_size * g);
    }
    let (loss, _, _) = design.objective(&weights, &bias, config.l2);
    if !loss.is_finite() {
        return Err(diverged(config.epochs));
    }
    loss_history.push(loss);
    let mut probe = LinearProbe {
        n_classes: k,
        dim: d,
        weights,
        bias,
        config: *config,
        loss_history,
        train_accuracy: 0.0,
    };
    probe.train_accuracy = accuracy_of(&linear_logits(&probe, train), train.labels(), k);
    Ok(ProbeModel::Linear(probe))
}

fn linear_logits(probe: &LinearProbe, table: &EmbeddingTable) -> Vec<f64> {
    let (k, d) = (probe.n_classes, probe.dim);
    let mut out = vec![0.0; table.len() * k];
    out.par_chunks_mut(k.max(1)).enumerate().for_each(|(row, z)| {
        let x: Vec<f64> = table.feature(row).iter().map(|&v| v as f64).collect();
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = probe.bias[c] + dot(&probe.weights[c * d..(c + 1) * d], &x);
        }
    });
    out
}

/// Row-major `n_rows x n_classes` logits. The nearest-prototype model emits
/// negated Euclidean distances.
pub fn predict_logits(model: &ProbeModel, table: &EmbeddingTable) -> Result<Vec<f64>> {
    if table.dim() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            actual: table.dim(),
        });
    }
    if table.n_classes() != model.n_classes() {
        return Err(Error::ClassCountMismatch {
            expected: model.n_classes(),
            actual: table.n_classes(),
        });
    }
    match model {
        ProbeModel::Linear(p) => Ok(linear_logits(p, table)),
        ProbeModel::NearestPrototype(protos) => {
            let rows = (0..table.len())
                .into_par_iter()
                .map(|row| iei::distance_vector(table.feature(row), protos))
                .collect::<Result<Vec<_>>>()?;
            Ok(rows.into_iter().flat_map(|d| d.0.into_iter().map(|a| -a)).collect())
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn accuracy_of(logits: &[f64], labels: &[u32], k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .chunks_exact(k)
        .zip(labels)
        .filter(|(z, &y)| argmax(z) == y as usize)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn evaluate(model: &ProbeModel, table: &EmbeddingTable) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let logits = predict_logits(model, table)?;
    Ok(accuracy_of(&logits, table.labels(), model.n_classes()))
}

impl ProbeModel {
    /// PRB1 blob: 64-byte header, f64 parameter blocks, trailing SHA-256 of
    /// everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PROBE_MAGIC);
        out.extend_from_slice(&PROBE_VERSION.to_le_bytes());
        let kind: u32 = match self.kind() {
            ProbeKind::NearestPrototype => 0,
            ProbeKind::Linear => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&(self.n_classes() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        let config = match self {
            ProbeModel::Linear(p) => p.config,
            ProbeModel::NearestPrototype(_) => ProbeConfig {
                kind: ProbeKind::NearestPrototype,
                step_size: 0.0,
                epochs: 0,
                l2: 0.0,
                seed: 0,
            },
        };
        out.extend_from_slice(&(config.epochs as u64).to_le_bytes());
        out.extend_from_slice(&config.seed.to_le_bytes());
        out.extend_from_slice(&config.step_size.to_le_bytes());
        out.extend_from_slice(&config.l2.to_le_bytes());
        out.resize(PROBE_HEADER_LEN, 0);
        let put = |out: &mut Vec<u8>, vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        match self {
            ProbeModel::NearestPrototype(p) => {
                put(&mut out, p.vectors());
                out.extend((0..p.n_classes()).map(|c| p.is_present(c) as u8));
            }
            ProbeModel::Linear(p) => {
                put(&mut out, &p.weights);
                put(&mut out, &p.bias);
                out.extend_from_slice(&(p.loss_history.len() as u64).to_le_bytes());
                put(&mut out, &p.loss_history);
                put(&mut out, &[p.train_accuracy]);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ProbeModel> {
        if bytes.len() < PROBE_HEADER_LEN + 32 || &bytes[..4] != PROBE_MAGIC {
            return Err(Error::MalformedHeader("not a PRB1 probe blob".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let actual = Sha256::digest(body);
        if actual.as_slice() != digest {
            return Err(Error::ChecksumMismatch {
                expected: hex::encode(digest),
                actual: hex::encode(actual),
            });
        }
        let u32_at = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(body[at..at + 8].try_into().unwrap());
        let f64_at = |at: usize| f64::from_le_bytes(body[at..at + 8].try_into().unwrap());
        if u32_at(4) != PROBE_VERSION {
            return Err(Error::MalformedHeader(format!("unsupported probe version {}", u32_at(4))));
        }
        let k = usize::try_from(u64_at(12)).map_err(|_| Error::MalformedHeader("n_classes".into()))?;
        let d = usize::try_from(u64_at(20)).map_err(|_| Error::MalformedHeader("dim".into()))?;
        let config = ProbeConfig {
            kind: ProbeKind::Linear,
            epochs: u64_at(28) as usize,
            seed: u64_at(36),
            step_size: f64_at(44),
            l2: f64_at(52),
        };
        let mut at = PROBE_HEADER_LEN;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let end = count
                .checked_mul(8)
                .and_then(|b| at.checked_add(b))
                .filter(|&e| e <= body.len())
                .ok_or_else(|| Error::MalformedHeader("probe blob truncated".into()))?;
            let vals = body[at..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            at = end;
            Ok(vals)
        };
        let model = match u32_at(8) {
            0 => {
                let vectors = take(k.checked_mul(d).ok_or_else(|| Error::MalformedHeader("size".into()))?)?;
                let present_bytes = body.get(at..).filter(|p| p.len() == k).ok_or_else(|| {
                    Error::MalformedHeader("probe blob has wrong length".into())
                })?;
                let present = present_bytes.iter().map(|&b| b != 0).collect();
                ProbeModel::NearestPrototype(ClassPrototypes::from_parts(k, d, vectors, present)?)
            }
            1 => {
                let weights = take(k.checked_mul(d).ok_or_else(|| Error::MalformedHeader("size".into()))?)?;
                let bias = take(k)?;
                let n_hist = take(1)?[0].to_bits() as usize;
                let loss_history = take(n_hist)?;
                let train_accuracy = take(1)?[0];
                if at != body.len() {
                    return Err(Error::MalformedHeader("probe blob has trailing bytes".into()));
                }
                if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
                    return Err(Error::InvariantViolation("non-finite probe parameter".into()));
                }
                ProbeModel::Linear(LinearProbe {
                    n_classes: k,
                    dim: d,
                    weights,
                    bias,
                    config,
                    loss_history,
                    train_accuracy,
                })
            }
            other => return Err(Error::MalformedHeader(format!("unknown probe kind {other}"))),
        };
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters() -> EmbeddingTable {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let c = (i % 2) as u32;
            let off = if c == 0 { -2.0 } else { 2.0 };
            feats.extend_from_slice(&[off + 0.1 * (i as f32 % 5.0), 0.3 * (i as f32 % 3.0)]);
            labels.push(c);
        }
        EmbeddingTable::new(2, 2, (0..20).collect(), labels, feats, None).unwrap()
    }

    #[test]
    fn nearest_prototype_separates_clusters() {
        let t = clusters();
        let m = fit_nearest_prototype(&t).unwrap();
        assert_eq!(evaluate(&m, &t).unwrap(), 1.0);
    }

    #[test]
    fn zero_step_keeps_zero_weights() {
        let t = clusters();
        let cfg = ProbeConfig {
            step_size: 0.0,
            epochs: 1,
            ..ProbeConfig::default()
        };
        let ProbeModel::Linear(p) = fit_linear_probe(&t, &cfg).unwrap() else {
            panic!("expected linear probe")
        };
        assert!(p.weights.iter().chain(&p.bias).all(|&w| w == 0.0));
        assert!((p.final_loss() - 2f64.ln()).abs() < 1e-12);
        let logits = predict_logits(&ProbeModel::Linear(p), &t).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn separable_reaches_full_accuracy() {
        let t = clusters();
        let m = fit_linear_probe(&t, &ProbeConfig::default()).unwrap();
        assert_eq!(evaluate(&m, &t).unwrap(), 1.0);
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn argument_errors() {
        let t = clusters();
        let one_class = EmbeddingTable::new(1, 1, vec![0], vec![0], vec![0.0], None).unwrap();
        assert!(fit_linear_probe(&one_class, &ProbeConfig::default()).is_err());
        let cfg = ProbeConfig {
            epochs: 0,
            ..ProbeConfig::default()
        };
        assert!(fit_linear_probe(&t, &cfg).is_err());
        let m = fit_nearest_prototype(&t).unwrap();
        assert!(matches!(evaluate(&m, &t.subset(&[]).unwrap()), Err(Error::EmptyTable)));
        let wide = EmbeddingTable::new(3, 2, vec![0], vec![0], vec![0.0; 3], None).unwrap();
        assert!(matches!(predict_logits(&m, &wide), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn divergence_is_reported() {
        let t = EmbeddingTable::new(1, 2, vec![0, 1], vec![0, 1], vec![1e30, -1e30], None).unwrap();
        let cfg = ProbeConfig {
            step_size: 1e10,
            epochs: 50,
            ..ProbeConfig::default()
        };
        let err = fit_linear_probe(&t, &cfg).unwrap_err();
        assert!(matches!(err, Error::DivergenceDetected { .. }), "{err}");
        assert!(err.to_string().contains("step 10000000000"));
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let t = clusters();
        for m in [
            fit_linear_probe(&t, &ProbeConfig { epochs: 5, ..ProbeConfig::default() }).unwrap(),
            fit_nearest_prototype(&t).unwrap(),
        ] {
            let bytes = m.to_bytes();
            assert_eq!(ProbeModel::from_bytes(&bytes).unwrap(), m);
            let mut bad = bytes.clone();
            bad[70] ^= 1;
            assert!(ProbeModel::from_bytes(&bad).is_err());
        }
    }
}
