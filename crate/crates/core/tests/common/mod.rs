//! Independent brute-force oracles and table generators shared by the
//! integration tests. Nothing here calls into the library's numeric code.

#![allow(dead_code, clippy::needless_range_loop)]

use infosel::{Direction, EmbeddingTable, Indicator, ScoreTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random table with every class present, unique shuffled ids, features in
/// [-scale, scale] and optional logits in [-4, 4].
pub fn random_table(seed: u64, n: usize, dim: usize, n_classes: usize, scale: f32, logits: bool) -> EmbeddingTable {
    assert!(n >= n_classes);
    let mut r = rng(seed);
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    ids.shuffle(&mut r);
    let labels: Vec<u32> = (0..n)
        .map(|i| if i < n_classes { i as u32 } else { r.random_range(0..n_classes as u32) })
        .collect();
    let features: Vec<f32> = (0..n * dim).map(|_| r.random_range(-scale..=scale)).collect();
    let logits = logits.then(|| (0..n * n_classes).map(|_| r.random_range(-4.0f32..=4.0)).collect());
    EmbeddingTable::new(dim, n_classes, ids, labels, features, logits).unwrap()
}

/// Random score table; class sizes vary and some classes may be empty.
pub fn random_scores(seed: u64, max_n: usize, max_classes: usize) -> ScoreTable {
    let mut r = rng(seed);
    let n_classes = r.random_range(1..=max_classes);
    let n = r.random_range(1..=max_n);
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
    ids.shuffle(&mut r);
    let mut rows: Vec<(u64, u32, f64)> = ids
        .into_iter()
        .map(|id| {
            // Coarse grid so exact ties are frequent.
            let s = f64::from(r.random_range(0..40u32)) / 8.0 - 1.0;
            (id, r.random_range(0..n_classes as u32), s)
        })
        .collect();
    rows.sort_by_key(|row| row.0);
    ScoreTable {
        indicator: Indicator::Metric,
        n_classes,
        sample_ids: rows.iter().map(|row| row.0).collect(),
        labels: rows.iter().map(|row| row.1).collect(),
        scores: rows.iter().map(|row| row.2).collect(),
    }
}

pub fn means(table: &EmbeddingTable) -> Vec<Option<Vec<f64>>> {
    let mut out = Vec::new();
    for c in 0..table.n_classes() {
        let mut sum = vec![0.0f64; table.dim()];
        let mut count = 0usize;
        for row in 0..table.len() {
            if table.labels()[row] as usize == c {
                count += 1;
                for j in 0..table.dim() {
                    sum[j] += f64::from(table.features()[row * table.dim() + j]);
                }
            }
        }
        out.push((count > 0).then(|| sum.iter().map(|s| s / count as f64).collect()));
    }
    out
}

pub fn distance(x: &[f32], m: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..x.len() {
        let d = f64::from(x[j]) - m[j];
        s += d * d;
    }
    s.sqrt()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &x in v {
        if x > max {
            max = x;
        }
    }
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

pub fn entropy_bits(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &q in p {
        if q > 0.0 {
            h -= q * q.log2();
        }
    }
    h
}

pub fn distance_entropy(table: &EmbeddingTable) -> Vec<f64> {
    let m = means(table);
    (0..table.len())
        .map(|row| {
            let x = &table.features()[row * table.dim()..(row + 1) * table.dim()];
            let neg: Vec<f64> = m.iter().map(|mc| -distance(x, mc.as_ref().unwrap())).collect();
            entropy_bits(&softmax(&neg))
        })
        .collect()
}

pub fn metric(table: &EmbeddingTable) -> Vec<f64> {
    let m = means(table);
    (0..table.len())
        .map(|row| {
            let x = &table.features()[row * table.dim()..(row + 1) * table.dim()];
            distance(x, m[table.labels()[row] as usize].as_ref().unwrap())
        })
        .collect()
}

pub fn probability_entropy(table: &EmbeddingTable) -> Vec<f64> {
    let k = table.n_classes();
    let logits = table.logits().unwrap();
    (0..table.len())
        .map(|row| {
            let z: Vec<f64> = logits[row * k..(row + 1) * k].iter().map(|&v| f64::from(v)).collect();
            entropy_bits(&softmax(&z))
        })
        .collect()
}

/// Two-pass per-class `(count, mean, population variance)`.
pub fn class_moments(scores: &ScoreTable) -> Vec<(usize, f64, f64)> {
    (0..scores.n_classes)
        .map(|c| {
            let xs: Vec<f64> = scores.iter().filter(|r| r.1 as usize == c).map(|r| r.2).collect();
            if xs.is_empty() {
                return (0, 0.0, 0.0);
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            (xs.len(), mean, var)
        })
        .collect()
}

pub fn class_sizes(scores: &ScoreTable) -> Vec<usize> {
    class_moments(scores).iter().map(|m| m.0).collect()
}

/// Balanced budgets by handing out one slot per class per pass, lowest class
/// first, skipping classes that have run out.
pub fn balanced_budgets(total: usize, available: &[usize]) -> Vec<usize> {
    let mut out = vec![0; available.len()];
    let mut left = total;
    while left > 0 {
        let mut progressed = false;
        for c in 0..available.len() {
            if left > 0 && out[c] < available[c] {
                out[c] += 1;
                left -= 1;
                progressed = true;
            }
        }
        assert!(progressed, "budget exceeds availability");
    }
    out
}

/// Unbalanced budgets when no class runs out: weights `max(mean, 0) + 1e-6`,
/// floors of the proportional quotas, remainder by largest fractional part
/// with ties to the lower class.
pub fn unbalanced_budgets(total: usize, means: &[f64]) -> Vec<usize> {
    let w: Vec<f64> = means.iter().map(|m| m.max(0.0) + 1e-6).collect();
    let sum: f64 = w.iter().sum();
    let quotas: Vec<f64> = w.iter().map(|x| total as f64 * x / sum).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().take(total - assigned) {
        out[c] += 1;
    }
    out
}

/// Full sort of each class, then the first `budgets[c]` ids.
pub fn sort_and_slice(scores: &ScoreTable, budgets: &[usize], direction: Direction) -> Vec<u64> {
    let mut out = Vec::new();
    for (c, &b) in budgets.iter().enumerate() {
        let mut rows: Vec<(u64, f64)> = scores.iter().filter(|r| r.1 as usize == c).map(|r| (r.0, r.2)).collect();
        rows.sort_by(|a, b| {
            let s = match direction {
                Direction::Goodset => b.1.partial_cmp(&a.1).unwrap(),
                Direction::Badset => a.1.partial_cmp(&b.1).unwrap(),
            };
            s.then(a.0.cmp(&b.0))
        });
        out.extend(rows.iter().take(b).map(|r| r.0));
    }
    out.sort_unstable();
    out
}

pub fn sorted(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    v
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
