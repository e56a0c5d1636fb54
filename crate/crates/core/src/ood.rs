//! Positive/negative migration split of a cross-domain training set by
//! distance to the test domain's class prototypes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iei::{self, ClassPrototypes};
use crate::store::EmbeddingTable;

pub const DEFAULT_POSITIVE_FRACTION: f64 = 0.4;

/// Guards `floor(fraction * n)` against products like `0.29 * 100 = 28.999...`.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationDistance {
    pub sample_id: u64,
    pub label: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationDistances {
    pub n_classes: usize,
    pub entries: Vec<MigrationDistance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationSplit {
    pub positive_ids: Vec<u64>,
    pub negative_ids: Vec<u64>,
    pub positive_fraction: f64,
    pub per_class: bool,
}

/// Per-class means of the test-domain features. Every class must be present.
pub fn test_domain_prototypes(test: &EmbeddingTable) -> Result<ClassPrototypes> {
    let protos = iei::class_prototypes(test)?;
    protos.require_complete()?;
    Ok(protos)
}

/// Distance from each training row to its own class's test-domain prototype.
pub fn migration_distances(train: &EmbeddingTable, prototypes: &ClassPrototypes) -> Result<MigrationDistances> {
    let scores = iei::metric_scores(train, prototypes)?;
    Ok(MigrationDistances {
        n_classes: prototypes.n_classes(),
        entries: scores
            .iter()
            .map(|(sample_id, label, distance)| MigrationDistance {
                sample_id,
                label,
                distance,
            })
            .collect(),
    })
}

fn positive_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + FLOOR_SLACK).floor() as usize).min(n)
}

/// Closest `floor(fraction * n)` rows (per class, or globally) become the
/// positive split. Ties go to the smaller id.
pub fn migration_split(distances: &MigrationDistances, positive_fraction: f64, per_class: bool) -> Result<MigrationSplit> {
    if !(positive_fraction > 0.0 && positive_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "positive fraction must be in (0, 1], got {positive_fraction}"
        )));
    }
    if distances.entries.is_empty() {
        return Err(Error::EmptyDistances);
    }
    let groups: Vec<Vec<&MigrationDistance>> = if per_class {
        let mut g = vec![Vec::new(); distances.n_classes];
        for e in &distances.entries {
            g.get_mut(e.label as usize)
                .ok_or_else(|| Error::InvariantViolation(format!("label {} out of range", e.label)))?
                .push(e);
        }
        g
    } else {
        vec![distances.entries.iter().collect()]
    };
    let mut positive = BTreeSet::new();
    let mut negative = BTreeSet::new();
    for mut group in groups {
        group.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.sample_id.cmp(&b.sample_id)));
        let k = positive_count(positive_fraction, group.len());
        positive.extend(group[..k].iter().map(|e| e.sample_id));
        negative.extend(group[k..].iter().map(|e| e.sample_id));
    }
    Ok(MigrationSplit {
        positive_ids: positive.into_iter().collect(),
        negative_ids: negative.into_iter().collect(),
        positive_fraction,
        per_class,
    })
}
