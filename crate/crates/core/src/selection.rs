//! Per-class score statistics, class budgets and budgeted goodset/badset
//! selection.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iei::{Indicator, ScoreTable};

/// Added to every unbalanced-scheme weight so a class with zero mean score
/// still receives budget in proportion to the others' slack.
pub const UNBALANCED_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    #[default]
    Balanced,
    Unbalanced,
}

impl FromStr for BudgetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "balanced" | "balance" => Ok(BudgetKind::Balanced),
            "unbalanced" | "unbalance" => Ok(BudgetKind::Unbalanced),
            other => Err(Error::InvalidArgument(format!("unknown budget scheme {other:?}"))),
        }
    }
}

impl fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetKind::Balanced => "balanced",
            BudgetKind::Unbalanced => "unbalanced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetScheme {
    pub kind: BudgetKind,
    pub total_budget: usize,
}

impl BudgetScheme {
    pub fn new(kind: BudgetKind, total_budget: usize) -> Result<Self> {
        if total_budget == 0 {
            return Err(Error::InvalidArgument("total budget must be at least 1".into()));
        }
        Ok(BudgetScheme { kind, total_budget })
    }
}

/// Goodset takes the highest scores, badset the lowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Goodset,
    Badset,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "goodset" | "good" => Ok(Direction::Goodset),
            "badset" | "bad" => Ok(Direction::Badset),
            other => Err(Error::InvalidArgument(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub class: usize,
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Amount of class information: negated z-score of this class's mean
    /// score across the populated classes.
    pub aci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub indicator: Indicator,
    pub classes: Vec<ClassStat>,
    /// Set when every populated class has the same mean, leaving ACI at zero.
    pub aci_degenerate: bool,
}

impl ClassStats {
    pub fn total_count(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }
}

/// Per-class mean and population variance of the scores, with ACI filled in.
pub fn class_distribution_stats(scores: &ScoreTable) -> Result<ClassStats> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    // Welford accumulators per class.
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); scores.n_classes];
    for (_, label, s) in scores.iter() {
        let (n, mean, m2) = &mut acc[label as usize];
        *n += 1;
        let delta = s - *mean;
        *mean += delta / *n as f64;
        *m2 += delta * (s - *mean);
    }
    let classes = acc
        .into_iter()
        .enumerate()
        .map(|(class, (count, mean, m2))| ClassStat {
            class,
            count,
            mean,
            variance: if count > 0 { (m2 / count as f64).max(0.0) } else { 0.0 },
            aci: 0.0,
        })
        .collect();
    aci(ClassStats {
        indicator: scores.indicator,
        classes,
        aci_degenerate: false,
    })
}

/// Populates ACI as the negated z-score of each populated class's mean.
/// Empty classes keep ACI 0.
pub fn aci(mut stats: ClassStats) -> Result<ClassStats> {
    let means: Vec<f64> = stats.classes.iter().filter(|c| c.count > 0).map(|c| c.mean).collect();
    if means.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    let sigma = (means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / means.len() as f64).sqrt();
    let degenerate = sigma.is_nan() || sigma <= 0.0 || means.iter().all(|&m| m == means[0]);
    for c in stats.classes.iter_mut() {
        c.aci = if degenerate || c.count == 0 {
            0.0
        } else {
            -(c.mean - mu) / sigma
        };
    }
    stats.aci_degenerate = degenerate;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub per_class: Vec<usize>,
    /// Classes whose proportional share exceeded what they had available;
    /// their overflow went to the other classes.
    pub capped_classes: Vec<usize>,
}

impl BudgetAllocation {
    pub fn total(&self) -> usize {
        self.per_class.iter().sum()
    }
}

/// Splits `total` over `active` classes in proportion to `weight`, rounding
/// by largest remainder with ties going to the lower class index.
fn largest_remainder(total: usize, active: &[usize], weight: impl Fn(usize) -> f64, out: &mut [usize]) {
    if active.is_empty() || total == 0 {
        return;
    }
    let weights: Vec<f64> = active.iter().map(|&c| weight(c)).collect();
    let uniform = weights.iter().all(|&w| w == weights[0]);
    let mut shares: Vec<(usize, usize, f64)> = if uniform {
        let (q, r) = (total / active.len(), total % active.len());
        active
            .iter()
            .map(|&c| (c, q, if r > 0 { r as f64 / active.len() as f64 } else { 0.0 }))
            .collect()
    } else {
        let sum: f64 = weights.iter().sum();
        active
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| {
                let quota = total as f64 * w / sum;
                let floor = quota.floor();
                (c, floor as usize, quota - floor)
            })
            .collect()
    };
    let assigned: usize = shares.iter().map(|s| s.1).sum();
    let remainder = total.saturating_sub(assigned);
    shares.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    for (i, (c, base, _)) in shares.iter().enumerate() {
        out[*c] += base + usize::from(i < remainder);
    }
}

/// Per-class budgets for one selection round.
///
/// Balanced splits evenly. Unbalanced weights each class by
/// `max(mean_score, 0) + UNBALANCED_EPSILON`, so classes whose pool carries
/// more information receive more budget. Any class whose share exceeds
/// `available[c]` is capped and the overflow is re-split over the rest by
/// the same rule.
pub fn class_budgets(stats: &ClassStats, scheme: &BudgetScheme, available: &[usize]) -> Result<BudgetAllocation> {
    if available.len() != stats.classes.len() {
        return Err(Error::ClassCountMismatch {
            expected: stats.classes.len(),
            actual: available.len(),
        });
    }
    let pool: usize = available.iter().sum();
    if pool < scheme.total_budget {
        return Err(Error::InsufficientPool {
            requested: scheme.total_budget,
            available: pool,
        });
    }
    let weight = |c: usize| match scheme.kind {
        BudgetKind::Balanced => 1.0,
        BudgetKind::Unbalanced => stats.classes[c].mean.max(0.0) + UNBALANCED_EPSILON,
    };
    let mut per_class = vec![0usize; available.len()];
    let mut active: Vec<usize> = (0..available.len()).filter(|&c| available[c] > 0).collect();
    let mut remaining = scheme.total_budget;
    let mut capped_classes = Vec::new();
    loop {
        let mut trial = vec![0usize; available.len()];
        largest_remainder(remaining, &active, weight, &mut trial);
        let over: Vec<usize> = active.iter().copied().filter(|&c| trial[c] > available[c]).collect();
        if over.is_empty() {
            for &c in &active {
                per_class[c] = trial[c];
            }
            break;
        }
        for &c in &over {
            per_class[c] = available[c];
            remaining -= available[c];
            capped_classes.push(c);
        }
        active.retain(|c| !over.contains(c));
    }
    capped_classes.sort_unstable();
    Ok(BudgetAllocation {
        per_class,
        capped_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    /// Class-major; within a class, best-ranked first.
    pub selected_ids: Vec<u64>,
    pub per_class_budget: Vec<usize>,
    pub direction: Direction,
    pub indicator: Indicator,
    pub scheme: BudgetKind,
    pub requested_budget: usize,
    /// The pool held fewer rows than requested; everything available was taken.
    pub exhausted: bool,
    pub capped_classes: Vec<usize>,
}

/// Orders `(id, score)` rows so the first `b` are the selection for `direction`.
/// Ties go to the smaller id.
pub fn rank(rows: &mut [(u64, f64)], direction: Direction) {
    rows.sort_by(|a, b| {
        let by_score = match direction {
            Direction::Goodset => b.1.total_cmp(&a.1),
            Direction::Badset => a.1.total_cmp(&b.1),
        };
        by_score.then(a.0.cmp(&b.0))
    });
}

/// Takes the top (goodset) or bottom (badset) `allocation.per_class[c]` rows of
/// every class.
pub fn select_with_budgets(scores: &ScoreTable, allocation: &BudgetAllocation, direction: Direction) -> Vec<u64> {
    let mut by_class: Vec<Vec<(u64, f64)>> = vec![Vec::new(); scores.n_classes];
    for (id, label, s) in scores.iter() {
        by_class[label as usize].push((id, s));
    }
    let mut out = Vec::with_capacity(allocation.total());
    for (c, rows) in by_class.iter_mut().enumerate() {
        rank(rows, direction);
        out.extend(rows.iter().take(allocation.per_class[c]).map(|r| r.0));
    }
    out
}

fn plan(
    scores: &ScoreTable,
    scheme: &BudgetScheme,
    direction: Direction,
    stats: &ClassStats,
    available: &[usize],
    allow_exhaustion: bool,
) -> Result<SelectionPlan> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let pool: usize = available.iter().sum();
    let exhausted = pool < scheme.total_budget;
    if exhausted && !allow_exhaustion {
        return Err(Error::InsufficientPool {
            requested: scheme.total_budget,
            available: pool,
        });
    }
    let effective = BudgetScheme {
        kind: scheme.kind,
        total_budget: scheme.total_budget.min(pool),
    };
    let allocation = class_budgets(stats, &effective, available)?;
    Ok(SelectionPlan {
        selected_ids: select_with_budgets(scores, &allocation, direction),
        per_class_budget: allocation.per_class,
        direction,
        indicator: scores.indicator,
        scheme: scheme.kind,
        requested_budget: scheme.total_budget,
        exhausted,
        capped_classes: allocation.capped_classes,
    })
}

fn counts(scores: &ScoreTable) -> Vec<usize> {
    let mut available = vec![0; scores.n_classes];
    for &l in &scores.labels {
        available[l as usize] += 1;
    }
    available
}

/// Budgeted goodset/badset selection. Fails with `InsufficientPool` when
/// the scores cover fewer rows than the budget.
pub fn select(scores: &ScoreTable, scheme: &BudgetScheme, direction: Direction, stats: &ClassStats) -> Result<SelectionPlan> {
    plan(scores, scheme, direction, stats, &counts(scores), false)
}

/// Like [`select`], but a short pool yields everything available and sets
/// `exhausted` instead of failing. `reserve[c]` rows of each class are
/// never selected.
pub fn select_up_to(
    scores: &ScoreTable,
    scheme: &BudgetScheme,
    direction: Direction,
    stats: &ClassStats,
    reserve: usize,
) -> Result<SelectionPlan> {
    let available: Vec<usize> = counts(scores).iter().map(|&n| n.saturating_sub(reserve)).collect();
    plan(scores, scheme, direction, stats, &available, true)
}
