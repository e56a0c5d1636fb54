//! Addition and reduction experiments: repeatedly score, select, move rows
//! between train and pool, refit the probe and record held-out accuracy.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iei::{self, Indicator, ScoreTable};
use crate::probe::{self, ProbeConfig, ProbeModel};
use crate::selection::{self, BudgetKind, BudgetScheme, ClassStats, Direction, SelectionPlan};
use crate::store::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    Addition,
    Reduction,
}

/// What one arm of an experiment does each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub indicator: Indicator,
    pub scheme: BudgetKind,
    /// The set chosen each round: added to train in addition mode, removed
    /// from train in reduction mode.
    pub direction: Direction,
    pub round_budget: usize,
    pub rounds: usize,
    pub probe: ProbeConfig,
    pub seed: u64,
}

/// State handed to a score provider at the start of a round.
pub struct RoundState<'a> {
    pub round: usize,
    pub train: &'a EmbeddingTable,
    /// Probe fitted on `train` this round.
    pub probe: &'a ProbeModel,
}

/// Produces the scores that drive each round's selection.
pub trait ScoreProvider: Sync {
    fn score(&self, state: &RoundState<'_>, candidates: &EmbeddingTable, indicator: Indicator) -> Result<ScoreTable>;
}

/// Default provider. Prototypes and logits come only from the current train
/// set and the probe fitted on it; random scores are seeded per round.
#[derive(Debug, Clone, Copy)]
pub struct FittedScorer {
    pub seed: u64,
}

impl ScoreProvider for FittedScorer {
    fn score(&self, state: &RoundState<'_>, candidates: &EmbeddingTable, indicator: Indicator) -> Result<ScoreTable> {
        match indicator {
            Indicator::DistanceEntropy => {
                let protos = iei::class_prototypes(state.train)?;
                iei::distance_entropy_scores(candidates, &protos)
            }
            Indicator::Metric => {
                let protos = iei::class_prototypes(state.train)?;
                iei::metric_scores(candidates, &protos)
            }
            Indicator::ProbabilityEntropy => {
                let logits = probe::predict_logits(state.probe, candidates)?;
                let fresh = candidates
                    .clone()
                    .with_logits(logits.into_iter().map(|v| v as f32).collect())?;
                iei::probability_entropy_scores(&fresh)
            }
            Indicator::Random => Ok(random_scores(candidates, self.seed, state.round)),
        }
    }
}

fn random_scores(table: &EmbeddingTable, seed: u64, round: usize) -> ScoreTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    ScoreTable {
        indicator: Indicator::Random,
        n_classes: table.n_classes(),
        sample_ids: table.sample_ids().to_vec(),
        labels: table.labels().to_vec(),
        scores: (0..table.len()).map(|_| rng.random::<f64>()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub train_size: usize,
    pub accuracy: f64,
    /// Selection that produced this point; absent for round 0.
    pub plan: Option<SelectionPlan>,
    /// Statistics of the scored candidates that drove `plan`.
    pub candidate_stats: Option<ClassStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub mode: LoopMode,
    pub config: LoopConfig,
    pub points: Vec<CurvePoint>,
    /// Some round hit a short pool or capped a class.
    pub exhausted: bool,
}

impl CurveRecord {
    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.train_size).collect()
    }

    /// Trapezoidal area under accuracy vs round index.
    pub fn area_under_curve(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[0].accuracy + w[1].accuracy))
            .sum()
    }

    /// `round,size,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,size,accuracy\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.round, p.train_size, p.accuracy);
        }
        out
    }
}

fn fit_and_score(train: &EmbeddingTable, eval: &EmbeddingTable, config: &ProbeConfig) -> Result<(ProbeModel, f64)> {
    let model = probe::fit(train, config)?;
    let acc = probe::evaluate(&model, eval)?;
    Ok((model, acc))
}

fn check_shapes(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.n_classes() != b.n_classes() {
        return Err(Error::ClassCountMismatch {
            expected: a.n_classes(),
            actual: b.n_classes(),
        });
    }
    Ok(())
}

/// Grows `base` by `rounds` selections from `pool`, evaluating on `eval`
/// after every round. Once the pool runs short the remainder is taken and
/// the record is flagged.
pub fn addition_loop(
    base: &EmbeddingTable,
    pool: &EmbeddingTable,
    eval: &EmbeddingTable,
    config: &LoopConfig,
    provider: &dyn ScoreProvider,
) -> Result<CurveRecord> {
    check_shapes(base, pool)?;
    check_shapes(base, eval)?;
    if config.round_budget == 0 && config.rounds > 0 {
        return Err(Error::InvalidArgument("round budget must be at least 1".into()));
    }
    let mut train = base.clone();
    let mut pool = pool.clone();
    let (mut model, acc) = fit_and_score(&train, eval, &config.probe)?;
    let mut points = vec![CurvePoint {
        round: 0,
        train_size: train.len(),
        accuracy: acc,
        plan: None,
        candidate_stats: None,
    }];
    let mut exhausted = false;
    for round in 1..=config.rounds {
        if pool.is_empty() {
            exhausted = true;
            break;
        }
        let state = RoundState {
            round,
            train: &train,
            probe: &model,
        };
        let scores = provider.score(&state, &pool, config.indicator)?;
        let stats = selection::class_distribution_stats(&scores)?;
        let scheme = BudgetScheme::new(config.scheme, config.round_budget)?;
        let plan = selection::select_up_to(&scores, &scheme, config.direction, &stats, 0)?;
        exhausted |= plan.exhausted || !plan.capped_classes.is_empty();
        let chosen = pool.subset(&plan.selected_ids)?;
        pool = pool.without(&plan.selected_ids)?;
        train = train.merge(&chosen)?;
        let (m, acc) = fit_and_score(&train, eval, &config.probe)?;
        model = m;
        points.push(CurvePoint {
            round,
            train_size: train.len(),
            accuracy: acc,
            plan: Some(plan),
            candidate_stats: Some(stats),
        });
    }
    Ok(CurveRecord {
        mode: LoopMode::Addition,
        config: *config,
        points,
        exhausted,
    })
}

/// Shrinks `train` by removing one selection per round. Every class keeps
/// at least one row so prototypes stay defined.
pub fn reduction_loop(
    train: &EmbeddingTable,
    eval: &EmbeddingTable,
    config: &LoopConfig,
    provider: &dyn ScoreProvider,
) -> Result<CurveRecord> {
    check_shapes(train, eval)?;
    let removal = config
        .round_budget
        .checked_mul(config.rounds)
        .ok_or_else(|| Error::InvalidArgument("round budget x rounds overflows".into()))?;
    if config.rounds > 0 && (config.round_budget == 0 || removal >= train.len()) {
        return Err(Error::InvalidArgument(format!(
            "reduction must remove between 1 and {} rows in total, asked for {} x {}",
            train.len().saturating_sub(1),
            config.round_budget,
            config.rounds
        )));
    }
    let mut train = train.clone();
    let (mut model, acc) = fit_and_score(&train, eval, &config.probe)?;
    let mut points = vec![CurvePoint {
        round: 0,
        train_size: train.len(),
        accuracy: acc,
        plan: None,
        candidate_stats: None,
    }];
    let mut exhausted = false;
    for round in 1..=config.rounds {
        let state = RoundState {
            round,
            train: &train,
            probe: &model,
        };
        let scores = provider.score(&state, &train, config.indicator)?;
        let stats = selection::class_distribution_stats(&scores)?;
        let scheme = BudgetScheme::new(config.scheme, config.round_budget)?;
        let plan = selection::select_up_to(&scores, &scheme, config.direction, &stats, 1)?;
        exhausted |= plan.exhausted || !plan.capped_classes.is_empty();
        if plan.selected_ids.is_empty() {
            break;
        }
        train = train.without(&plan.selected_ids)?;
        let (m, acc) = fit_and_score(&train, eval, &config.probe)?;
        model = m;
        points.push(CurvePoint {
            round,
            train_size: train.len(),
            accuracy: acc,
            plan: Some(plan),
            candidate_stats: Some(stats),
        });
    }
    Ok(CurveRecord {
        mode: LoopMode::Reduction,
        config: *config,
        points,
        exhausted,
    })
}
