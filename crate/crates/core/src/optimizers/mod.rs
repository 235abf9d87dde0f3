//! Ask/tell search over a discrete parameter space.
//!
//! Every algorithm proposes points in the unit hypercube; proposals are
//! decoded to grid points before evaluation. Scalars are maximized.

mod bayes;
mod genetic;
mod random;
mod simplex;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::paramspace::{ParameterPoint, ParameterSpace};

pub use bayes::{boa_propose, expected_improvement, BoaConfig, GaussianProcess, GpParams};
pub use genetic::{ga_evolve, one_point_crossover, GaConfig};
pub use simplex::{nm_reflect, SimplexConfig};

/// Consecutive asks without a new execution after which a run is declared
/// converged.
pub const STALL_LIMIT: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Nm,
    Pro,
    Ga,
    Boa,
    /// Uniform random sampling; a baseline, not one of the tuned methods.
    Random,
}

impl Algorithm {
    pub const TUNERS: [Algorithm; 4] = [Algorithm::Ga, Algorithm::Nm, Algorithm::Pro, Algorithm::Boa];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Nm => "nm",
            Algorithm::Pro => "pro",
            Algorithm::Ga => "ga",
            Algorithm::Boa => "boa",
            Algorithm::Random => "random",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nm" => Ok(Algorithm::Nm),
            "pro" => Ok(Algorithm::Pro),
            "ga" => Ok(Algorithm::Ga),
            "boa" => Ok(Algorithm::Boa),
            "random" => Ok(Algorithm::Random),
            other => Err(format!("unknown algorithm `{other}` (expected nm, pro, ga, boa or random)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub simplex: SimplexConfig,
    pub ga: GaConfig,
    pub boa: BoaConfig,
}

/// A proposed point in both encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub unit: Vec<f64>,
    pub indices: Vec<usize>,
    pub point: ParameterPoint,
}

/// What happened to one candidate of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    /// The workflow ran; consumes budget.
    Executed(f64),
    /// Served from the evaluation cache.
    Cached(f64),
    /// Not evaluated because the budget ran out mid-batch.
    Skipped,
}

impl Outcome {
    pub fn scalar(&self) -> Option<f64> {
        match *self {
            Outcome::Executed(v) | Outcome::Cached(v) => Some(v),
            Outcome::Skipped => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub unit: Vec<f64>,
    pub point: ParameterPoint,
    pub scalar: f64,
}

pub(crate) struct Ctx<'a> {
    pub space: &'a ParameterSpace,
    pub rng: &'a mut ChaCha8Rng,
}

pub(crate) trait Engine: Send + fmt::Debug {
    fn propose(&mut self, ctx: &mut Ctx<'_>) -> Vec<Vec<f64>>;
    /// `values[i]` belongs to the i-th proposed unit vector; skipped points
    /// arrive as `-inf`.
    fn observe(&mut self, values: &[f64], ctx: &mut Ctx<'_>);
    fn finished(&self) -> bool {
        false
    }
}

/// Search state driven through [`OptimizerState::ask`] and [`OptimizerState::tell`].
#[derive(Debug)]
pub struct OptimizerState {
    algorithm: Algorithm,
    space: Arc<ParameterSpace>,
    budget: usize,
    executed: usize,
    rng: ChaCha8Rng,
    engine: Box<dyn Engine>,
    history: Vec<HistoryEntry>,
    best: Option<usize>,
    pending: Option<Vec<Candidate>>,
    idle_asks: usize,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, space: Arc<ParameterSpace>, budget: usize, seed: u64, config: &OptimizerConfig) -> Self {
        let k = space.k();
        let engine: Box<dyn Engine> = match algorithm {
            Algorithm::Nm => Box::new(simplex::NelderMead::new(k, config.simplex.clone())),
            Algorithm::Pro => Box::new(simplex::ParallelRankOrder::new(k, config.simplex.clone())),
            Algorithm::Ga => Box::new(genetic::Genetic::new(config.ga.clone())),
            Algorithm::Boa => Box::new(bayes::Bayesian::new(config.boa.clone())),
            Algorithm::Random => Box::new(random::RandomSearch),
        };
        Self {
            algorithm,
            space,
            budget,
            executed: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            engine,
            history: Vec::new(),
            best: None,
            pending: None,
            idle_asks: 0,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn space(&self) -> &Arc<ParameterSpace> {
        &self.space
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Executed (non-cached) evaluations told so far.
    pub fn executed(&self) -> usize {
        self.executed
    }

    pub fn remaining(&self) -> usize {
        self.budget.saturating_sub(self.executed)
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn best(&self) -> Option<&HistoryEntry> {
        self.best.map(|i| &self.history[i])
    }

    /// Charges evaluations made outside the ask/tell loop (e.g. a baseline run).
    pub fn charge(&mut self, n: usize) {
        self.executed += n;
    }

    /// Too many consecutive asks produced nothing new to execute.
    pub fn is_stalled(&self) -> bool {
        self.idle_asks >= STALL_LIMIT
    }

    pub fn is_finished(&self) -> bool {
        self.executed >= self.budget || self.engine.finished() || self.idle_asks >= STALL_LIMIT
    }

    /// Next batch of points to evaluate.
    pub fn ask(&mut self) -> Result<Vec<Candidate>, ProtocolError> {
        if self.is_finished() {
            return Err(ProtocolError::Finished);
        }
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let mut ctx = Ctx { space: &self.space, rng: &mut self.rng };
        let units = self.engine.propose(&mut ctx);
        let batch: Vec<Candidate> = units
            .into_iter()
            .map(|unit| {
                let unit: Vec<f64> = unit.into_iter().map(|c| c.clamp(0.0, 1.0)).collect();
                let indices = self.space.decode_indices(&unit).expect("engines emit finite coordinates");
                let point = self.space.point_from_indices(&indices).expect("decoded indices are in range");
                Candidate { unit, indices, point }
            })
            .collect();
        self.pending = Some(batch.clone());
        Ok(batch)
    }

    /// Reports the outcomes of the last asked batch, in ask order.
    pub fn tell(&mut self, outcomes: &[Outcome]) -> Result<(), ProtocolError> {
        let batch = self.pending.as_ref().ok_or(ProtocolError::NoPendingAsk)?;
        if batch.len() != outcomes.len() {
            return Err(ProtocolError::BatchMismatch { expected: batch.len(), got: outcomes.len() });
        }
        let batch = self.pending.take().unwrap();
        let mut any_executed = false;
        for (c, o) in batch.iter().zip(outcomes) {
            if let Outcome::Executed(v) = *o {
                any_executed = true;
                self.executed += 1;
                self.history.push(HistoryEntry { unit: c.unit.clone(), point: c.point.clone(), scalar: v });
                let i = self.history.len() - 1;
                if self.best.is_none_or(|b| v > self.history[b].scalar) {
                    self.best = Some(i);
                }
            }
        }
        self.idle_asks = if any_executed { 0 } else { self.idle_asks + 1 };
        let values: Vec<f64> = outcomes.iter().map(|o| o.scalar().unwrap_or(f64::NEG_INFINITY)).collect();
        let mut ctx = Ctx { space: &self.space, rng: &mut self.rng };
        self.engine.observe(&values, &mut ctx);
        Ok(())
    }
}

/// Projects a unit-cube vector onto the cell centers of its grid points.
pub(crate) fn snap_to_centers(space: &ParameterSpace, unit: &[f64]) -> Vec<f64> {
    let idx = space.decode_indices(unit).expect("finite coordinates");
    space.encode_indices(&idx)
}
