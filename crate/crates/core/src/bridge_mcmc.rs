//! Preconditioned Crank–Nicolson Metropolis–Hastings on the driving noise of
//! a guided process. The target is the bridge law; the acceptance ratio is
//! the ratio of guided-process weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame_bundle::{DriverPath, FramePoint};
use crate::geometry::Chart;
use crate::guided::{simulate_guided, GuidedSolution, VectorFieldSpec};
use crate::heat_kernel::GuidingFunction;
use crate::{Error, Result};

/// Attempts made to find an initial path before giving up.
pub const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub seed: u64,
    pub thinning: usize,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1), got {}",
                self.lambda
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything that defines one bridge: manifold, drift, guiding function,
/// initial frame and time grid.
#[derive(Debug, Clone)]
pub struct BridgeProblem {
    pub chart: Chart,
    pub vf: VectorFieldSpec,
    pub gf: GuidingFunction,
    pub u0: FramePoint,
    pub times: Vec<f64>,
}

impl BridgeProblem {
    pub fn new(
        chart: Chart,
        vf: VectorFieldSpec,
        gf: GuidingFunction,
        u0: FramePoint,
        times: Vec<f64>,
    ) -> Result<Self> {
        if gf.chart() != chart {
            return Err(Error::Config(format!(
                "guiding function lives on {}, bridge on {}",
                gf.chart().name(),
                chart.name()
            )));
        }
        chart.check(&u0.x)?;
        crate::frame_bundle::check_grid(&times)?;
        if times[0] != 0.0 || *times.last().unwrap() != gf.horizon() {
            return Err(Error::Config(format!(
                "grid must run from 0 to the horizon {}",
                gf.horizon()
            )));
        }
        Ok(Self {
            chart,
            vf,
            gf,
            u0,
            times,
        })
    }

    pub fn simulate(&self, z: &DriverPath) -> Result<GuidedSolution> {
        simulate_guided(self.chart, &self.vf, &self.gf, &self.u0, z)
    }

    fn wiener<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DriverPath> {
        DriverPath::wiener(self.times.clone(), self.chart.dim(), rng)
    }
}

/// Current driver and the guided path it generates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub driver: DriverPath,
    pub solution: GuidedSolution,
}

impl ChainState {
    pub fn log_psi(&self) -> f64 {
        self.solution.log_psi
    }
}

/// Result of one pCN update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: ChainState,
    pub accepted: bool,
    /// `min(0, ln Ψ(X°) − ln Ψ(X))`; `−∞` for a failed proposal.
    pub log_alpha: f64,
    /// The proposal could not be integrated and was rejected outright.
    pub failed: bool,
}

/// Draws an independent path, retrying on integration failure.
pub fn initial_state<R: Rng + ?Sized>(problem: &BridgeProblem, rng: &mut R) -> Result<ChainState> {
    let mut last = None;
    for _ in 0..INIT_ATTEMPTS {
        let z = problem.wiener(rng)?;
        match problem.simulate(&z) {
            Ok(solution) => {
                return Ok(ChainState {
                    driver: z,
                    solution,
                })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Numeric(format!(
        "no initial path after {INIT_ATTEMPTS} attempts: {}",
        last.expect("at least one attempt")
    )))
}

/// One pCN step: `Z° = λZ + √(1 − λ²)W`, accepted with probability
/// `1 ∧ Ψ(X°)/Ψ(X)`.
pub fn pcn_step<R: Rng + ?Sized>(
    problem: &BridgeProblem,
    state: &ChainState,
    lambda: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let w = problem.wiener(rng)?;
    let proposal = state.driver.pcn_mix(&w, lambda)?;
    let log_u = rng.random::<f64>().ln();
    match problem.simulate(&proposal) {
        Ok(solution) => {
            let log_alpha = (solution.log_psi - state.log_psi()).min(0.0);
            if !log_alpha.is_finite() && log_alpha != f64::NEG_INFINITY {
                return Err(Error::Numeric(format!("acceptance ratio is {log_alpha}")));
            }
            let accepted = log_u < log_alpha || log_alpha == 0.0;
            let state = if accepted {
                ChainState {
                    driver: proposal,
                    solution,
                }
            } else {
                state.clone()
            };
            Ok(StepOutcome {
                state,
                accepted,
                log_alpha,
                failed: false,
            })
        }
        Err(e) => {
            log::debug!("proposal rejected after integration failure: {e}");
            Ok(StepOutcome {
                state: state.clone(),
                accepted: false,
                log_alpha: f64::NEG_INFINITY,
                failed: true,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub accepted: bool,
    pub log_alpha: f64,
    /// `ln Ψ` of the state after the update.
    pub log_psi: f64,
}

#[derive(Debug, Clone)]
pub struct ChainStats {
    /// `(iteration, path)` for the initial state and every `thinning`-th
    /// iteration.
    pub samples: Vec<(usize, GuidedSolution)>,
    pub records: Vec<IterationRecord>,
    pub acceptance_rate: f64,
    pub failed_proposals: usize,
}

/// Runs `iterations` pCN steps from an independent initial draw. Fully
/// determined by `config.seed`.
pub fn run_chain(problem: &BridgeProblem, config: &ChainConfig) -> Result<ChainStats> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = initial_state(problem, &mut rng)?;
    let mut samples = vec![(0, state.solution.clone())];
    let mut records = Vec::with_capacity(config.iterations);
    let (mut accepted, mut failed) = (0usize, 0usize);
    for iteration in 1..=config.iterations {
        let out = pcn_step(problem, &state, config.lambda, &mut rng)?;
        accepted += out.accepted as usize;
        failed += out.failed as usize;
        state = out.state;
        records.push(IterationRecord {
            iteration,
            accepted: out.accepted,
            log_alpha: out.log_alpha,
            log_psi: state.log_psi(),
        });
        if iteration % config.thinning == 0 {
            samples.push((iteration, state.solution.clone()));
        }
    }
    let acceptance_rate = accepted as f64 / config.iterations as f64;
    log::info!("chain finished: acceptance {acceptance_rate:.3}, {failed} failed proposals");
    Ok(ChainStats {
        samples,
        records,
        acceptance_rate,
        failed_proposals: failed,
    })
}
