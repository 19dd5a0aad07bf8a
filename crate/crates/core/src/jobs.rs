//! Config-driven runs and analyses, returning typed results for rendering.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    csl_backaction_slope, kappa_scan, linearity_witness, pair_potential_curve, rate_profile, BackactionSlope,
    DecoherenceProfile, KappaScan, LinearityReport, PairPotentialRow,
};
use crate::config::RunConfig;
use crate::engine::trajectory::{run_ensemble, QuantumState, TrajectoryRecord};
use crate::error::SimError;
use crate::gravity::{Mode, ModelKind};
use crate::lattice::C64;

/// Ensemble averages at the recorded times.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanSeries {
    pub times: Vec<f64>,
    pub trace: Vec<f64>,
    pub purity: Vec<f64>,
    pub observables: Vec<Vec<f64>>,
    pub offdiagonal: Vec<Vec<C64>>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Configuration with the effective seed filled in.
    pub config: RunConfig,
    pub dim: usize,
    pub stochastic: bool,
    pub records: Vec<TrajectoryRecord>,
    pub mean: Option<MeanSeries>,
    pub observable_names: Vec<String>,
    pub coherence_names: Vec<String>,
    pub signal_names: Vec<String>,
}

fn with_seed(config: &RunConfig, seed: Option<u64>) -> RunConfig {
    let mut c = config.clone();
    if let Some(s) = seed {
        c.integration.seed = s;
    }
    c
}

fn mean_series(records: &[TrajectoryRecord]) -> MeanSeries {
    let n = records.len() as f64;
    let first = &records[0];
    let avg = |f: &dyn Fn(&TrajectoryRecord, usize) -> f64, i: usize| records.iter().map(|r| f(r, i)).sum::<f64>() / n;
    let len = first.times.len();
    MeanSeries {
        times: first.times.clone(),
        trace: (0..len).map(|i| avg(&|r, i| r.trace[i], i)).collect(),
        purity: (0..len).map(|i| avg(&|r, i| r.purity[i], i)).collect(),
        observables: (0..len)
            .map(|i| {
                (0..first.observables[i].len())
                    .map(|k| records.iter().map(|r| r.observables[i][k]).sum::<f64>() / n)
                    .collect()
            })
            .collect(),
        offdiagonal: (0..len)
            .map(|i| {
                (0..first.offdiagonal[i].len())
                    .map(|k| records.iter().map(|r| r.offdiagonal[i][k]).sum::<C64>() / n)
                    .collect()
            })
            .collect(),
    }
}

pub fn execute_run(config: &RunConfig, seed: Option<u64>) -> Result<RunOutcome, SimError> {
    let config = with_seed(config, seed);
    let resolved = config.resolve()?;
    let mode = config.integration.mode;
    let stochastic = resolved.model.is_stochastic(mode);
    let count = if stochastic { config.integration.ensemble } else { 1 };
    let propagator = resolved.model.propagator(mode, config.integration.scheme);
    let records = run_ensemble(
        propagator.as_ref(),
        &resolved.initial,
        config.integration.dt,
        config.integration.steps,
        config.integration.seed,
        count,
        &resolved.record,
    )?;
    let mean = (records.len() > 1).then(|| mean_series(&records));
    Ok(RunOutcome {
        dim: resolved.space.dim(),
        stochastic,
        records,
        mean,
        observable_names: resolved.observable_names,
        coherence_names: resolved.coherence_names,
        signal_names: resolved.signal_names,
        config,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisKind {
    Rate,
    PairPotential,
    KappaScan,
    Linearity,
}

impl AnalysisKind {
    pub fn name(self) -> &'static str {
        match self {
            AnalysisKind::Rate => "rate",
            AnalysisKind::PairPotential => "pair-potential",
            AnalysisKind::KappaScan => "kappa-scan",
            AnalysisKind::Linearity => "linearity",
        }
    }
}

impl std::str::FromStr for AnalysisKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            AnalysisKind::Rate,
            AnalysisKind::PairPotential,
            AnalysisKind::KappaScan,
            AnalysisKind::Linearity,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown analysis `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearitySummary {
    pub model: ModelKind,
    pub mode: Mode,
    pub time: f64,
    #[serde(flatten)]
    pub report: LinearityReport,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnalysisOutcome {
    Rate {
        profile: DecoherenceProfile,
        /// Continuum back-action slope for CSL.
        slope: Option<BackactionSlope>,
    },
    PairPotential(Vec<PairPotentialRow>),
    KappaScan(KappaScan),
    Linearity(LinearitySummary),
}

pub fn execute_analysis(
    config: &RunConfig,
    kind: AnalysisKind,
    seed: Option<u64>,
) -> Result<AnalysisOutcome, SimError> {
    let config = with_seed(config, seed);
    config.validate()?;
    let grid = config.grid()?;
    let axis = config.analysis.axis;
    let mass = config.particles[0].mass;
    let spec = &config.model;
    let need_monitored = || {
        if spec.kind.is_monitored() {
            Ok(())
        } else {
            Err(SimError::Config(format!("`{}` needs a monitored model", kind.name())))
        }
    };
    match kind {
        AnalysisKind::Rate => {
            need_monitored()?;
            let profile = rate_profile(spec, &grid, mass, axis, &config.separations())?;
            let slope =
                (spec.kind == ModelKind::Csl && spec.feedback).then(|| csl_backaction_slope(spec.g, mass, spec.gamma));
            Ok(AnalysisOutcome::Rate { profile, slope })
        }
        AnalysisKind::PairPotential => {
            need_monitored()?;
            if config.particles.len() < 2 {
                return Err(SimError::Config("the pair potential needs two particles".into()));
            }
            let separations: Vec<usize> = config.separations().into_iter().filter(|&s| s > 0).collect();
            Ok(AnalysisOutcome::PairPotential(pair_potential_curve(
                spec,
                &grid,
                [config.particles[0].mass, config.particles[1].mass],
                axis,
                &separations,
            )?))
        }
        AnalysisKind::KappaScan => {
            if spec.kind != ModelKind::Dp {
                return Err(SimError::Config("the κ-scan needs a DP model".into()));
            }
            let d = config.analysis.kappa_separation.unwrap_or(grid.dims()[axis] / 4).max(1);
            Ok(AnalysisOutcome::KappaScan(kappa_scan(
                spec,
                &grid,
                mass,
                axis,
                d,
                &config.analysis.kappas,
            )?))
        }
        AnalysisKind::Linearity => {
            let space = config.space()?;
            let model = crate::gravity::build_model(spec, &space).map_err(|e| SimError::Config(e.to_string()))?;
            let mode = config.integration.mode;
            let [plus, minus, a, b] = config.cat_branches(&space)?;
            let pure = model.needs_pure_state(mode);
            let wrap = |s: crate::lattice::StateVector| {
                if pure {
                    QuantumState::Pure(s)
                } else {
                    QuantumState::Mixed(s.projector())
                }
            };
            let stochastic = model.is_stochastic(mode);
            let trajectories = config.integration.ensemble.div_ceil(2) * 2;
            let report = linearity_witness(
                model.propagator(mode, config.integration.scheme).as_ref(),
                &[wrap(plus), wrap(minus)],
                &[wrap(a), wrap(b)],
                config.integration.dt,
                config.integration.steps,
                config.integration.seed,
                trajectories,
                stochastic,
            )?;
            Ok(AnalysisOutcome::Linearity(LinearitySummary {
                model: spec.kind,
                mode,
                time: config.integration.dt * config.integration.steps as f64,
                report,
            }))
        }
    }
}
