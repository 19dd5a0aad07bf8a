//! Seeded single-trajectory and ensemble drivers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

use super::{feedback_step, Generator};
use crate::error::EngineError;
use crate::lattice::{DensityMatrix, DiagonalField, Hamiltonian, StateVector, C64};

/// Eigenvalue monitoring is only affordable on small systems.
pub const EIGEN_MONITOR_MAX_DIM: usize = 64;

/// Smallest eigenvalue tolerated before a positivity warning is recorded.
pub const POSITIVITY_FLOOR: f64 = -1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum QuantumState {
    Mixed(DensityMatrix),
    Pure(StateVector),
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Mixed(r) => r.dim(),
            QuantumState::Pure(p) => p.dim(),
        }
    }

    pub fn density(&self) -> DensityMatrix {
        match self {
            QuantumState::Mixed(r) => r.clone(),
            QuantumState::Pure(p) => p.projector(),
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        match self {
            QuantumState::Mixed(r) => r.populations(),
            QuantumState::Pure(p) => p.probabilities(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            QuantumState::Mixed(r) => r.trace().re,
            QuantumState::Pure(p) => p.norm().powi(2),
        }
    }

    pub fn purity(&self) -> f64 {
        match self {
            QuantumState::Mixed(r) => r.purity(),
            QuantumState::Pure(p) => p.norm().powi(4),
        }
    }

    pub fn element(&self, x: usize, y: usize) -> C64 {
        match self {
            QuantumState::Mixed(r) => r.matrix()[(x, y)],
            QuantumState::Pure(p) => p.as_vector()[x] * p.as_vector()[y].conj(),
        }
    }

    pub fn into_mixed(self) -> Self {
        QuantumState::Mixed(self.density())
    }
}

/// One stochastic (or deterministic) time step of some dynamics.
pub trait Propagator: Send + Sync {
    fn dim(&self) -> usize;

    /// Advances `state` by `dt`. Returns the full signal when `want_signal` is set
    /// and the dynamics has one.
    fn step(
        &self,
        state: QuantumState,
        rng: &mut ChaCha8Rng,
        dt: f64,
        want_signal: bool,
    ) -> Result<(QuantumState, Option<Vec<f64>>), EngineError>;

    /// Signal channel values before any step, when the dynamics has a signal.
    fn initial_signal(&self, _state: &QuantumState) -> Option<Vec<f64>> {
        None
    }
}

/// Which conditional integrator a [`Conditional`] propagator uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Composition {
    /// Direct SME with the feedback composed in.
    #[default]
    Combined,
    /// Monitoring step followed by an exact feedback kick.
    Composed,
    /// Monitoring only; the feedback is ignored.
    MonitorOnly,
}

/// Conditional density-matrix trajectories.
pub struct Conditional {
    pub generator: Arc<Generator>,
    pub hamiltonian: Arc<Hamiltonian>,
    pub composition: Composition,
}

impl Propagator for Conditional {
    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn step(
        &self,
        state: QuantumState,
        rng: &mut ChaCha8Rng,
        dt: f64,
        want_signal: bool,
    ) -> Result<(QuantumState, Option<Vec<f64>>), EngineError> {
        let rho = match state {
            QuantumState::Mixed(r) => r,
            QuantumState::Pure(p) => p.projector(),
        };
        let g = &self.generator;
        let noise = g.sample_noise(dt, rng)?;
        let inc = g.increments(&noise, dt)?;
        let signal = want_signal.then(|| {
            let mut s = g.expected_signal(&rho.populations());
            s.iter_mut().zip(noise.values()).for_each(|(a, e)| *a += e);
            s
        });
        let next = match self.composition {
            Composition::Combined => g.combined_step(&rho, &self.hamiltonian, &inc, dt)?,
            Composition::Composed => {
                let v = g.feedback_potential(&rho.populations(), &inc, dt);
                let free = g.sme_step(&rho, &self.hamiltonian, &inc, dt)?;
                feedback_step(&free, &v, dt)
            }
            Composition::MonitorOnly => g.sme_step(&rho, &self.hamiltonian, &inc, dt)?,
        };
        Ok((QuantumState::Mixed(next), signal))
    }

    fn initial_signal(&self, state: &QuantumState) -> Option<Vec<f64>> {
        Some(self.generator.expected_signal(&state.populations()))
    }
}

/// Deterministic unconditional master equation.
pub struct Unconditional {
    pub generator: Arc<Generator>,
    pub hamiltonian: Arc<Hamiltonian>,
}

impl Propagator for Unconditional {
    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn step(
        &self,
        state: QuantumState,
        _rng: &mut ChaCha8Rng,
        dt: f64,
        _want_signal: bool,
    ) -> Result<(QuantumState, Option<Vec<f64>>), EngineError> {
        let rho = state.density();
        Ok((
            QuantumState::Mixed(self.generator.me_step(&rho, &self.hamiltonian, dt)?),
            None,
        ))
    }
}

/// Pure-state unravelling of the conditional SME.
pub struct Unravelled {
    pub generator: Arc<Generator>,
    pub hamiltonian: Arc<Hamiltonian>,
}

impl Propagator for Unravelled {
    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn step(
        &self,
        state: QuantumState,
        rng: &mut ChaCha8Rng,
        dt: f64,
        want_signal: bool,
    ) -> Result<(QuantumState, Option<Vec<f64>>), EngineError> {
        let QuantumState::Pure(psi) = state else {
            return Err(EngineError::Unsupported(
                "the unravelling needs a pure initial state".into(),
            ));
        };
        let g = &self.generator;
        let noise = g.sample_noise(dt, rng)?;
        let inc = g.increments(&noise, dt)?;
        let signal = want_signal.then(|| {
            let mut s = g.expected_signal(&psi.probabilities());
            s.iter_mut().zip(noise.values()).for_each(|(a, e)| *a += e);
            s
        });
        Ok((
            QuantumState::Pure(g.sse_step(&psi, &self.hamiltonian, &inc, dt)?),
            signal,
        ))
    }

    fn initial_signal(&self, state: &QuantumState) -> Option<Vec<f64>> {
        Some(self.generator.expected_signal(&state.populations()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RecordSpec {
    /// Record every this many steps (the initial state is always recorded).
    pub record_every: usize,
    /// Configuration pairs whose `ρ_xy` is tracked.
    pub offdiagonal: Vec<(usize, usize)>,
    /// Signal channels to record.
    pub signal_sites: Vec<usize>,
    /// Store the full state every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
    /// Diagonal observables whose expectations are tracked, e.g. particle coordinates.
    pub observables: Vec<DiagonalField>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub index: usize,
    pub times: Vec<f64>,
    pub trace: Vec<f64>,
    pub purity: Vec<f64>,
    pub observables: Vec<Vec<f64>>,
    pub offdiagonal: Vec<Vec<C64>>,
    /// Signal of the step ending at each recorded time; the noise-free `⟨A⟩` at `t = 0`.
    pub signals: Vec<Vec<f64>>,
    pub min_eigenvalue: Vec<f64>,
    pub snapshots: Vec<(f64, DensityMatrix)>,
    pub warnings: Vec<String>,
    pub final_state: QuantumState,
}

/// Random stream of trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Recorder<'a> {
    spec: &'a RecordSpec,
    monitor_eigen: bool,
    rec: TrajectoryRecord,
}

impl Recorder<'_> {
    fn record(&mut self, t: f64, step: usize, state: &QuantumState, signal: Option<&[f64]>) {
        let rec = &mut self.rec;
        rec.times.push(t);
        rec.trace.push(state.trace());
        rec.purity.push(state.purity());
        let p = state.populations();
        rec.observables.push(
            self.spec
                .observables
                .iter()
                .map(|o| p.iter().zip(o.values()).map(|(a, b)| a * b).sum())
                .collect(),
        );
        rec.offdiagonal.push(
            self.spec
                .offdiagonal
                .iter()
                .map(|&(x, y)| state.element(x, y))
                .collect(),
        );
        if !self.spec.signal_sites.is_empty() {
            rec.signals.push(match signal {
                Some(s) => self.spec.signal_sites.iter().map(|&c| s[c]).collect(),
                None => vec![f64::NAN; self.spec.signal_sites.len()],
            });
        }
        if self.monitor_eigen {
            let lambda = state.density().min_eigenvalue();
            if lambda < POSITIVITY_FLOOR && !rec.warnings.iter().any(|w| w.starts_with("positivity")) {
                rec.warnings.push(format!(
                    "positivity floor: smallest eigenvalue {lambda:.3e} at step {step}"
                ));
            }
            rec.min_eigenvalue.push(lambda);
        }
        if self.spec.snapshot_every > 0 && step % self.spec.snapshot_every == 0 {
            rec.snapshots.push((t, state.density()));
        }
    }
}

pub fn run_trajectory(
    propagator: &dyn Propagator,
    initial: &QuantumState,
    dt: f64,
    steps: usize,
    seed: u64,
    index: usize,
    spec: &RecordSpec,
) -> Result<TrajectoryRecord, EngineError> {
    if initial.dim() != propagator.dim() {
        return Err(EngineError::DimensionMismatch {
            expected: propagator.dim(),
            found: initial.dim(),
        });
    }
    if !(dt.is_finite() && dt > 0.0) || steps == 0 {
        return Err(EngineError::Unsupported(
            "need a positive time step and at least one step".into(),
        ));
    }
    let every = spec.record_every.max(1);
    let want_signal = !spec.signal_sites.is_empty();
    let mut rng = trajectory_rng(seed, index);
    let mut recorder = Recorder {
        spec,
        monitor_eigen: matches!(initial, QuantumState::Mixed(_)) && initial.dim() <= EIGEN_MONITOR_MAX_DIM,
        rec: TrajectoryRecord {
            seed,
            index,
            times: Vec::new(),
            trace: Vec::new(),
            purity: Vec::new(),
            observables: Vec::new(),
            offdiagonal: Vec::new(),
            signals: Vec::new(),
            min_eigenvalue: Vec::new(),
            snapshots: Vec::new(),
            warnings: Vec::new(),
            final_state: initial.clone(),
        },
    };
    let first = if want_signal {
        propagator.initial_signal(initial)
    } else {
        None
    };
    recorder.record(0.0, 0, initial, first.as_deref());
    let mut state = initial.clone();
    for step in 1..=steps {
        let (next, signal) = propagator
            .step(state, &mut rng, dt, want_signal)
            .map_err(|e| e.at_step(step))?;
        state = next;
        if step % every == 0 || step == steps {
            recorder.record(step as f64 * dt, step, &state, signal.as_deref());
        }
    }
    let mut rec = recorder.rec;
    rec.final_state = state;
    Ok(rec)
}

/// Runs `count` trajectories on streams `0..count`. Results come back in stream order.
pub fn run_ensemble(
    propagator: &dyn Propagator,
    initial: &QuantumState,
    dt: f64,
    steps: usize,
    seed: u64,
    count: usize,
    spec: &RecordSpec,
) -> Result<Vec<TrajectoryRecord>, EngineError> {
    (0..count)
        .into_par_iter()
        .map(|i| run_trajectory(propagator, initial, dt, steps, seed, i, spec))
        .collect()
}

/// Final state of one trajectory, without recording.
pub fn evolve(
    propagator: &dyn Propagator,
    initial: &QuantumState,
    dt: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<QuantumState, EngineError> {
    let mut state = initial.clone();
    for step in 1..=steps {
        state = propagator.step(state, rng, dt, false).map_err(|e| e.at_step(step))?.0;
    }
    Ok(state)
}

/// Ensemble mean of the final states of `count` trajectories on streams
/// `first_stream..first_stream + count`, reduced in stream order.
pub fn mean_final_state(
    propagator: &dyn Propagator,
    initial: &QuantumState,
    dt: f64,
    steps: usize,
    seed: u64,
    first_stream: usize,
    count: usize,
) -> Result<DensityMatrix, EngineError> {
    let finals: Vec<DensityMatrix> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, first_stream + i);
            evolve(propagator, initial, dt, steps, &mut rng).map(|s| s.density())
        })
        .collect::<Result<_, _>>()?;
    let dim = propagator.dim();
    let mut acc = nalgebra::DMatrix::<C64>::zeros(dim, dim);
    for f in &finals {
        acc += f.matrix();
    }
    Ok(DensityMatrix::new(acc / C64::new(count as f64, 0.0)))
}
