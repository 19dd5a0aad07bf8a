//! Monitored-gravity models (generic, CSL, DP) and the deterministic
//! Schrödinger–Newton and exact-pair-potential baselines.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::engine::channels::{LatticeCouplings, NewtonFeedback};
use crate::engine::trajectory::{Composition, Conditional, Propagator, QuantumState, Unconditional, Unravelled};
use crate::engine::{FeedbackSpec, Generator, MonitoringSpec, Scheme, STEP_GUARD};
use crate::error::{EngineError, ModelError};
use crate::kernels::{coulomb_multiplier, gaussian_multiplier, profile, CorrelationKernel};
use crate::lattice::{
    kinetic_hamiltonian, ConfigSpace, DensityMatrix, DiagonalField, Hamiltonian, LaplacianSymbol, LatticeGrid,
    StateVector, C64,
};
use crate::spectral::GridFft;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Gaussian-correlated detectors of length `correlation_length`.
    Generic,
    Csl,
    Dp,
    /// Mean-field Schrödinger–Newton baseline.
    #[serde(rename = "sn")]
    SchrodingerNewton,
    /// Unitary evolution with the exact inter-particle Newton potential.
    #[serde(rename = "pair")]
    PairPotential,
}

impl ModelKind {
    pub fn is_monitored(self) -> bool {
        matches!(self, ModelKind::Generic | ModelKind::Csl | ModelKind::Dp)
    }
}

/// How the unconditional decay matrix is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoherenceRoute {
    /// Monitoring and feedback double commutators summed separately.
    Split,
    /// DP only: one local gradient form with coefficient `κ/4 + 1/κ`.
    United,
}

fn default_kappa() -> f64 {
    2.0
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Smearing width σ of the monitored density.
    #[serde(default = "default_one")]
    pub sigma: f64,
    #[serde(default = "default_one")]
    pub gamma: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_one")]
    pub g: f64,
    #[serde(default)]
    pub correlation_length: f64,
    /// Feed the signal back as a Newton potential.
    #[serde(default = "default_true")]
    pub feedback: bool,
    /// Smear the fed-back potential; defaults per model kind.
    #[serde(default)]
    pub feedback_smearing: Option<bool>,
    #[serde(default)]
    pub laplacian: LaplacianSymbol,
    #[serde(default)]
    pub decoherence: Option<DecoherenceRoute>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            sigma: 1.0,
            gamma: 1.0,
            kappa: 2.0,
            g: 1.0,
            correlation_length: 0.0,
            feedback: true,
            feedback_smearing: None,
            laplacian: LaplacianSymbol::default(),
            decoherence: None,
        }
    }

    pub fn csl(sigma: f64, gamma: f64, g: f64) -> Self {
        Self {
            sigma,
            gamma,
            g,
            ..Self::new(ModelKind::Csl)
        }
    }

    pub fn dp(sigma: f64, kappa: f64, g: f64) -> Self {
        Self {
            sigma,
            kappa,
            g,
            ..Self::new(ModelKind::Dp)
        }
    }

    /// Whether the fed-back potential is σ-smeared.
    pub fn smeared_feedback(&self) -> bool {
        self.feedback_smearing.unwrap_or(self.kind != ModelKind::Csl)
    }

    pub fn route(&self) -> DecoherenceRoute {
        self.decoherence.unwrap_or(match self.kind {
            ModelKind::Dp if self.feedback => DecoherenceRoute::United,
            _ => DecoherenceRoute::Split,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        let finite = [self.sigma, self.gamma, self.kappa, self.g, self.correlation_length];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("model parameters must be finite".into());
        }
        if self.g < 0.0 {
            return bad(format!("G must be non-negative, got {}", self.g));
        }
        if self.kind.is_monitored() && self.sigma <= 0.0 {
            return bad(format!("monitored models need σ > 0, got {}", self.sigma));
        }
        match self.kind {
            ModelKind::Csl | ModelKind::Generic if self.gamma <= 0.0 => {
                return bad(format!("γ must be positive, got {}", self.gamma));
            }
            ModelKind::Generic if self.correlation_length < 0.0 => {
                return bad("correlation length must be non-negative".into());
            }
            ModelKind::Dp => {
                if self.kappa <= 0.0 {
                    return bad(format!("κ must be positive, got {}", self.kappa));
                }
                if self.g <= 0.0 {
                    return bad("DP needs G > 0".into());
                }
                if self.feedback && !self.smeared_feedback() {
                    return bad("DP feedback diverges without smearing the fed-back potential".into());
                }
            }
            _ => {}
        }
        if self.decoherence == Some(DecoherenceRoute::United) && !(self.kind == ModelKind::Dp && self.feedback) {
            return bad("the united decoherence form exists only for DP with feedback".into());
        }
        Ok(())
    }

    pub fn kernel(&self) -> Option<CorrelationKernel> {
        match self.kind {
            ModelKind::Csl => Some(CorrelationKernel::Csl { gamma: self.gamma }),
            ModelKind::Dp => Some(CorrelationKernel::Dp {
                kappa: self.kappa,
                g: self.g,
            }),
            ModelKind::Generic => Some(CorrelationKernel::Gaussian {
                gamma: self.gamma,
                length: self.correlation_length,
            }),
            _ => None,
        }
    }

    fn newton(&self) -> Option<NewtonFeedback> {
        self.feedback.then(|| NewtonFeedback {
            g: self.g,
            smeared: self.smeared_feedback(),
        })
    }
}

/// Monitoring channels of a monitored model on `grid`, without any
/// configuration space.
pub fn monitoring_couplings(spec: &ModelSpec, grid: &LatticeGrid) -> Result<LatticeCouplings, ModelError> {
    spec.validate()?;
    let kernel = spec
        .kernel()
        .ok_or_else(|| ModelError::Invalid(format!("{:?} is not a monitored model", spec.kind)))?
        .on(grid, spec.laplacian)?;
    Ok(LatticeCouplings::new(kernel, spec.sigma, spec.newton())?)
}

/// `κ/4 + 1/κ`, the DP decoherence coefficient relative to `1/(8πG)∫|∇ΔΦσ|²`.
pub fn kappa_decoherence_coefficient(kappa: f64) -> Result<f64, ModelError> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(ModelError::Invalid(format!("κ must be positive, got {kappa}")));
    }
    Ok(kappa / 4.0 + 1.0 / kappa)
}

/// Field sites of every particle for each configuration.
fn configuration_sites(space: &ConfigSpace) -> Vec<Vec<usize>> {
    let field = space.field_sites();
    (0..space.dim())
        .map(|x| space.decode(x).into_iter().map(|s| field[s]).collect())
        .collect()
}

/// `V_{G,σ}(x) = ½ ∫ ρσ(r;x) Φ_(σ)(r;x) dr` for every configuration.
pub fn build_backaction_hamiltonian(spec: &ModelSpec, space: &ConfigSpace) -> Result<DiagonalField, ModelError> {
    let couplings = monitoring_couplings(spec, space.grid())?;
    if couplings.feedback().is_none() {
        return Err(ModelError::Invalid("the model has no feedback".into()));
    }
    let masses = space.particles().masses();
    Ok(DiagonalField::new(
        configuration_sites(space)
            .iter()
            .map(|xs| couplings.backaction_potential(&masses, xs))
            .collect(),
    ))
}

/// Gradient components of `Φσ` for each configuration, flattened into rows so
/// that `∫|∇Φ_x − ∇Φ_y|²` follows from a Gram matrix.
fn potential_gradients(space: &ConfigSpace, sigma: f64, g: f64, symbol: LaplacianSymbol) -> DMatrix<f64> {
    let grid = space.grid();
    let fft = GridFft::new(grid);
    let multiplier: Vec<f64> = coulomb_multiplier(grid, g, symbol)
        .iter()
        .zip(gaussian_multiplier(grid, sigma))
        .map(|(a, b)| a * b)
        .collect();
    let unit = profile(&fft, grid, &multiplier);
    let masses = space.particles().masses();
    let sites = configuration_sites(space);
    let m = grid.num_sites();
    let nd = grid.ndim();
    let ks: Vec<Vec<f64>> = (0..nd).map(|a| grid.wavenumbers(a)).collect();
    let width = match symbol {
        LaplacianSymbol::FiniteDifference => nd * m,
        LaplacianSymbol::Spectral => 2 * nd * m,
    };
    let mut rows = DMatrix::<f64>::zeros(sites.len(), width);
    for (x, xs) in sites.iter().enumerate() {
        let phi: Vec<f64> = (0..m)
            .map(|r| {
                xs.iter()
                    .zip(&masses)
                    .map(|(&s, mass)| mass * unit[grid.difference(r, s)])
                    .sum()
            })
            .collect();
        match symbol {
            LaplacianSymbol::FiniteDifference => {
                for axis in 0..nd {
                    let h = grid.spacing()[axis];
                    for r in 0..m {
                        let c = grid.coords(r);
                        let mut up = [c[0] as i64, c[1] as i64, c[2] as i64];
                        up[axis] += 1;
                        rows[(x, axis * m + r)] = (phi[grid.site(&up[..nd])] - phi[r]) / h;
                    }
                }
            }
            LaplacianSymbol::Spectral => {
                let spec = fft.forward_real(&phi);
                for axis in 0..nd {
                    let mut d: Vec<C64> = spec
                        .iter()
                        .enumerate()
                        .map(|(q, z)| z * C64::new(0.0, ks[axis][grid.coords(q)[axis]]))
                        .collect();
                    fft.inverse(&mut d);
                    for (r, z) in d.iter().enumerate() {
                        rows[(x, 2 * (axis * m + r))] = z.re;
                        rows[(x, 2 * (axis * m + r) + 1)] = z.im;
                    }
                }
            }
        }
    }
    rows
}

/// DP decay matrix from the united local form
/// `(κ/4 + 1/κ)/(8πG) ∫ |∇(Φσ(·;x) − Φσ(·;y))|² dr`.
pub fn dp_united_decay(space: &ConfigSpace, spec: &ModelSpec) -> Result<DMatrix<f64>, ModelError> {
    spec.validate()?;
    if spec.kind != ModelKind::Dp {
        return Err(ModelError::Invalid("united decay is a DP construction".into()));
    }
    let coefficient = kappa_decoherence_coefficient(spec.kappa)? / (8.0 * PI * spec.g);
    let rows = potential_gradients(space, spec.sigma, spec.g, spec.laplacian);
    let gram = &rows * rows.transpose();
    let dv = space.grid().cell_volume();
    let d = space.dim();
    Ok(DMatrix::from_fn(d, d, |x, y| {
        coefficient * dv * (gram[(x, x)] + gram[(y, y)] - 2.0 * gram[(x, y)])
    }))
}

/// Mean mass density `Σ_x p_x ϱ̂(r;x)` on the field grid.
pub fn mean_density(space: &ConfigSpace, populations: &[f64]) -> Vec<f64> {
    let grid = space.grid();
    let dv = grid.cell_volume();
    let masses = space.particles().masses();
    let mut rho = vec![0.0; grid.num_sites()];
    for (x, xs) in configuration_sites(space).iter().enumerate() {
        for (&s, m) in xs.iter().zip(&masses) {
            rho[s] += populations[x] * m / dv;
        }
    }
    rho
}

/// Exact Newton pair potential `Σ_{n<m} m_n m_m φ(x_n − x_m)` with the lattice
/// Green's function `φ` (no self-energy terms).
pub fn exact_pair_potential(space: &ConfigSpace, g: f64, symbol: LaplacianSymbol) -> DiagonalField {
    let grid = space.grid();
    let fft = GridFft::new(grid);
    let green = profile(&fft, grid, &coulomb_multiplier(grid, g, symbol));
    let masses = space.particles().masses();
    DiagonalField::new(
        configuration_sites(space)
            .iter()
            .map(|xs| {
                let mut v = 0.0;
                for n in 0..xs.len() {
                    for k in n + 1..xs.len() {
                        v += masses[n] * masses[k] * green[grid.difference(xs[n], xs[k])];
                    }
                }
                v
            })
            .collect(),
    )
}

/// Unitary Euler step `ρ − i dt [H, ρ]` for a Hamiltonian that already holds the pair potential.
pub fn exact_pair_step(rho: &DensityMatrix, h: &Hamiltonian, dt: f64) -> Result<DensityMatrix, EngineError> {
    let inc = h.commutator(rho.matrix()) * C64::new(dt, 0.0);
    let ratio = inc.iter().map(|z| z.norm()).sum::<f64>() / rho.l1_norm();
    if !ratio.is_finite() {
        return Err(EngineError::NonFinite { step: 0 });
    }
    if ratio > STEP_GUARD {
        return Err(EngineError::StepGuard { step: 0, ratio });
    }
    Ok(DensityMatrix::new(rho.matrix() + inc))
}

/// Mean-field potential `V(x) = Σ_n m_n Φ[⟨ϱ̂⟩](x_n)` of the Schrödinger–Newton equation.
pub fn sn_potential(space: &ConfigSpace, psi: &StateVector, g: f64, symbol: LaplacianSymbol) -> DiagonalField {
    let grid = space.grid();
    let rho = mean_density(space, &psi.probabilities());
    let phi = GridFft::new(grid).filter(&rho, &coulomb_multiplier(grid, g, symbol));
    let masses = space.particles().masses();
    DiagonalField::new(
        configuration_sites(space)
            .iter()
            .map(|xs| xs.iter().zip(&masses).map(|(&s, m)| m * phi[s]).sum())
            .collect(),
    )
}

/// Euler step of the Schrödinger–Newton equation followed by renormalisation.
pub fn sn_step(
    psi: &StateVector,
    space: &ConfigSpace,
    h: &Hamiltonian,
    g: f64,
    symbol: LaplacianSymbol,
    dt: f64,
) -> Result<StateVector, EngineError> {
    let v = sn_potential(space, psi, g, symbol);
    let total = h.clone().with_potential(&v);
    let inc = total.apply(psi.as_vector()) * C64::new(0.0, -dt);
    let ratio = inc.iter().map(|z| z.norm()).sum::<f64>() / psi.as_vector().iter().map(|z| z.norm()).sum::<f64>();
    if !ratio.is_finite() {
        return Err(EngineError::NonFinite { step: 0 });
    }
    if ratio > STEP_GUARD {
        return Err(EngineError::StepGuard { step: 0, ratio });
    }
    let next = psi.as_vector() + inc;
    let norm = next.norm();
    Ok(StateVector::new(next.unscale(norm)))
}

struct SchrodingerNewton {
    space: ConfigSpace,
    hamiltonian: Arc<Hamiltonian>,
    g: f64,
    symbol: LaplacianSymbol,
}

impl Propagator for SchrodingerNewton {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn step(
        &self,
        state: QuantumState,
        _rng: &mut ChaCha8Rng,
        dt: f64,
        _want_signal: bool,
    ) -> Result<(QuantumState, Option<Vec<f64>>), EngineError> {
        let QuantumState::Pure(psi) = state else {
            return Err(EngineError::Unsupported(
                "Schrödinger–Newton evolution needs a pure state".into(),
            ));
        };
        let next = sn_step(&psi, &self.space, &self.hamiltonian, self.g, self.symbol, dt)?;
        Ok((QuantumState::Pure(next), None))
    }
}

struct ExactPair {
    hamiltonian: Arc<Hamiltonian>,
}

impl Propagator for ExactPair {
    fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    fn step(
        &self,
        state: QuantumState,
        _rng: &mut ChaCha8Rng,
        dt: f64,
        _want_signal: bool,
    ) -> Result<(QuantumState, Option<Vec<f64>>), EngineError> {
        let rho = state.density();
        Ok((QuantumState::Mixed(exact_pair_step(&rho, &self.hamiltonian, dt)?), None))
    }
}

/// How a monitored model is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Conditional density matrix, direct SME with feedback.
    #[default]
    Conditional,
    /// Conditional density matrix, monitoring step then feedback kick.
    Composed,
    /// Unconditional master equation.
    Unconditional,
    /// Pure-state unravelling.
    Unravelled,
}

#[derive(Clone, Debug)]
enum Dynamics {
    Monitored(Arc<Generator>),
    SchrodingerNewton,
    PairPotential(Arc<Hamiltonian>),
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    space: ConfigSpace,
    hamiltonian: Arc<Hamiltonian>,
    dynamics: Dynamics,
}

pub fn build_model(spec: &ModelSpec, space: &ConfigSpace) -> Result<Model, ModelError> {
    spec.validate()?;
    let hamiltonian = Arc::new(kinetic_hamiltonian(space));
    let dynamics = match spec.kind {
        ModelKind::Generic | ModelKind::Csl | ModelKind::Dp => {
            let kernel = spec
                .kernel()
                .expect("monitored kind")
                .on(space.grid(), spec.laplacian)?;
            let feedback = spec.newton().map_or(FeedbackSpec::None, FeedbackSpec::Newton);
            let mut generator = Generator::new(
                space,
                MonitoringSpec::Lattice {
                    kernel,
                    sigma: spec.sigma,
                },
                feedback,
            )
            .map_err(|e| ModelError::Invalid(e.to_string()))?;
            if spec.route() == DecoherenceRoute::United {
                generator = generator
                    .with_decay(dp_united_decay(space, spec)?)
                    .map_err(|e| ModelError::Invalid(e.to_string()))?;
            }
            Dynamics::Monitored(Arc::new(generator))
        }
        ModelKind::SchrodingerNewton => Dynamics::SchrodingerNewton,
        ModelKind::PairPotential => {
            if space.num_particles() < 2 {
                return Err(ModelError::Invalid(
                    "the pair model needs at least two particles".into(),
                ));
            }
            let v = exact_pair_potential(space, spec.g, spec.laplacian);
            Dynamics::PairPotential(Arc::new((*hamiltonian).clone().with_potential(&v)))
        }
    };
    Ok(Model {
        spec: spec.clone(),
        space: space.clone(),
        hamiltonian,
        dynamics,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    /// Free Hamiltonian (kinetic plus external potentials).
    pub fn hamiltonian(&self) -> &Arc<Hamiltonian> {
        &self.hamiltonian
    }

    pub fn generator(&self) -> Option<&Arc<Generator>> {
        match &self.dynamics {
            Dynamics::Monitored(g) => Some(g),
            _ => None,
        }
    }

    pub fn backaction_hamiltonian(&self) -> DiagonalField {
        match &self.dynamics {
            Dynamics::Monitored(g) => g.backaction_hamiltonian(),
            _ => DiagonalField::zeros(self.space.dim()),
        }
    }

    /// Whether `mode` needs a pure initial state.
    pub fn needs_pure_state(&self, mode: Mode) -> bool {
        match self.dynamics {
            Dynamics::SchrodingerNewton => true,
            Dynamics::Monitored(_) => mode == Mode::Unravelled,
            Dynamics::PairPotential(_) => false,
        }
    }

    pub fn is_stochastic(&self, mode: Mode) -> bool {
        matches!(self.dynamics, Dynamics::Monitored(_)) && mode != Mode::Unconditional
    }

    pub fn propagator(&self, mode: Mode, scheme: Scheme) -> Box<dyn Propagator> {
        match &self.dynamics {
            Dynamics::Monitored(g) => {
                let generator = if g.scheme() == scheme {
                    g.clone()
                } else {
                    Arc::new((**g).clone().with_scheme(scheme))
                };
                let hamiltonian = self.hamiltonian.clone();
                match mode {
                    Mode::Conditional | Mode::Composed => Box::new(Conditional {
                        generator,
                        hamiltonian,
                        composition: if mode == Mode::Composed {
                            Composition::Composed
                        } else {
                            Composition::Combined
                        },
                    }),
                    Mode::Unconditional => Box::new(Unconditional { generator, hamiltonian }),
                    Mode::Unravelled => Box::new(Unravelled { generator, hamiltonian }),
                }
            }
            Dynamics::SchrodingerNewton => Box::new(SchrodingerNewton {
                space: self.space.clone(),
                hamiltonian: self.hamiltonian.clone(),
                g: self.spec.g,
                symbol: self.spec.laplacian,
            }),
            Dynamics::PairPotential(h) => Box::new(ExactPair { hamiltonian: h.clone() }),
        }
    }
}

/// Comparison of the derived pure-state noise coupling with the `(1+i)` form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SseCouplingReport {
    pub kappa: f64,
    /// Least-squares `c` in `β_x − ⟨β⟩ ≈ c (b_x − ⟨b⟩)`.
    pub fitted: [f64; 2],
    /// `−(κ/2 + i)`.
    pub derived: [f64; 2],
    pub residual: f64,
    /// `|Re c| = |Im c|`, i.e. the coupling is a real multiple of `1 ± i`.
    pub matches_one_plus_i: bool,
}

/// Fits the noise coupling of the DP unravelling from one sampled step.
pub fn sse_coupling_report(model: &Model, rng: &mut ChaCha8Rng) -> Result<SseCouplingReport, ModelError> {
    let invalid = |e: EngineError| ModelError::Invalid(e.to_string());
    let g = model
        .generator()
        .ok_or_else(|| ModelError::Invalid("needs a monitored model".into()))?;
    if model.spec.kind != ModelKind::Dp || !g.has_feedback() {
        return Err(ModelError::Invalid(
            "the coupling report is defined for DP with feedback".into(),
        ));
    }
    let dt = 1e-3;
    let noise = g.sample_noise(dt, rng).map_err(invalid)?;
    let inc = g.increments(&noise, dt).map_err(invalid)?;
    let b = inc.b.as_ref().expect("feedback increments");
    let d = g.dim();
    let p = vec![1.0 / d as f64; d];
    let mean = |v: &[f64]| v.iter().zip(&p).map(|(a, w)| a * w).sum::<f64>();
    let (mh, mb) = (mean(&inc.h), mean(b));
    let beta: Vec<C64> = (0..d).map(|x| C64::new(0.5 * (inc.h[x] - mh), -(b[x] - mb))).collect();
    let bc: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let denom: f64 = bc.iter().map(|v| v * v).sum();
    let c: C64 = beta.iter().zip(&bc).map(|(z, v)| z * v).sum::<C64>() / denom;
    let residual = beta
        .iter()
        .zip(&bc)
        .map(|(z, v)| (z - c * v).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / denom.sqrt();
    Ok(SseCouplingReport {
        kappa: model.spec.kappa,
        fitted: [c.re, c.im],
        derived: [-model.spec.kappa / 2.0, -1.0],
        residual,
        matches_one_plus_i: (c.re.abs() - c.im.abs()).abs() < 1e-9 * c.norm(),
    })
}
