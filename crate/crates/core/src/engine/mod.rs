//! Itô integrators for conditional master equations with simultaneous
//! monitoring of many position-diagonal observables, Markovian feedback of the
//! measured signal, the unconditional master equation and the pure-state
//! unravelling.
//!
//! With every observable diagonal in the configuration basis, each generator
//! acts element-wise on `ρ_xy` and is fixed by three real `D×D` matrices:
//! `Ga_xy = ∫∫γ A_x A_y`, `Gb_xy = ∫∫γ⁻¹ B_x B_y` and `S_xy = ∫ A_x B_y`.

pub mod channels;
pub mod trajectory;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, KernelError};
use crate::kernels::{LatticeKernel, MatrixKernel, NoiseField};
use crate::lattice::{ConfigSpace, DensityMatrix, DiagonalField, Hamiltonian, StateVector, C64};
use channels::{LatticeCouplings, NewtonFeedback};

/// Relative L1 size of a single increment beyond which a step is rejected.
pub const STEP_GUARD: f64 = 0.1;

/// Norm below which an unravelled state is considered lost.
pub const NORM_FLOOR: f64 = 1e-6;

/// What is monitored and how the detector noise is correlated.
#[derive(Clone, Debug)]
pub enum MonitoringSpec {
    /// `A_r = ρ̂σ(r)` at every field site.
    Lattice { kernel: LatticeKernel, sigma: f64 },
    /// An explicit list of observables with a channel kernel of unit measure.
    Dense {
        observables: Vec<DiagonalField>,
        kernel: MatrixKernel,
    },
}

/// Which operators the signal is fed back through.
#[derive(Clone, Debug, Default)]
pub enum FeedbackSpec {
    #[default]
    None,
    /// `B_r = Φ̂_(σ)(r)`; lattice monitoring only.
    Newton(NewtonFeedback),
    /// One operator per monitored channel.
    Dense(Vec<DiagonalField>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Adds the commutative-noise Milstein correction.
    Milstein,
}

#[derive(Clone, Debug)]
enum Source {
    Lattice {
        couplings: LatticeCouplings,
        space: ConfigSpace,
        masses: Vec<f64>,
        sites: Vec<Vec<usize>>,
    },
    Dense {
        observables: Vec<DiagonalField>,
        kernel: MatrixKernel,
        feedback: Option<Vec<DiagonalField>>,
    },
}

/// Per-configuration noise increments for one step, already multiplied by `dt`:
/// `h_x = dt ∫∫ A_x γ δϱ` and `b_x = dt ∫ B_x δϱ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    pub h: Vec<f64>,
    pub b: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    dim: usize,
    source: Source,
    ga: DMatrix<f64>,
    gb: Option<DMatrix<f64>>,
    s: Option<DMatrix<f64>>,
    decay: DMatrix<f64>,
    scheme: Scheme,
}

fn populations(rho: &DensityMatrix) -> Vec<f64> {
    rho.populations()
}

fn weighted_mean(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl Generator {
    pub fn new(space: &ConfigSpace, monitoring: MonitoringSpec, feedback: FeedbackSpec) -> Result<Self, EngineError> {
        let dim = space.dim();
        let source = match (monitoring, feedback) {
            (MonitoringSpec::Lattice { kernel, sigma }, fb) => {
                if kernel.grid() != space.grid() {
                    return Err(EngineError::Unsupported(
                        "kernel grid differs from the configuration grid".into(),
                    ));
                }
                let newton = match fb {
                    FeedbackSpec::None => None,
                    FeedbackSpec::Newton(n) => Some(n),
                    FeedbackSpec::Dense(_) => {
                        return Err(EngineError::Unsupported("dense feedback needs dense monitoring".into()))
                    }
                };
                let couplings = LatticeCouplings::new(kernel, sigma, newton).map_err(kernel_err)?;
                let field = space.field_sites();
                let sites = (0..dim)
                    .map(|x| space.decode(x).into_iter().map(|s| field[s]).collect())
                    .collect();
                Source::Lattice {
                    couplings,
                    space: space.clone(),
                    masses: space.particles().masses(),
                    sites,
                }
            }
            (MonitoringSpec::Dense { observables, kernel }, fb) => {
                if observables.len() != kernel.channels() {
                    return Err(EngineError::DimensionMismatch {
                        expected: kernel.channels(),
                        found: observables.len(),
                    });
                }
                let feedback = match fb {
                    FeedbackSpec::None => None,
                    FeedbackSpec::Dense(ops) => {
                        if ops.len() != observables.len() {
                            return Err(EngineError::DimensionMismatch {
                                expected: observables.len(),
                                found: ops.len(),
                            });
                        }
                        Some(ops)
                    }
                    FeedbackSpec::Newton(_) => {
                        return Err(EngineError::Unsupported(
                            "Newtonian feedback needs lattice monitoring".into(),
                        ))
                    }
                };
                for f in observables.iter().chain(feedback.iter().flatten()) {
                    if f.len() != dim {
                        return Err(EngineError::DimensionMismatch {
                            expected: dim,
                            found: f.len(),
                        });
                    }
                }
                Source::Dense {
                    observables,
                    kernel,
                    feedback,
                }
            }
        };
        let (ga, gb, s) = match &source {
            Source::Lattice {
                couplings,
                masses,
                sites,
                ..
            } => {
                let ga = DMatrix::from_fn(dim, dim, |x, y| couplings.ga(masses, &sites[x], &sites[y]));
                let fb = couplings.feedback().is_some();
                let gb = fb.then(|| DMatrix::from_fn(dim, dim, |x, y| couplings.gb(masses, &sites[x], &sites[y])));
                let s = fb.then(|| DMatrix::from_fn(dim, dim, |x, y| couplings.s(masses, &sites[x], &sites[y])));
                (ga, gb, s)
            }
            Source::Dense {
                observables,
                kernel,
                feedback,
            } => {
                let a = channel_matrix(observables);
                let ga = a.transpose() * kernel.gamma() * &a;
                let (gb, s) = match feedback {
                    Some(ops) => {
                        let b = channel_matrix(ops);
                        (Some(b.transpose() * kernel.inverse() * &b), Some(a.transpose() * &b))
                    }
                    None => (None, None),
                };
                (ga, gb, s)
            }
        };
        let decay = DMatrix::from_fn(dim, dim, |x, y| {
            let intrinsic = 0.125 * (ga[(x, x)] + ga[(y, y)] - 2.0 * ga[(x, y)]);
            let back = gb
                .as_ref()
                .map_or(0.0, |g| 0.5 * (g[(x, x)] + g[(y, y)] - 2.0 * g[(x, y)]));
            intrinsic + back
        });
        Ok(Self {
            dim,
            source,
            ga,
            gb,
            s,
            decay,
            scheme: Scheme::default(),
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Replaces the unconditional decay matrix, e.g. by an equivalent local form.
    pub fn with_decay(mut self, decay: DMatrix<f64>) -> Result<Self, EngineError> {
        if decay.nrows() != self.dim || decay.ncols() != self.dim {
            return Err(EngineError::DimensionMismatch {
                expected: self.dim,
                found: decay.nrows(),
            });
        }
        self.decay = decay;
        Ok(self)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_feedback(&self) -> bool {
        self.s.is_some()
    }

    pub fn ga(&self) -> &DMatrix<f64> {
        &self.ga
    }

    pub fn gb(&self) -> Option<&DMatrix<f64>> {
        self.gb.as_ref()
    }

    pub fn s(&self) -> Option<&DMatrix<f64>> {
        self.s.as_ref()
    }

    /// Total unconditional decay rate of each `ρ_xy`.
    pub fn decay(&self) -> &DMatrix<f64> {
        &self.decay
    }

    pub fn couplings(&self) -> Option<&LatticeCouplings> {
        match &self.source {
            Source::Lattice { couplings, .. } => Some(couplings),
            Source::Dense { .. } => None,
        }
    }

    /// Number of signal channels (field sites, or dense observables).
    pub fn channels(&self) -> usize {
        match &self.source {
            Source::Lattice { couplings, .. } => couplings.grid().num_sites(),
            Source::Dense { observables, .. } => observables.len(),
        }
    }

    /// Rate of `ρ_xy` decay due to monitoring alone.
    pub fn intrinsic_rate(&self, x: usize, y: usize) -> f64 {
        0.125 * (self.ga[(x, x)] + self.ga[(y, y)] - 2.0 * self.ga[(x, y)])
    }

    /// Rate of `ρ_xy` decay due to feedback noise.
    pub fn backaction_rate(&self, x: usize, y: usize) -> f64 {
        self.gb
            .as_ref()
            .map_or(0.0, |g| 0.5 * (g[(x, x)] + g[(y, y)] - 2.0 * g[(x, y)]))
    }

    pub fn decoherence_rate(&self, x: usize, y: usize) -> f64 {
        self.decay[(x, y)]
    }

    /// The deterministic feedback Hamiltonian `½ S_xx`, i.e. `V_{G,σ}`.
    pub fn backaction_hamiltonian(&self) -> DiagonalField {
        match &self.s {
            Some(s) => DiagonalField::new((0..self.dim).map(|x| 0.5 * s[(x, x)]).collect()),
            None => DiagonalField::zeros(self.dim),
        }
    }

    /// The monitored observable of channel `c`.
    pub fn observable(&self, c: usize) -> DiagonalField {
        match &self.source {
            Source::Lattice {
                couplings,
                masses,
                sites,
                ..
            } => {
                let prof = couplings.observable_profile();
                let grid = couplings.grid();
                DiagonalField::new(
                    sites
                        .iter()
                        .map(|xs| {
                            xs.iter()
                                .zip(masses)
                                .map(|(&s, m)| m * prof[grid.difference(c, s)])
                                .sum()
                        })
                        .collect(),
                )
            }
            Source::Dense { observables, .. } => observables[c].clone(),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<NoiseField, EngineError> {
        match &self.source {
            Source::Lattice { couplings, .. } => couplings.kernel().sample_noise(dt, rng),
            Source::Dense { kernel, .. } => kernel.sample_noise(dt, rng),
        }
        .map_err(kernel_err)
    }

    pub fn increments(&self, noise: &NoiseField, dt: f64) -> Result<Increments, EngineError> {
        if noise.len() != self.channels() {
            return Err(EngineError::DimensionMismatch {
                expected: self.channels(),
                found: noise.len(),
            });
        }
        match &self.source {
            Source::Lattice {
                couplings,
                masses,
                sites,
                ..
            } => {
                let (u, v) = couplings.project(noise);
                let at = |field: &[f64], xs: &[usize]| -> f64 {
                    dt * xs.iter().zip(masses).map(|(&s, m)| m * field[s]).sum::<f64>()
                };
                let h = sites.iter().map(|xs| at(&u, xs)).collect();
                let b = v.map(|v| sites.iter().map(|xs| at(&v, xs)).collect());
                Ok(Increments { h, b })
            }
            Source::Dense {
                observables,
                kernel,
                feedback,
            } => {
                let eps = DVector::from_column_slice(noise.values());
                let w = kernel.gamma() * &eps;
                let h = (0..self.dim)
                    .map(|x| dt * observables.iter().zip(w.iter()).map(|(a, wv)| a[x] * wv).sum::<f64>())
                    .collect();
                let b = feedback.as_ref().map(|ops| {
                    (0..self.dim)
                        .map(|x| dt * ops.iter().zip(eps.iter()).map(|(bo, e)| bo[x] * e).sum::<f64>())
                        .collect()
                });
                Ok(Increments { h, b })
            }
        }
    }

    /// `⟨A_c⟩` for every channel.
    pub fn expected_signal(&self, populations: &[f64]) -> Vec<f64> {
        match &self.source {
            Source::Lattice {
                couplings,
                space,
                masses,
                sites,
            } => {
                let grid = space.grid();
                let dv = grid.cell_volume();
                let mut density = vec![0.0; grid.num_sites()];
                for (p, xs) in populations.iter().zip(sites) {
                    for (&s, m) in xs.iter().zip(masses) {
                        density[s] += p * m / dv;
                    }
                }
                couplings.expected_signal(&density)
            }
            Source::Dense { observables, .. } => observables
                .iter()
                .map(|a| weighted_mean(populations, a.values()))
                .collect(),
        }
    }

    /// Signal `⟨A⟩ + δϱ` and the noise that produced it.
    pub fn generate_signal<R: Rng + ?Sized>(
        &self,
        rho: &DensityMatrix,
        dt: f64,
        rng: &mut R,
    ) -> Result<(Vec<f64>, NoiseField), EngineError> {
        let noise = self.sample_noise(dt, rng)?;
        let mut signal = self.expected_signal(&populations(rho));
        signal.iter_mut().zip(noise.values()).for_each(|(s, e)| *s += e);
        Ok((signal, noise))
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<(), EngineError> {
        if rho.dim() != self.dim {
            return Err(EngineError::DimensionMismatch {
                expected: self.dim,
                found: rho.dim(),
            });
        }
        Ok(())
    }

    fn increment(
        &self,
        rho: &DensityMatrix,
        h: &Hamiltonian,
        noise: Option<&Increments>,
        dt: f64,
        feedback: bool,
    ) -> Result<DMatrix<C64>, EngineError> {
        self.check_state(rho)?;
        let d = self.dim;
        let r = rho.matrix();
        let p = populations(rho);
        let mut inc = h.commutator(r) * C64::new(dt, 0.0);
        let s = if feedback { self.s.as_ref() } else { None };
        let gb = if feedback { self.gb.as_ref() } else { None };
        let b = noise.and_then(|n| if feedback { n.b.as_deref() } else { None });
        let mean_h = noise.map_or(0.0, |n| weighted_mean(&p, &n.h));
        let milstein = noise
            .filter(|_| self.scheme == Scheme::Milstein)
            .map(|n| MilsteinTerms::new(&self.ga, gb, s, &p, &n.h, mean_h, dt));
        for y in 0..d {
            for x in 0..d {
                let decay = if feedback {
                    self.decay[(x, y)]
                } else {
                    self.intrinsic_rate(x, y)
                };
                let coherent = s.map_or(0.0, |s| 0.5 * (s[(x, x)] - s[(y, y)] + s[(y, x)] - s[(x, y)]));
                let mut rate = C64::new(-dt * decay, -dt * coherent);
                if let Some(n) = noise {
                    let nbar = C64::new(0.5 * (n.h[x] + n.h[y]) - mean_h, b.map_or(0.0, |b| -(b[x] - b[y])));
                    rate += nbar;
                    if let Some(m) = &milstein {
                        rate += m.correction(x, y, nbar);
                    }
                }
                inc[(x, y)] += rate * r[(x, y)];
            }
        }
        Ok(inc)
    }

    /// One Itô step of the monitored SME, without feedback.
    pub fn sme_step(
        &self,
        rho: &DensityMatrix,
        h: &Hamiltonian,
        noise: &Increments,
        dt: f64,
    ) -> Result<DensityMatrix, EngineError> {
        let inc = self.increment(rho, h, Some(noise), dt, false)?;
        apply_guarded(rho, inc)
    }

    /// One Itô step of the SME with the feedback already composed in.
    pub fn combined_step(
        &self,
        rho: &DensityMatrix,
        h: &Hamiltonian,
        noise: &Increments,
        dt: f64,
    ) -> Result<DensityMatrix, EngineError> {
        let inc = self.increment(rho, h, Some(noise), dt, true)?;
        apply_guarded(rho, inc)
    }

    /// One step of the unconditional master equation.
    pub fn me_step(&self, rho: &DensityMatrix, h: &Hamiltonian, dt: f64) -> Result<DensityMatrix, EngineError> {
        let inc = self.increment(rho, h, None, dt, true)?;
        apply_guarded(rho, inc)
    }

    /// Feedback potential `V = ∫ ϱ B`, built from the pre-step populations.
    pub fn feedback_potential(&self, populations: &[f64], noise: &Increments, dt: f64) -> DiagonalField {
        let Some(s) = &self.s else {
            return DiagonalField::zeros(self.dim);
        };
        let b = noise.b.as_deref();
        DiagonalField::new(
            (0..self.dim)
                .map(|x| {
                    let mean: f64 = populations.iter().enumerate().map(|(z, pz)| pz * s[(z, x)]).sum();
                    mean + b.map_or(0.0, |b| b[x] / dt)
                })
                .collect(),
        )
    }

    /// `feedback_step ∘ sme_step`, the literal measure-then-kick composition.
    pub fn composed_step(
        &self,
        rho: &DensityMatrix,
        h: &Hamiltonian,
        noise: &Increments,
        dt: f64,
    ) -> Result<DensityMatrix, EngineError> {
        let v = self.feedback_potential(&populations(rho), noise, dt);
        let free = self.sme_step(rho, h, noise, dt)?;
        Ok(feedback_step(&free, &v, dt))
    }

    /// Pure-state unravelling consistent with [`Generator::combined_step`].
    pub fn sse_step(
        &self,
        psi: &StateVector,
        h: &Hamiltonian,
        noise: &Increments,
        dt: f64,
    ) -> Result<StateVector, EngineError> {
        if psi.dim() != self.dim {
            return Err(EngineError::DimensionMismatch {
                expected: self.dim,
                found: psi.dim(),
            });
        }
        let v = psi.as_vector();
        let p = psi.probabilities();
        let (ca, cc) = centering(&self.ga, &p);
        let mean_h = weighted_mean(&p, &noise.h);
        let c: Option<Vec<f64>> = self.s.as_ref().map(|s| column_means(s, &p));
        let hv = h.apply(v);
        let mut inc = DVector::<C64>::zeros(self.dim);
        for x in 0..self.dim {
            let ga_hat = self.ga[(x, x)] - 2.0 * ca[x] + cc;
            let mut alpha = C64::new(-0.125 * ga_hat, 0.0);
            let mut beta = C64::new(0.5 * (noise.h[x] - mean_h), 0.0);
            if let (Some(s), Some(gb), Some(c)) = (&self.s, &self.gb, &c) {
                alpha += C64::new(-0.5 * gb[(x, x)], -0.5 * (s[(x, x)] + c[x]));
                if let Some(b) = &noise.b {
                    beta += C64::new(0.0, -b[x]);
                }
            }
            inc[x] = hv[x] * C64::new(0.0, -dt) + (alpha * dt + beta) * v[x];
        }
        let ratio = inc.iter().map(|z| z.norm()).sum::<f64>() / v.iter().map(|z| z.norm()).sum::<f64>();
        if !ratio.is_finite() {
            return Err(EngineError::NonFinite { step: 0 });
        }
        if ratio > STEP_GUARD {
            return Err(EngineError::StepGuard { step: 0, ratio });
        }
        let next = v + inc;
        let norm = next.norm();
        if norm < NORM_FLOOR {
            return Err(EngineError::NormCollapse { step: 0, norm });
        }
        Ok(StateVector::new(next.unscale(norm)))
    }
}

fn kernel_err(e: KernelError) -> EngineError {
    EngineError::Unsupported(e.to_string())
}

fn channel_matrix(fields: &[DiagonalField]) -> DMatrix<f64> {
    let n = fields.len();
    let d = fields.first().map_or(0, |f| f.len());
    DMatrix::from_fn(n, d, |nu, x| fields[nu][x])
}

/// `ca = G p` and `cc = pᵀ G p` for a symmetric `G`.
fn centering(g: &DMatrix<f64>, p: &[f64]) -> (Vec<f64>, f64) {
    let ca = column_means(g, p);
    let cc = weighted_mean(p, &ca);
    (ca, cc)
}

/// `c_x = Σ_z p_z M_zx`.
fn column_means(m: &DMatrix<f64>, p: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|x| m.column(x).iter().zip(p).map(|(v, pz)| v * pz).sum())
        .collect()
}

struct MilsteinTerms<'a> {
    ga: &'a DMatrix<f64>,
    gb: Option<&'a DMatrix<f64>>,
    s: Option<&'a DMatrix<f64>>,
    ca: Vec<f64>,
    cc: f64,
    c: Vec<f64>,
    var_shift: f64,
    dt: f64,
}

impl<'a> MilsteinTerms<'a> {
    fn new(
        ga: &'a DMatrix<f64>,
        gb: Option<&'a DMatrix<f64>>,
        s: Option<&'a DMatrix<f64>>,
        p: &[f64],
        h: &[f64],
        mean_h: f64,
        dt: f64,
    ) -> Self {
        let (ca, cc) = centering(ga, p);
        let c = s.map_or_else(Vec::new, |s| column_means(s, p));
        let var: f64 = p.iter().zip(h).map(|(pz, hz)| pz * (hz - mean_h).powi(2)).sum();
        let expected_var: f64 = p
            .iter()
            .enumerate()
            .map(|(z, pz)| pz * (ga[(z, z)] - 2.0 * ca[z] + cc))
            .sum::<f64>()
            * dt;
        Self {
            ga,
            gb,
            s,
            ca,
            cc,
            c,
            var_shift: var - expected_var,
            dt,
        }
    }

    fn ga_hat(&self, x: usize, y: usize) -> f64 {
        self.ga[(x, y)] - self.ca[x] - self.ca[y] + self.cc
    }

    fn correction(&self, x: usize, y: usize, nbar: C64) -> C64 {
        let mut expected = C64::new(
            0.25 * (self.ga_hat(x, x) + self.ga_hat(y, y) + 2.0 * self.ga_hat(x, y)),
            0.0,
        );
        if let (Some(gb), Some(s)) = (self.gb, self.s) {
            let lb = gb[(x, x)] + gb[(y, y)] - 2.0 * gb[(x, y)];
            let hb = |a: usize, b: usize| s[(a, b)] - self.c[b];
            let cross = hb(x, x) + hb(y, x) - hb(x, y) - hb(y, y);
            expected += C64::new(-lb, -cross);
        }
        0.5 * (nbar * nbar - expected * self.dt - self.var_shift)
    }
}

fn apply_guarded(rho: &DensityMatrix, inc: DMatrix<C64>) -> Result<DensityMatrix, EngineError> {
    let norm = rho.l1_norm();
    let ratio = inc.iter().map(|z| z.norm()).sum::<f64>() / norm;
    if !ratio.is_finite() {
        return Err(EngineError::NonFinite { step: 0 });
    }
    if ratio > STEP_GUARD {
        return Err(EngineError::StepGuard { step: 0, ratio });
    }
    Ok(DensityMatrix::new(rho.matrix() + inc))
}

/// `Σ_x D(x) ρ_xx`.
pub fn expectation(rho: &DensityMatrix, d: &DiagonalField) -> Result<f64, EngineError> {
    if d.len() != rho.dim() {
        return Err(EngineError::DimensionMismatch {
            expected: rho.dim(),
            found: d.len(),
        });
    }
    let trace = rho.trace();
    if (trace.re - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-8 {
        return Err(EngineError::NonNormalized { trace: trace.re });
    }
    Ok(weighted_mean(&rho.populations(), d.values()))
}

/// `{D − ⟨D⟩, ρ}` with `⟨D⟩ = Tr(Dρ)/Tr ρ`.
pub fn hcal_apply(d: &DiagonalField, rho: &DensityMatrix) -> Result<DMatrix<C64>, EngineError> {
    let n = rho.dim();
    if d.len() != n {
        return Err(EngineError::DimensionMismatch {
            expected: n,
            found: d.len(),
        });
    }
    let p = rho.populations();
    let trace: f64 = p.iter().sum();
    let mean = if trace != 0.0 {
        weighted_mean(&p, d.values()) / trace
    } else {
        0.0
    };
    Ok(DMatrix::from_fn(n, n, |x, y| {
        rho.matrix()[(x, y)] * (d[x] + d[y] - 2.0 * mean)
    }))
}

/// Exact conjugation `e^{−iVdt} ρ e^{iVdt}` by a diagonal potential.
pub fn feedback_step(rho: &DensityMatrix, v: &DiagonalField, dt: f64) -> DensityMatrix {
    let n = rho.dim();
    DensityMatrix::new(DMatrix::from_fn(n, n, |x, y| {
        rho.matrix()[(x, y)] * C64::from_polar(1.0, -(v[x] - v[y]) * dt)
    }))
}

/// Largest entry of `Σ_ν (−(i/2)[B_ν,{A_ν,ρ}] + (i/4)[{A_ν,B_ν},ρ])` for dense operators.
pub fn hfb_identity_defect(a: &[DMatrix<C64>], b: &[DMatrix<C64>], rho: &DMatrix<C64>) -> f64 {
    let n = rho.nrows();
    let mut diff = DMatrix::<C64>::zeros(n, n);
    let half_i = C64::new(0.0, 0.5);
    let quarter_i = C64::new(0.0, 0.25);
    for (an, bn) in a.iter().zip(b) {
        let anti = an * rho + rho * an;
        let lhs = (bn * &anti - &anti * bn) * (-half_i);
        let ab = an * bn + bn * an;
        let rhs = (&ab * rho - rho * &ab) * (-quarter_i);
        diff += lhs - rhs;
    }
    diff.camax()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HfbCheck {
    pub defect: f64,
    pub holds: bool,
}

/// Checks that the feedback cross term of a family of diagonal pairs is
/// Hamiltonian, `−(i/2)Σ[B,{A,ρ}] = −(i/4)Σ[{A,B},ρ]`.
pub fn hfb_identity_check(a: &[DiagonalField], b: &[DiagonalField], rho: &DensityMatrix) -> HfbCheck {
    let da: Vec<_> = a.iter().map(DiagonalField::to_dense).collect();
    let db: Vec<_> = b.iter().map(DiagonalField::to_dense).collect();
    let defect = hfb_identity_defect(&da, &db, rho.matrix());
    let scale = a
        .iter()
        .chain(b)
        .map(|f| f.values().iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(1.0f64, f64::max);
    HfbCheck {
        defect,
        holds: defect < 1e-12 * scale * scale,
    }
}
