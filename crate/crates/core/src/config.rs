//! Run configuration: a TOML document with `grid`, `particles`, `model`,
//! `integration`, `output` and `analysis` sections.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::engine::trajectory::{QuantumState, RecordSpec};
use crate::engine::Scheme;
use crate::error::SimError;
use crate::gravity::{build_model, Mode, Model, ModelSpec};
use crate::lattice::{position_field, ConfigSpace, LatticeGrid, Particle, ParticleSet, StateVector, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    /// Defaults to unit spacing on every axis.
    #[serde(default)]
    pub spacing: Option<Vec<f64>>,
    /// Number of leading axes the particles move along; defaults to all.
    #[serde(default)]
    pub particle_axes: Option<usize>,
}

/// Single-particle initial wavefunction. Coordinates are in length units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialState {
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        momentum: Option<Vec<f64>>,
    },
    /// `(|A⟩ + e^{iφ}|B⟩)/√2` with Gaussian (or, for zero width, single-site) branches.
    Cat {
        centers: [Vec<f64>; 2],
        #[serde(default)]
        width: f64,
        #[serde(default)]
        phase: f64,
    },
    Site {
        site: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub mass: f64,
    #[serde(default = "yes")]
    pub kinetic: bool,
    /// External potential, one value per particle-grid site.
    #[serde(default)]
    pub external: Option<Vec<f64>>,
    pub initial: InitialState,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub scheme: Scheme,
}

/// A pair of configurations given as particle-grid site coordinates,
/// particle by particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherencePair {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "one")]
    pub record_every: usize,
    /// Coherences to record. When empty and the only particle starts in a
    /// cat state, the pair of cat branch sites is recorded.
    #[serde(default)]
    pub offdiagonal: Vec<CoherencePair>,
    /// Field-grid coordinates of recorded signal samples.
    #[serde(default)]
    pub signal_sites: Vec<Vec<usize>>,
    #[serde(default)]
    pub snapshot_every: usize,
    /// Write one CSV per trajectory in addition to the ensemble mean.
    #[serde(default = "yes")]
    pub per_trajectory: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            record_every: 1,
            offdiagonal: Vec::new(),
            signal_sites: Vec::new(),
            snapshot_every: 0,
            per_trajectory: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub axis: usize,
    /// Separations in sites along `axis`; defaults to `0..=L/4`.
    #[serde(default)]
    pub separations: Option<Vec<usize>>,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<f64>,
    /// Separation for the κ-scan in sites; defaults to `L/4`.
    #[serde(default)]
    pub kappa_separation: Option<usize>,
}

fn default_kappas() -> Vec<f64> {
    vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            axis: 0,
            separations: None,
            kappas: default_kappas(),
            kappa_separation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub particles: Vec<ParticleConfig>,
    pub model: ModelSpec,
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// Everything needed to start trajectories.
pub struct Resolved {
    pub space: ConfigSpace,
    pub model: Model,
    pub initial: QuantumState,
    pub record: RecordSpec,
    /// Names of the recorded observables, in record order.
    pub observable_names: Vec<String>,
    /// Names of the recorded coherences.
    pub coherence_names: Vec<String>,
    pub signal_names: Vec<String>,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn grid(&self) -> Result<LatticeGrid, SimError> {
        let n = self.grid.dims.len();
        let spacing = self.grid.spacing.clone().unwrap_or_else(|| vec![1.0; n]);
        LatticeGrid::new(self.grid.dims.clone(), spacing).map_err(|e| invalid(e.to_string()))
    }

    pub fn particle_axes(&self) -> usize {
        self.grid.particle_axes.unwrap_or(self.grid.dims.len())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let grid = self.grid()?;
        let axes = self.particle_axes();
        if axes == 0 || axes > grid.ndim() {
            return Err(invalid(format!("particle_axes must lie in 1..={}", grid.ndim())));
        }
        if self.particles.is_empty() {
            return Err(invalid("at least one particle is required"));
        }
        for (n, p) in self.particles.iter().enumerate() {
            if !(p.mass.is_finite() && p.mass > 0.0) {
                return Err(invalid(format!("particle {n}: mass must be positive")));
            }
            validate_initial(&p.initial, &grid, axes).map_err(|m| invalid(format!("particle {n}: {m}")))?;
        }
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        let int = &self.integration;
        if !(int.dt.is_finite() && int.dt > 0.0) {
            return Err(invalid("integration.dt must be positive"));
        }
        if int.steps == 0 {
            return Err(invalid("integration.steps must be at least 1"));
        }
        if int.ensemble == 0 {
            return Err(invalid("integration.ensemble must be at least 1"));
        }
        if self.output.record_every == 0 {
            return Err(invalid("output.record_every must be at least 1"));
        }
        let per_config = self.particles.len() * axes;
        for pair in &self.output.offdiagonal {
            for v in [&pair.x, &pair.y] {
                if v.len() != per_config {
                    return Err(invalid(format!(
                        "coherence coordinates need {per_config} entries (particles × axes)"
                    )));
                }
                if v.iter().enumerate().any(|(i, &c)| c >= grid.dims()[i % axes]) {
                    return Err(invalid("coherence coordinate outside the grid"));
                }
            }
        }
        for s in &self.output.signal_sites {
            if s.len() != grid.ndim() || s.iter().zip(grid.dims()).any(|(c, d)| c >= d) {
                return Err(invalid("signal site outside the grid"));
            }
        }
        if self.analysis.axis >= grid.ndim() {
            return Err(invalid("analysis.axis out of range"));
        }
        if self.analysis.kappas.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(invalid("analysis.kappas must be positive"));
        }
        Ok(())
    }

    pub fn separations(&self) -> Vec<usize> {
        let len = self.grid.dims.get(self.analysis.axis).copied().unwrap_or(1);
        self.analysis
            .separations
            .clone()
            .unwrap_or_else(|| (0..=len / 4).collect())
    }

    pub fn particle_set(&self) -> Result<ParticleSet, SimError> {
        ParticleSet::new(
            self.particles
                .iter()
                .map(|p| Particle {
                    mass: p.mass,
                    kinetic: p.kinetic,
                    external: p.external.clone(),
                })
                .collect(),
        )
        .map_err(|e| invalid(e.to_string()))
    }

    pub fn space(&self) -> Result<ConfigSpace, SimError> {
        ConfigSpace::new(self.grid()?, self.particle_axes(), self.particle_set()?).map_err(|e| invalid(e.to_string()))
    }

    /// Builds the model, initial state and record layout.
    pub fn resolve(&self) -> Result<Resolved, SimError> {
        self.validate()?;
        let space = self.space()?;
        let model = build_model(&self.model, &space).map_err(|e| invalid(e.to_string()))?;
        let pg = space.particle_grid();
        let axes = space.particle_axes();
        let factors: Vec<DVector<C64>> = self
            .particles
            .iter()
            .map(|p| single_particle_state(&p.initial, &pg))
            .collect();
        let psi = StateVector::normalized(product_state(&factors)).map_err(|e| invalid(e.to_string()))?;
        let initial = if self.integration.mode == Mode::Unravelled || model.needs_pure_state(self.integration.mode) {
            QuantumState::Pure(psi)
        } else {
            QuantumState::Mixed(psi.projector())
        };
        let encode = |coords: &[usize]| -> usize {
            let sites: Vec<usize> = coords
                .chunks(axes)
                .map(|c| pg.site(&c.iter().map(|&v| v as i64).collect::<Vec<_>>()))
                .collect();
            space.encode(&sites)
        };
        let mut pairs: Vec<(Vec<usize>, Vec<usize>)> = self
            .output
            .offdiagonal
            .iter()
            .map(|p| (p.x.clone(), p.y.clone()))
            .collect();
        if pairs.is_empty() && self.particles.len() == 1 {
            if let InitialState::Cat { centers, .. } = &self.particles[0].initial {
                pairs.push((nearest_site(&centers[0], &pg), nearest_site(&centers[1], &pg)));
            }
        }
        let offdiagonal = pairs.iter().map(|(x, y)| (encode(x), encode(y))).collect();
        let coherence_names = pairs
            .iter()
            .map(|(x, y)| format!("rho[{}|{}]", join(x), join(y)))
            .collect();
        let mut observables = Vec::new();
        let mut observable_names = Vec::new();
        for n in 0..space.num_particles() {
            for a in 0..axes {
                observables.push(position_field(&space, n, a));
                observable_names.push(format!("x{n}_{a}"));
            }
        }
        let grid = space.grid();
        let signal_sites: Vec<usize> = self
            .output
            .signal_sites
            .iter()
            .map(|c| grid.site(&c.iter().map(|&v| v as i64).collect::<Vec<_>>()))
            .collect();
        if !signal_sites.is_empty() && !model.is_stochastic(self.integration.mode) {
            return Err(invalid("signal samples need a stochastic integration mode"));
        }
        let signal_names = self
            .output
            .signal_sites
            .iter()
            .map(|c| format!("signal[{}]", join(c)))
            .collect();
        Ok(Resolved {
            record: RecordSpec {
                record_every: self.output.record_every,
                offdiagonal,
                signal_sites,
                snapshot_every: self.output.snapshot_every,
                observables,
            },
            space,
            model,
            initial,
            observable_names,
            coherence_names,
            signal_names,
        })
    }

    /// Single-particle branch states of the first cat-state particle, other
    /// particles in their own initial states: `(A+B)/√2, (A−B)/√2, A, B`.
    pub fn cat_branches(&self, space: &ConfigSpace) -> Result<[StateVector; 4], SimError> {
        let pg = space.particle_grid();
        let (idx, centers, width) = self
            .particles
            .iter()
            .enumerate()
            .find_map(|(n, p)| match &p.initial {
                InitialState::Cat { centers, width, .. } => Some((n, centers.clone(), *width)),
                _ => None,
            })
            .ok_or_else(|| invalid("the linearity witness needs a particle in a cat state"))?;
        let branch = |c: &Vec<f64>| gaussian(&pg, c, width, None);
        let a = branch(&centers[0]);
        let b = branch(&centers[1]);
        let plus = (&a + &b).unscale(2f64.sqrt());
        let minus = (&a - &b).unscale(2f64.sqrt());
        let make = |v: DVector<C64>| -> Result<StateVector, SimError> {
            let mut factors: Vec<DVector<C64>> = self
                .particles
                .iter()
                .map(|p| single_particle_state(&p.initial, &pg))
                .collect();
            factors[idx] = v;
            StateVector::normalized(product_state(&factors)).map_err(|e| invalid(e.to_string()))
        };
        Ok([make(plus)?, make(minus)?, make(a)?, make(b)?])
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

fn validate_initial(init: &InitialState, grid: &LatticeGrid, axes: usize) -> Result<(), String> {
    let coords_ok = |c: &[f64]| c.len() == axes && c.iter().all(|v| v.is_finite());
    match init {
        InitialState::Gaussian {
            center,
            width,
            momentum,
        } => {
            if !coords_ok(center) {
                return Err(format!("gaussian center needs {axes} finite coordinates"));
            }
            if !(width.is_finite() && *width > 0.0) {
                return Err("gaussian width must be positive".into());
            }
            if let Some(k) = momentum {
                if !coords_ok(k) {
                    return Err(format!("momentum needs {axes} finite components"));
                }
            }
        }
        InitialState::Cat { centers, width, phase } => {
            if !centers.iter().all(|c| coords_ok(c)) {
                return Err(format!("cat centers need {axes} finite coordinates each"));
            }
            if !(width.is_finite() && *width >= 0.0) || !phase.is_finite() {
                return Err("cat width must be non-negative and the phase finite".into());
            }
        }
        InitialState::Site { site } => {
            if site.len() != axes || site.iter().zip(grid.dims()).any(|(c, d)| c >= d) {
                return Err("site coordinates outside the grid".into());
            }
        }
    }
    Ok(())
}

fn nearest_site(center: &[f64], pg: &LatticeGrid) -> Vec<usize> {
    center
        .iter()
        .enumerate()
        .map(|(a, c)| {
            let n = pg.dims()[a] as i64;
            ((c / pg.spacing()[a]).round() as i64).rem_euclid(n) as usize
        })
        .collect()
}

/// Periodic Gaussian packet; zero width gives the nearest site.
fn gaussian(pg: &LatticeGrid, center: &[f64], width: f64, momentum: Option<&[f64]>) -> DVector<C64> {
    let m = pg.num_sites();
    if width == 0.0 {
        let c: Vec<i64> = nearest_site(center, pg).iter().map(|&v| v as i64).collect();
        let mut v = DVector::from_element(m, C64::new(0.0, 0.0));
        v[pg.site(&c)] = C64::new(1.0, 0.0);
        return v;
    }
    DVector::from_fn(m, |s, _| {
        let c = pg.coords(s);
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for a in 0..pg.ndim() {
            let x = c[a] as f64 * pg.spacing()[a];
            let l = pg.extent(a);
            let mut d = x - center[a];
            d -= l * (d / l).round();
            r2 += d * d;
            if let Some(k) = momentum {
                phase += k[a] * d;
            }
        }
        C64::from_polar((-r2 / (4.0 * width * width)).exp(), phase)
    })
}

fn single_particle_state(init: &InitialState, pg: &LatticeGrid) -> DVector<C64> {
    let v = match init {
        InitialState::Gaussian {
            center,
            width,
            momentum,
        } => gaussian(pg, center, *width, momentum.as_deref()),
        InitialState::Cat { centers, width, phase } => {
            gaussian(pg, &centers[0], *width, None)
                + gaussian(pg, &centers[1], *width, None) * C64::from_polar(1.0, *phase)
        }
        InitialState::Site { site } => {
            let mut v = DVector::from_element(pg.num_sites(), C64::new(0.0, 0.0));
            v[pg.site(&site.iter().map(|&c| c as i64).collect::<Vec<_>>())] = C64::new(1.0, 0.0);
            v
        }
    };
    let n = v.norm();
    if n > 0.0 {
        v.unscale(n)
    } else {
        v
    }
}

/// Tensor product with particle 0 most significant.
fn product_state(factors: &[DVector<C64>]) -> DVector<C64> {
    factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[grid]
dims = [12, 4, 4]
particle_axes = 1

[[particles]]
mass = 1.0
initial = { kind = "cat", centers = [[2.0], [8.0]] }

[model]
kind = "csl"
sigma = 1.0
gamma = 1.0
g = 0.5

[integration]
dt = 1e-3
steps = 10
"#;

    #[test]
    fn parses_and_resolves() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        assert_eq!(c.integration.ensemble, 1);
        assert_eq!(c.integration.mode, Mode::Conditional);
        let r = c.resolve().unwrap();
        assert_eq!(r.space.dim(), 12);
        assert_eq!(r.record.offdiagonal, vec![(2, 8)]);
        assert!((r.initial.element(2, 8).re - 0.5).abs() < 1e-15);
        assert_eq!(r.observable_names, vec!["x0_0"]);
        assert_eq!(c.separations(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("dt = 1e-3", "dt = -1e-3"),
            ("mass = 1.0", "mass = 0.0"),
            ("sigma = 1.0", "sigma = 0.0"),
            ("steps = 10", "steps = 10\nensemble = 0"),
            ("gamma = 1.0", "gamma = 1.0\nbogus = 2"),
            ("centers = [[2.0], [8.0]]", "centers = [[2.0, 1.0], [8.0]]"),
        ] {
            let text = BASIC.replace(from, to);
            assert!(matches!(RunConfig::from_toml(&text), Err(SimError::Config(_))), "{to}");
        }
    }

    #[test]
    fn gaussian_product_state_is_normalized() {
        let text = BASIC
            .replace(
                "initial = { kind = \"cat\", centers = [[2.0], [8.0]] }",
                "initial = { kind = \"gaussian\", center = [3.0], width = 1.5, momentum = [0.4] }",
            )
            .replace(
                "[model]",
                "[[particles]]\nmass = 2.0\ninitial = { kind = \"site\", site = [7] }\n\n[model]",
            );
        let c = RunConfig::from_toml(&text).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.space.dim(), 144);
        assert!((r.initial.trace() - 1.0).abs() < 1e-14);
        let p = r.initial.populations();
        let on_seven: f64 = (0..12).map(|a| p[a * 12 + 7]).sum();
        assert!((on_seven - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cat_branches_share_mean_state() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        let space = c.space().unwrap();
        let [plus, minus, a, b] = c.cat_branches(&space).unwrap();
        let m1 = (plus.projector().matrix() + minus.projector().matrix()) * C64::new(0.5, 0.0);
        let m2 = (a.projector().matrix() + b.projector().matrix()) * C64::new(0.5, 0.0);
        assert!((m1 - m2).camax() < 1e-15);
    }
}
