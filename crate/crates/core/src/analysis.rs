//! Decoherence rates, pair-potential curves, κ-scans, decay fits and the
//! linearity witness.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::engine::channels::LatticeCouplings;
use crate::engine::trajectory::{evolve, trajectory_rng, Propagator, QuantumState, TrajectoryRecord};
use crate::error::{EngineError, SimError};
use crate::gravity::{monitoring_couplings, Model, ModelKind, ModelSpec};
use crate::lattice::{DensityMatrix, LatticeGrid, C64};
use rayon::prelude::*;

/// Decay rates of one coherence `ρ_xy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub intrinsic: f64,
    pub backaction: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// Separation in length units.
    pub d: f64,
    #[serde(flatten)]
    pub rate: RateEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceProfile {
    pub rows: Vec<RateRow>,
}

/// Decay rate of `ρ_xy` under the unconditional generator of `model`.
pub fn closed_form_rate(model: &Model, x: usize, y: usize) -> Result<RateEntry, SimError> {
    let g = model
        .generator()
        .ok_or_else(|| SimError::Analysis(format!("{:?} has no decoherence generator", model.spec().kind)))?;
    if x >= g.dim() || y >= g.dim() {
        return Err(SimError::Analysis(format!(
            "configuration index out of range 0..{}",
            g.dim()
        )));
    }
    Ok(RateEntry {
        intrinsic: g.intrinsic_rate(x, y).max(0.0),
        backaction: g.backaction_rate(x, y).max(0.0),
        total: g.decoherence_rate(x, y).max(0.0),
    })
}

/// Same rate from lattice couplings, for configurations given as field sites.
pub fn lattice_rate(couplings: &LatticeCouplings, masses: &[f64], xs: &[usize], ys: &[usize]) -> RateEntry {
    let intrinsic = couplings.intrinsic_rate(masses, xs, ys).max(0.0);
    let backaction = if couplings.feedback().is_some() {
        couplings.backaction_rate(masses, xs, ys).max(0.0)
    } else {
        0.0
    };
    RateEntry {
        intrinsic,
        backaction,
        total: intrinsic + backaction,
    }
}

fn site_along(grid: &LatticeGrid, axis: usize, steps: usize) -> Result<usize, SimError> {
    if axis >= grid.ndim() {
        return Err(SimError::Analysis(format!(
            "axis {axis} out of range for a {}-axis grid",
            grid.ndim()
        )));
    }
    let mut c = [0i64; 3];
    c[axis] = steps as i64;
    Ok(grid.site(&c[..grid.ndim()]))
}

/// Single-particle rates for a particle of `mass` displaced by `separations`
/// sites along `axis`.
pub fn rate_profile(
    spec: &ModelSpec,
    grid: &LatticeGrid,
    mass: f64,
    axis: usize,
    separations: &[usize],
) -> Result<DecoherenceProfile, SimError> {
    let couplings = monitoring_couplings(spec, grid)?;
    let rows = separations
        .iter()
        .map(|&s| {
            let y = site_along(grid, axis, s)?;
            Ok(RateRow {
                d: s as f64 * grid.spacing()[axis],
                rate: lattice_rate(&couplings, &[mass], &[0], &[y]),
            })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(DecoherenceProfile { rows })
}

/// Continuum slope `dΓ_ba/dd` of the CSL back-action rate, as derived from the
/// feedback composition and as given by the explicit single-particle formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackactionSlope {
    /// `2π G² m² / γ`.
    pub derived: f64,
    /// `π G² m² / (2γ)`.
    pub stated: f64,
    pub ratio: f64,
}

pub fn csl_backaction_slope(g: f64, mass: f64, gamma: f64) -> BackactionSlope {
    let derived = 2.0 * PI * g * g * mass * mass / gamma;
    let stated = 0.5 * PI * g * g * mass * mass / gamma;
    BackactionSlope {
        derived,
        stated,
        ratio: derived / stated,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaScan {
    /// `(κ, total rate)` rows.
    pub rows: Vec<(f64, f64)>,
    pub argmin: f64,
}

/// Total DP rate at separation `separation` sites along `axis` for each κ.
pub fn kappa_scan(
    template: &ModelSpec,
    grid: &LatticeGrid,
    mass: f64,
    axis: usize,
    separation: usize,
    kappas: &[f64],
) -> Result<KappaScan, SimError> {
    if template.kind != ModelKind::Dp {
        return Err(SimError::Analysis("the κ-scan needs a DP model".into()));
    }
    if kappas.is_empty() {
        return Err(SimError::Analysis("empty κ grid".into()));
    }
    let y = site_along(grid, axis, separation)?;
    let mut rows = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let spec = ModelSpec {
            kappa,
            ..template.clone()
        };
        let couplings = monitoring_couplings(&spec, grid)?;
        rows.push((kappa, lattice_rate(&couplings, &[mass], &[0], &[y]).total));
    }
    let argmin = rows
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|r| r.0)
        .expect("non-empty");
    Ok(KappaScan { rows, argmin })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPotentialRow {
    pub d: f64,
    /// `V(d) − V(L/2)` from the back-action Hamiltonian.
    pub v_raw: f64,
    /// `v_raw` with the periodic images replaced by the free-space tail.
    pub v_corrected: f64,
    /// `v_corrected · d / (−G m₁ m₂)`.
    pub ratio: f64,
}

/// Periodic Coulomb Green's function `Σ_images 1/|r|` of a rectangular box
/// (with neutralising background, up to a constant), by Ewald summation.
pub fn periodic_coulomb(extent: [f64; 3], r: [f64; 3]) -> f64 {
    let lmin = extent.iter().cloned().fold(f64::INFINITY, f64::min);
    let alpha = 5.0 / lmin;
    let volume = extent[0] * extent[1] * extent[2];
    let reach: Vec<i64> = extent.iter().map(|l| (6.0 / (alpha * l) + 1.0).ceil() as i64).collect();
    let mut real = 0.0;
    for i in -reach[0]..=reach[0] {
        for j in -reach[1]..=reach[1] {
            for k in -reach[2]..=reach[2] {
                let v = [
                    r[0] + i as f64 * extent[0],
                    r[1] + j as f64 * extent[1],
                    r[2] + k as f64 * extent[2],
                ];
                let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if d > 0.0 {
                    real += libm::erfc(alpha * d) / d;
                }
            }
        }
    }
    let kmax = 2.0 * alpha * 36f64.sqrt();
    let modes: Vec<i64> = extent.iter().map(|l| (kmax * l / (2.0 * PI)).ceil() as i64).collect();
    let mut recip = 0.0;
    for i in -modes[0]..=modes[0] {
        for j in -modes[1]..=modes[1] {
            for k in -modes[2]..=modes[2] {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                let kv = [
                    2.0 * PI * i as f64 / extent[0],
                    2.0 * PI * j as f64 / extent[1],
                    2.0 * PI * k as f64 / extent[2],
                ];
                let k2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                recip += (-k2 / (4.0 * alpha * alpha)).exp() / k2 * (kv[0] * r[0] + kv[1] * r[1] + kv[2] * r[2]).cos();
            }
        }
    }
    real + 4.0 * PI / volume * recip - PI / (alpha * alpha * volume)
}

/// Inter-particle part of the back-action Hamiltonian for two particles
/// separated by `separations` sites along `axis`.
pub fn pair_potential_curve(
    spec: &ModelSpec,
    grid: &LatticeGrid,
    masses: [f64; 2],
    axis: usize,
    separations: &[usize],
) -> Result<Vec<PairPotentialRow>, SimError> {
    if grid.ndim() != 3 {
        return Err(SimError::Analysis("the pair potential needs a three-axis grid".into()));
    }
    let couplings = monitoring_couplings(spec, grid)?;
    if couplings.feedback().is_none() {
        return Err(SimError::Analysis(
            "the pair potential needs gravitational feedback".into(),
        ));
    }
    let far_steps = grid.dims()[axis] / 2;
    let h = grid.spacing()[axis];
    let mut extent = [1.0; 3];
    for (a, e) in extent.iter_mut().enumerate() {
        *e = grid.extent(a);
    }
    let at = |steps: usize| -> Result<(f64, f64), SimError> {
        let y = site_along(grid, axis, steps)?;
        let mut r = [0.0; 3];
        r[axis] = steps as f64 * h;
        Ok((
            couplings.backaction_potential(&masses, &[0, y]),
            periodic_coulomb(extent, r),
        ))
    };
    let (v_far, e_far) = at(far_steps)?;
    let gm = spec.g * masses[0] * masses[1];
    separations
        .iter()
        .map(|&s| {
            if s == 0 || s > far_steps {
                return Err(SimError::Analysis(format!(
                    "pair separations must lie in 1..={far_steps} sites"
                )));
            }
            let d = s as f64 * h;
            let (v, e) = at(s)?;
            let v_raw = v - v_far;
            let v_corrected = v_raw + gm * ((e - e_far) - 1.0 / d);
            Ok(PairPotentialRow {
                d,
                v_raw,
                v_corrected,
                ratio: v_corrected * d / -gm,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub stderr: f64,
    pub amplitude: f64,
    pub points: usize,
}

/// Least-squares decay rate of `|ρ_xy(t)|` from `log|ρ_xy| = log A − Γ t`.
pub fn fit_offdiagonal_decay(times: &[f64], magnitudes: &[f64], floor: f64) -> Result<DecayFit, SimError> {
    if times.len() != magnitudes.len() {
        return Err(SimError::Analysis("times and magnitudes differ in length".into()));
    }
    if times.len() < 3 {
        return Err(SimError::Analysis("need at least three samples to fit".into()));
    }
    if let Some(v) = magnitudes.iter().find(|v| !(v.is_finite() && **v > floor)) {
        return Err(SimError::Analysis(format!(
            "coherence {v:.3e} is below the noise floor {floor:.1e}"
        )));
    }
    let n = times.len() as f64;
    let ys: Vec<f64> = magnitudes.iter().map(|v| v.ln()).collect();
    let tm = times.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SimError::Analysis("all samples at the same time".into()));
    }
    let sxy: f64 = times.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let resid: f64 = times
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - intercept - slope * t).powi(2))
        .sum();
    let stderr = (resid / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit {
        rate: -slope,
        stderr,
        amplitude: intercept.exp(),
        points: times.len(),
    })
}

/// Ensemble mean of the recorded coherence `k` at every recorded time.
pub fn mean_offdiagonal(records: &[TrajectoryRecord], k: usize) -> Vec<C64> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let n = records.len() as f64;
    (0..first.times.len())
        .map(|i| records.iter().map(|r| r.offdiagonal[i][k]).sum::<C64>() / n)
        .collect()
}

/// Mean state after `steps` when trajectory `i` starts from `members[i % len]`.
pub fn evolve_ensemble(
    propagator: &dyn Propagator,
    members: &[QuantumState],
    dt: f64,
    steps: usize,
    seed: u64,
    trajectories: usize,
) -> Result<DensityMatrix, EngineError> {
    if members.is_empty() || trajectories == 0 {
        return Err(EngineError::Unsupported("empty ensemble".into()));
    }
    let finals: Vec<DensityMatrix> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            evolve(propagator, &members[i % members.len()], dt, steps, &mut rng).map(|s| s.density())
        })
        .collect::<Result<_, _>>()?;
    let dim = propagator.dim();
    let mut acc = DMatrix::<C64>::zeros(dim, dim);
    for f in &finals {
        acc += f.matrix();
    }
    Ok(DensityMatrix::new(acc / C64::new(trajectories as f64, 0.0)))
}

fn ensemble_mean(members: &[QuantumState]) -> DensityMatrix {
    let dim = members[0].dim();
    let mut acc = DMatrix::<C64>::zeros(dim, dim);
    for m in members {
        acc += m.density().matrix();
    }
    DensityMatrix::new(acc / C64::new(members.len() as f64, 0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub trace_distance: f64,
    /// Distance below which the two evolutions count as identical.
    pub tolerance: f64,
    pub trajectories: usize,
    pub stochastic: bool,
    pub linear: bool,
}

/// Evolves two equal-weight ensembles with the same mean state and compares
/// the evolved means.
#[allow(clippy::too_many_arguments)]
pub fn linearity_witness(
    propagator: &dyn Propagator,
    a: &[QuantumState],
    b: &[QuantumState],
    dt: f64,
    steps: usize,
    seed: u64,
    trajectories: usize,
    stochastic: bool,
) -> Result<LinearityReport, SimError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::Analysis("both ensembles need members".into()));
    }
    let initial = ensemble_mean(a).trace_distance(&ensemble_mean(b));
    if initial > 1e-10 {
        return Err(SimError::Analysis(format!(
            "ensembles differ initially (trace distance {initial:.3e})"
        )));
    }
    let count = |m: &[QuantumState]| if stochastic { trajectories } else { m.len() };
    let ra = evolve_ensemble(propagator, a, dt, steps, seed, count(a))?;
    let rb = evolve_ensemble(propagator, b, dt, steps, seed, count(b))?;
    let trace_distance = ra.trace_distance(&rb);
    let tolerance = if stochastic {
        5.0 / (trajectories as f64).sqrt()
    } else {
        1e-10
    };
    Ok(LinearityReport {
        trace_distance,
        tolerance,
        trajectories: if stochastic { trajectories } else { a.len().max(b.len()) },
        stochastic,
        linear: trace_distance < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::trajectory::RecordSpec;
    use crate::engine::Scheme;
    use crate::gravity::{build_model, Mode};
    use crate::lattice::{ConfigSpace, Particle, ParticleSet, StateVector};
    use nalgebra::DVector;

    fn chain(n: usize) -> LatticeGrid {
        LatticeGrid::new(vec![n], vec![1.0]).unwrap()
    }

    #[test]
    fn zero_separation_has_zero_rate() {
        let grid = LatticeGrid::cubic(8, 3, 1.0).unwrap();
        for spec in [ModelSpec::csl(1.0, 1.0, 1.0), ModelSpec::dp(1.0, 2.0, 1.0)] {
            let p = rate_profile(&spec, &grid, 1.0, 0, &[0, 1, 2]).unwrap();
            assert_eq!(p.rows[0].rate.total, 0.0);
            assert!(p.rows[1].rate.total > 0.0);
        }
    }

    #[test]
    fn lattice_rate_matches_generator_rate() {
        let grid = LatticeGrid::new(vec![6, 4], vec![1.0, 0.5]).unwrap();
        let space = ConfigSpace::full(grid.clone(), ParticleSet::new(vec![Particle::new(1.3)]).unwrap()).unwrap();
        let spec = ModelSpec::csl(0.9, 1.5, 0.7);
        let model = build_model(&spec, &space).unwrap();
        let couplings = monitoring_couplings(&spec, &grid).unwrap();
        for (x, y) in [(0, 5), (3, 17), (7, 7)] {
            let a = closed_form_rate(&model, x, y).unwrap();
            let b = lattice_rate(&couplings, &[1.3], &[x], &[y]);
            assert!((a.total - b.total).abs() < 1e-12);
            assert!((a.intrinsic - b.intrinsic).abs() < 1e-12);
        }
    }

    #[test]
    fn backaction_times_gamma_is_constant() {
        let grid = LatticeGrid::cubic(8, 3, 1.0).unwrap();
        let at = |gamma: f64| {
            rate_profile(&ModelSpec::csl(1.0, gamma, 1.0), &grid, 1.0, 0, &[3])
                .unwrap()
                .rows[0]
                .rate
                .backaction
                * gamma
        };
        let base = at(1.0);
        for gamma in [0.1, 3.0, 10.0] {
            assert!((at(gamma) - base).abs() < 1e-10 * base);
        }
    }

    #[test]
    fn kappa_scan_factorises() {
        let grid = LatticeGrid::cubic(8, 3, 1.0).unwrap();
        let kappas = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0];
        let scan = kappa_scan(&ModelSpec::dp(1.0, 2.0, 1.0), &grid, 1.0, 0, 3, &kappas).unwrap();
        assert_eq!(scan.argmin, 2.0);
        let r2 = scan.rows[3].1;
        for &(k, r) in &scan.rows {
            assert!((r / r2 - (k / 4.0 + 1.0 / k)).abs() < 1e-12);
        }
        assert!((scan.rows[1].1 - scan.rows[6].1).abs() < 1e-12 * r2);
        assert!(kappa_scan(&ModelSpec::csl(1.0, 1.0, 1.0), &grid, 1.0, 0, 3, &kappas).is_err());
    }

    #[test]
    fn ewald_sum_has_cubic_harmonic_expansion() {
        // Near the source in a cube, φ − 1/r = c + 2π r²/(3V) + O(r⁴).
        let l = 8.0;
        let ext = [l; 3];
        let v = l * l * l;
        let smooth = |r: [f64; 3]| periodic_coulomb(ext, r) - 1.0 / (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let (a, b) = ([0.8, 0.3, -0.2], [0.1, 0.2, 0.1]);
        let r2 = |r: [f64; 3]| r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let got = smooth(a) - smooth(b);
        let expect = 2.0 * PI / (3.0 * v) * (r2(a) - r2(b));
        assert!(((got - expect) / expect).abs() < 0.02, "{got} vs {expect}");
        let far =
            periodic_coulomb([6.0, 5.0, 7.0], [3.0, 0.0, 0.0]) - periodic_coulomb([6.0, 5.0, 7.0], [-3.0, 0.0, 0.0]);
        assert!(far.abs() < 1e-12);
    }

    #[test]
    fn decay_fit_recovers_exponential() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| 0.5 * (-0.7 * t).exp()).collect();
        let fit = fit_offdiagonal_decay(&t, &v, 1e-12).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-12);
        assert!((fit.amplitude - 0.5).abs() < 1e-12);
        let flat = fit_offdiagonal_decay(&t, &vec![0.5; 50], 1e-12).unwrap();
        assert!(flat.rate.abs() < 1e-6);
        assert!(fit_offdiagonal_decay(&t, &vec![0.0; 50], 1e-12).is_err());
    }

    #[test]
    fn me_fit_matches_closed_form() {
        let grid = LatticeGrid::new(vec![12, 8, 8], vec![1.0; 3]).unwrap();
        let space = ConfigSpace::new(grid, 1, ParticleSet::new(vec![Particle::frozen(1.0)]).unwrap()).unwrap();
        let spec = ModelSpec::csl(1.0, 1.0, 0.3);
        let model = build_model(&spec, &space).unwrap();
        let psi = StateVector::normalized(DVector::from_fn(12, |x, _| {
            C64::new(if x == 2 || x == 6 { 1.0 } else { 0.0 }, 0.0)
        }))
        .unwrap();
        let rec = crate::engine::trajectory::run_trajectory(
            model.propagator(Mode::Unconditional, Scheme::EulerMaruyama).as_ref(),
            &QuantumState::Mixed(psi.projector()),
            1e-3,
            1000,
            0,
            0,
            &RecordSpec {
                record_every: 10,
                offdiagonal: vec![(2, 6)],
                ..Default::default()
            },
        )
        .unwrap();
        let mags: Vec<f64> = rec.offdiagonal.iter().map(|v| v[0].norm()).collect();
        let fit = fit_offdiagonal_decay(&rec.times, &mags, 1e-12).unwrap();
        let exact = closed_form_rate(&model, 2, 6).unwrap().total;
        assert!(((fit.rate - exact) / exact).abs() < 0.01, "{} vs {exact}", fit.rate);
    }

    #[test]
    fn identical_ensembles_are_trivially_linear() {
        let grid = chain(6);
        let space = ConfigSpace::full(grid, ParticleSet::new(vec![Particle::new(1.0)]).unwrap()).unwrap();
        let model = build_model(&ModelSpec::new(ModelKind::SchrodingerNewton), &space).unwrap();
        let prop = model.propagator(Mode::Conditional, Scheme::EulerMaruyama);
        let a = vec![
            QuantumState::Pure(StateVector::basis(6, 1)),
            QuantumState::Pure(StateVector::basis(6, 4)),
        ];
        let r = linearity_witness(prop.as_ref(), &a, &a, 1e-3, 20, 0, 1, false).unwrap();
        assert_eq!(r.trace_distance, 0.0);
        assert!(r.linear);
        let b = vec![QuantumState::Pure(StateVector::basis(6, 2))];
        assert!(linearity_witness(prop.as_ref(), &a, &b, 1e-3, 20, 0, 1, false).is_err());
    }

    #[test]
    fn slope_report_differs_by_four() {
        let s = csl_backaction_slope(1.0, 2.0, 0.5);
        assert!((s.derived - 16.0 * PI).abs() < 1e-12);
        assert!((s.ratio - 4.0).abs() < 1e-12);
    }
}
