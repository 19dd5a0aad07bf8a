//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use collapse_core::lattice::{ConfigSpace, DensityMatrix, LatticeGrid, Particle, ParticleSet, StateVector, C64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_density(dim: usize, rng: &mut impl Rng) -> DensityMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let m = &a * a.adjoint();
    let t = m.trace().re;
    DensityMatrix::new(m.map(|z| z / t))
}

pub fn random_state(dim: usize, rng: &mut impl Rng) -> StateVector {
    let v = DVector::from_fn(dim, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    StateVector::normalized(v).unwrap()
}

/// One particle hopping along axis 0 of a 3D field grid.
pub fn chain_space(n: usize, transverse: usize, mass: f64, kinetic: bool) -> ConfigSpace {
    let grid = LatticeGrid::new(vec![n, transverse, transverse], vec![1.0; 3]).unwrap();
    let p = if kinetic {
        Particle::new(mass)
    } else {
        Particle::frozen(mass)
    };
    ConfigSpace::new(grid, 1, ParticleSet::new(vec![p]).unwrap()).unwrap()
}

/// `(|x⟩ + e^{iφ}|y⟩)/√2` on site basis states.
pub fn cat(dim: usize, x: usize, y: usize) -> StateVector {
    let mut v = DVector::zeros(dim);
    v[x] = C64::new(1.0, 0.0);
    v[y] = C64::new(1.0, 0.0);
    StateVector::normalized(v).unwrap()
}

/// Periodic `Σ 1/|r + nL|` with neutralising background, Ewald-summed with
/// splitting parameter `alpha`.
pub fn ewald(extent: [f64; 3], r: [f64; 3], alpha: f64) -> f64 {
    let volume = extent.iter().product::<f64>();
    let mut real = 0.0;
    let n: Vec<i64> = extent.iter().map(|l| (7.0 / (alpha * l)).ceil() as i64 + 1).collect();
    for i in -n[0]..=n[0] {
        for j in -n[1]..=n[1] {
            for k in -n[2]..=n[2] {
                let d = ((r[0] + i as f64 * extent[0]).powi(2)
                    + (r[1] + j as f64 * extent[1]).powi(2)
                    + (r[2] + k as f64 * extent[2]).powi(2))
                .sqrt();
                if d > 0.0 {
                    real += libm::erfc(alpha * d) / d;
                }
            }
        }
    }
    let kmax = 14.0 * alpha;
    let m: Vec<i64> = extent.iter().map(|l| (kmax * l / (2.0 * PI)).ceil() as i64).collect();
    let mut recip = 0.0;
    for i in -m[0]..=m[0] {
        for j in -m[1]..=m[1] {
            for k in -m[2]..=m[2] {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let kv = [
                    2.0 * PI * i as f64 / extent[0],
                    2.0 * PI * j as f64 / extent[1],
                    2.0 * PI * k as f64 / extent[2],
                ];
                let k2: f64 = kv.iter().map(|v| v * v).sum();
                let phase: f64 = kv.iter().zip(&r).map(|(a, b)| a * b).sum();
                recip += (-k2 / (4.0 * alpha * alpha)).exp() / k2 * phase.cos();
            }
        }
    }
    real + 4.0 * PI / volume * recip - PI / (alpha * alpha * volume)
}

/// `∫_{T³} (G(r) − G(r − d ê₀))²` for the periodic Coulomb kernel on a cube of
/// side `l`, where the free-space value is `4π d`. Modes `|m_i| ≤ cutoff` are
/// summed exactly and the rest by the spherical tail.
pub fn periodic_coulomb_difference_norm(l: f64, d: f64, cutoff: i64) -> f64 {
    let volume = l * l * l;
    let dk = 2.0 * PI / l;
    let mut sum = 0.0;
    for i in -cutoff..=cutoff {
        let kx = dk * i as f64;
        let weight = 1.0 - (kx * d).cos();
        for j in -cutoff..=cutoff {
            for k in -cutoff..=cutoff {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let k2 = kx * kx + (dk * j as f64).powi(2) + (dk * k as f64).powi(2);
                sum += weight / (k2 * k2);
            }
        }
    }
    let k_eq = dk * (cutoff as f64 + 0.5) * (6.0 / PI).powf(1.0 / 3.0);
    32.0 * PI * PI / volume * sum + 16.0 / k_eq
}

/// Nodes `(x, 1 − |x|, w)` of the tanh-sinh rule on `[−1, 1]`.
fn tanh_sinh_nodes(h: f64, reach: f64) -> Vec<(f64, f64, f64)> {
    let n = (reach / h).ceil() as i64;
    (-n..=n)
        .map(|j| {
            let t = j as f64 * h;
            let u = 0.5 * PI * t.sinh();
            let x = u.tanh();
            let comp = 2.0 / ((2.0 * u.abs()).exp() + 1.0);
            let w = h * 0.5 * PI * t.cosh() / u.cosh().powi(2);
            (x, comp, w)
        })
        .collect()
}

/// `∫_a^b f` by tanh-sinh quadrature, tolerant of integrable endpoint singularities.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    tanh_sinh_nodes(1.0 / 64.0, 3.2)
        .into_iter()
        .map(|(x, comp, w)| {
            let r = if x < 0.0 { a + half * comp } else { b - half * comp };
            w * f(r)
        })
        .filter(|v| v.is_finite())
        .sum::<f64>()
        * half
}

/// `∫ d³r (1/|r| − 1/|r − d|)²` in free space. The angular integral is done
/// in closed form; the radial one numerically in `q = r/d` inside the sphere
/// `r < d` and in `s = d/r` outside it.
pub fn coulomb_difference_norm_quadrature(d: f64) -> f64 {
    let inner = tanh_sinh(|q: f64| 1.0 - 2.0 * q + q * q.atanh(), 0.0, 1.0);
    let outer = tanh_sinh(
        |s: f64| {
            let excess = if s < 1e-3 {
                s * s / 3.0 + s.powi(4) / 5.0
            } else {
                s.atanh() / s - 1.0
            };
            excess / (s * s)
        },
        0.0,
        1.0,
    );
    4.0 * PI * d * (inner + outer)
}

/// CSL intrinsic rate `∝ 1 − exp(−d²/4σ²)` of a point mass.
pub fn csl_rate_shape(d: f64, sigma: f64) -> f64 {
    1.0 - (-d * d / (4.0 * sigma * sigma)).exp()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `e^{−iHt} ρ e^{iHt}` by exact diagonalisation of a dense Hermitian `H`.
pub fn unitary_evolve(h: &DMatrix<C64>, rho: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = h.clone().symmetric_eigen();
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t)));
    let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
    &u * rho * u.adjoint()
}
