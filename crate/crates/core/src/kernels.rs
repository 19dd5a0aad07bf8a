//! Gaussian smearing, the periodic Poisson solver, correlation kernels and
//! their inverses, and noise sampling.
//!
//! A kernel with spectral multiplier `γ̃(k)` has lattice matrix
//! `K_rs = (1/(MΔV)) Σ_k γ̃(k) e^{ik(r−s)}`, so that `ΔV Σ_s K_rs f_s` is the
//! filter `IFFT(γ̃ · FFT f)` and the inverse kernel has multiplier `1/γ̃`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::KernelError;
use crate::lattice::{LaplacianSymbol, LatticeGrid, C64};
use crate::spectral::GridFft;

/// Fourier multiplier `e^{−σ²k²/2}` of the normalised Gaussian `g_σ`.
pub fn gaussian_multiplier(grid: &LatticeGrid, sigma: f64) -> Vec<f64> {
    grid.k_squared()
        .into_iter()
        .map(|k2| (-0.5 * sigma * sigma * k2).exp())
        .collect()
}

/// Green's multiplier `−4πG/λ(k)` for `∇²Φ = 4πGϱ`, zero at `k = 0`.
pub fn coulomb_multiplier(grid: &LatticeGrid, g: f64, symbol: LaplacianSymbol) -> Vec<f64> {
    grid.laplacian_symbol(symbol)
        .into_iter()
        .map(|l| if l > 0.0 { -4.0 * PI * g / l } else { 0.0 })
        .collect()
}

fn check_field(grid: &LatticeGrid, f: &[f64]) -> Result<(), KernelError> {
    if f.len() != grid.num_sites() {
        return Err(KernelError::FieldLength {
            expected: grid.num_sites(),
            found: f.len(),
        });
    }
    Ok(())
}

/// Circular convolution with `g_σ`.
pub fn smear(grid: &LatticeGrid, field: &[f64], sigma: f64) -> Result<Vec<f64>, KernelError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(KernelError::Width(sigma));
    }
    check_field(grid, field)?;
    if sigma == 0.0 {
        return Ok(field.to_vec());
    }
    Ok(GridFft::new(grid).filter(field, &gaussian_multiplier(grid, sigma)))
}

/// Periodic solution of `∇²Φ = 4πGϱ` with the mean of Φ fixed at zero.
pub fn coulomb_potential(
    grid: &LatticeGrid,
    density: &[f64],
    g: f64,
    symbol: LaplacianSymbol,
) -> Result<Vec<f64>, KernelError> {
    check_field(grid, density)?;
    Ok(GridFft::new(grid).filter(density, &coulomb_multiplier(grid, g, symbol)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorrelationKernel {
    /// `γ δ(r−s)`.
    Csl { gamma: f64 },
    /// `κG/|r−s|`, multiplier `4πκG/λ(k)`.
    Dp { kappa: f64, g: f64 },
    /// `γ` times a normalised Gaussian of width `length`.
    Gaussian { gamma: f64, length: f64 },
}

impl CorrelationKernel {
    pub fn validate(&self) -> Result<(), KernelError> {
        let positive = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(KernelError::Parameter { name, value })
            }
        };
        match *self {
            CorrelationKernel::Csl { gamma } => positive("gamma", gamma),
            CorrelationKernel::Dp { kappa, g } => {
                positive("kappa", kappa)?;
                positive("G", g)
            }
            CorrelationKernel::Gaussian { gamma, length } => {
                positive("gamma", gamma)?;
                if length.is_finite() && length >= 0.0 {
                    Ok(())
                } else {
                    Err(KernelError::Width(length))
                }
            }
        }
    }

    /// Spectral multiplier `γ̃(k)` on `grid`.
    pub fn multiplier(&self, grid: &LatticeGrid, symbol: LaplacianSymbol) -> Vec<f64> {
        match *self {
            CorrelationKernel::Csl { gamma } => vec![gamma; grid.num_sites()],
            CorrelationKernel::Dp { kappa, g } => grid
                .laplacian_symbol(symbol)
                .into_iter()
                .map(|l| if l > 0.0 { 4.0 * PI * kappa * g / l } else { 0.0 })
                .collect(),
            CorrelationKernel::Gaussian { gamma, length } => gaussian_multiplier(grid, length)
                .into_iter()
                .map(|p| gamma * p)
                .collect(),
        }
    }

    pub fn on(&self, grid: &LatticeGrid, symbol: LaplacianSymbol) -> Result<LatticeKernel, KernelError> {
        self.validate()?;
        let gamma = self.multiplier(grid, symbol);
        // Modes the kernel annihilates (or that underflow) are dropped from both sides.
        let inverse = gamma
            .iter()
            .map(|&g| {
                if g > 1e-300 && (1.0 / g).is_finite() {
                    1.0 / g
                } else {
                    0.0
                }
            })
            .collect();
        Ok(LatticeKernel {
            kernel: *self,
            grid: grid.clone(),
            symbol,
            fft: Arc::new(GridFft::new(grid)),
            gamma,
            inverse,
        })
    }
}

/// A correlation kernel bound to a grid.
#[derive(Clone, Debug)]
pub struct LatticeKernel {
    kernel: CorrelationKernel,
    grid: LatticeGrid,
    symbol: LaplacianSymbol,
    fft: Arc<GridFft>,
    gamma: Vec<f64>,
    inverse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField(Vec<f64>);

impl NoiseField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl LatticeKernel {
    pub fn kernel(&self) -> &CorrelationKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &LatticeGrid {
        &self.grid
    }

    pub fn symbol(&self) -> LaplacianSymbol {
        self.symbol
    }

    pub fn fft(&self) -> &Arc<GridFft> {
        &self.fft
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.gamma
    }

    pub fn inverse_multiplier(&self) -> &[f64] {
        &self.inverse
    }

    pub fn is_retained(&self, mode: usize) -> bool {
        self.inverse[mode] != 0.0
    }

    /// `ΔV Σ_s γ_rs f_s`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_field(&self.grid, f)?;
        Ok(self.fft.filter(f, &self.gamma))
    }

    /// `ΔV Σ_s γ⁻¹_rs f_s`.
    pub fn apply_inverse(&self, f: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_field(&self.grid, f)?;
        Ok(self.fft.filter(f, &self.inverse))
    }

    /// Projection of `f` onto the retained modes.
    pub fn project_retained(&self, f: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_field(&self.grid, f)?;
        let mask: Vec<f64> = self.inverse.iter().map(|&v| if v != 0.0 { 1.0 } else { 0.0 }).collect();
        Ok(self.fft.filter(f, &mask))
    }

    /// `max |γ⁻¹γf − Pf|` relative to `max |f|`, with `P` the retained-mode projector.
    pub fn roundtrip_defect(&self, f: &[f64]) -> Result<f64, KernelError> {
        let there = self.apply(f)?;
        let back = self.apply_inverse(&there)?;
        let reference = self.project_retained(f)?;
        let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        Ok(back
            .iter()
            .zip(&reference)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale)
    }

    fn spectral_form(&self, mult: &[f64], f: &[f64], g: &[f64]) -> Result<f64, KernelError> {
        check_field(&self.grid, f)?;
        check_field(&self.grid, g)?;
        let ff = self.fft.forward_real(f);
        let gg = self.fft.forward_real(g);
        let acc: f64 = ff
            .iter()
            .zip(&gg)
            .zip(mult)
            .map(|((a, b), m)| m * (a.conj() * b).re)
            .sum();
        Ok(acc * self.grid.cell_volume() / self.grid.num_sites() as f64)
    }

    /// `∫∫ γ(r,s) f(r) g(s) dr ds`.
    pub fn quadratic_form(&self, f: &[f64], g: &[f64]) -> Result<f64, KernelError> {
        self.spectral_form(&self.gamma, f, g)
    }

    /// `∫∫ γ⁻¹(r,s) f(r) g(s) dr ds`.
    pub fn inverse_quadratic_form(&self, f: &[f64], g: &[f64]) -> Result<f64, KernelError> {
        self.spectral_form(&self.inverse, f, g)
    }

    /// Per-mode amplitude `sqrt(1/(ΔV γ̃ dt))` that colours unit white noise.
    pub fn noise_multiplier(&self, dt: f64) -> Result<Vec<f64>, KernelError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(KernelError::TimeStep(dt));
        }
        let dv = self.grid.cell_volume();
        Ok(self.inverse.iter().map(|&inv| (inv / (dv * dt)).sqrt()).collect())
    }

    /// Gaussian field with covariance `γ⁻¹_rs / dt`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<NoiseField, KernelError> {
        let amp = self.noise_multiplier(dt)?;
        let white: Vec<f64> = (0..self.grid.num_sites())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(NoiseField(self.fft.filter(&white, &amp)))
    }
}

/// Kernel over a finite set of monitoring channels with unit measure.
#[derive(Clone, Debug)]
pub struct MatrixKernel {
    gamma: DMatrix<f64>,
    inverse: DMatrix<f64>,
    inverse_factor: DMatrix<f64>,
}

impl MatrixKernel {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self, KernelError> {
        if !gamma.is_square() || (&gamma - gamma.transpose()).amax() > 1e-12 * gamma.amax().max(1.0) {
            return Err(KernelError::NotPositive);
        }
        let chol = Cholesky::new(gamma.clone()).ok_or(KernelError::NotPositive)?;
        let inverse = chol.inverse();
        let inverse_factor = Cholesky::new(inverse.clone()).ok_or(KernelError::NotPositive)?.l();
        Ok(Self {
            gamma,
            inverse,
            inverse_factor,
        })
    }

    pub fn scalar(gamma: f64) -> Result<Self, KernelError> {
        Self::new(DMatrix::from_element(1, 1, gamma))
    }

    pub fn channels(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<NoiseField, KernelError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(KernelError::TimeStep(dt));
        }
        let white = DVector::from_fn(self.channels(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let coloured = &self.inverse_factor * white / dt.sqrt();
        Ok(NoiseField(coloured.iter().copied().collect()))
    }
}

/// `IFFT(m)`, i.e. the real-space profile whose transform is `m`, divided by ΔV.
pub fn profile(fft: &GridFft, grid: &LatticeGrid, multiplier: &[f64]) -> Vec<f64> {
    let spec: Vec<C64> = multiplier.iter().map(|&m| C64::new(m, 0.0)).collect();
    let dv = grid.cell_volume();
    fft.inverse_real(spec).into_iter().map(|v| v / dv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid3(n: usize) -> LatticeGrid {
        LatticeGrid::cubic(n, 3, 1.0).unwrap()
    }

    fn point(grid: &LatticeGrid, site: usize, mass: f64) -> Vec<f64> {
        let mut f = vec![0.0; grid.num_sites()];
        f[site] = mass / grid.cell_volume();
        f
    }

    #[test]
    fn zero_width_smear_is_identity() {
        let g = grid3(4);
        let f: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        assert_eq!(smear(&g, &f, 0.0).unwrap(), f);
        assert!(smear(&g, &f, -1.0).is_err());
    }

    #[test]
    fn smear_semigroup() {
        let g = LatticeGrid::new(vec![8, 6], vec![0.5, 1.0]).unwrap();
        let f: Vec<f64> = (0..48).map(|i| ((i * 5) % 7) as f64).collect();
        let twice = smear(&g, &smear(&g, &f, 0.8).unwrap(), 0.8).unwrap();
        let once = smear(&g, &f, 0.8 * 2f64.sqrt()).unwrap();
        for (a, b) in twice.iter().zip(&once) {
            assert!((a - b).abs() < 1e-12);
        }
        let mass: f64 = f.iter().sum();
        assert!((once.iter().sum::<f64>() - mass).abs() < 1e-10);
    }

    #[test]
    fn smeared_point_matches_real_space_gaussian() {
        // Width 2 spacings on a 24-site box: aliasing and truncation are negligible.
        let g = LatticeGrid::cubic(24, 1, 1.0).unwrap();
        let sigma = 2.0;
        let out = smear(&g, &point(&g, 0, 1.0), sigma).unwrap();
        for r in 0..24 {
            let images: f64 = (-3..=3)
                .map(|n| {
                    let d = r as f64 + 24.0 * n as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            let expected = images / (2.0 * PI * sigma * sigma).sqrt();
            assert!((out[r] - expected).abs() < 1e-9, "site {r}");
        }
    }

    #[test]
    fn uniform_density_has_no_potential() {
        let g = grid3(6);
        let phi = coulomb_potential(&g, &vec![2.0; 216], 1.0, LaplacianSymbol::default()).unwrap();
        assert!(phi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn coulomb_is_linear() {
        let g = grid3(5);
        let a: Vec<f64> = (0..125).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..125).map(|i| ((i * i) % 13) as f64).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        for symbol in [LaplacianSymbol::Spectral, LaplacianSymbol::FiniteDifference] {
            let pa = coulomb_potential(&g, &a, 1.3, symbol).unwrap();
            let pb = coulomb_potential(&g, &b, 1.3, symbol).unwrap();
            let ps = coulomb_potential(&g, &sum, 1.3, symbol).unwrap();
            for i in 0..125 {
                assert!((pa[i] + pb[i] - ps[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_difference_potential_solves_discrete_poisson() {
        let g = LatticeGrid::new(vec![6, 5, 4], vec![1.0, 0.5, 2.0]).unwrap();
        let mut rho = point(&g, 17, 1.0);
        let mean = 1.0 / (g.num_sites() as f64 * g.cell_volume());
        rho.iter_mut().for_each(|v| *v -= mean);
        let phi = coulomb_potential(&g, &rho, 0.7, LaplacianSymbol::FiniteDifference).unwrap();
        for r in 0..g.num_sites() {
            let c = g.coords(r);
            let mut lap = 0.0;
            for axis in 0..3 {
                let h = g.spacing()[axis];
                let mut up = [c[0] as i64, c[1] as i64, c[2] as i64];
                let mut down = up;
                up[axis] += 1;
                down[axis] -= 1;
                lap += (phi[g.site(&up)] + phi[g.site(&down)] - 2.0 * phi[r]) / (h * h);
            }
            assert!((lap - 4.0 * PI * 0.7 * rho[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn csl_quadratic_form_is_weighted_dot_product() {
        let g = LatticeGrid::new(vec![4, 3], vec![0.5, 2.0]).unwrap();
        let k = CorrelationKernel::Csl { gamma: 2.5 }
            .on(&g, LaplacianSymbol::default())
            .unwrap();
        let f: Vec<f64> = (0..12).map(|i| i as f64 - 4.0).collect();
        let h: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let direct: f64 = 2.5 * g.cell_volume() * f.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        assert!((k.quadratic_form(&f, &h).unwrap() - direct).abs() < 1e-10);
        assert_eq!(k.quadratic_form(&[0.0; 12], &[0.0; 12]).unwrap(), 0.0);
    }

    #[test]
    fn dp_quadratic_form_matches_real_space_double_sum() {
        // Disjoint point dipoles keep the on-site value out of the oracle.
        let n = 4usize;
        let g = grid3(n);
        let k = CorrelationKernel::Dp { kappa: 1.0, g: 1.0 }
            .on(&g, LaplacianSymbol::Spectral)
            .unwrap();
        let mut f = vec![0.0; 64];
        f[g.site(&[0, 0, 0])] = 1.0;
        f[g.site(&[1, 0, 0])] = -1.0;
        let mut h = vec![0.0; 64];
        h[g.site(&[0, 1, 0])] = 1.0;
        h[g.site(&[1, 1, 0])] = -1.0;
        let spectral = k.quadratic_form(&f, &h).unwrap();
        let mut direct = 0.0;
        for r in 0..64 {
            for s in 0..64 {
                if f[r] == 0.0 || h[s] == 0.0 {
                    continue;
                }
                // Cube-ordered image sum.
                let cr = g.coords(r);
                let cs = g.coords(s);
                let mut pot = 0.0;
                for ix in -4i64..=4 {
                    for iy in -4i64..=4 {
                        for iz in -4i64..=4 {
                            let dx = cr[0] as f64 - cs[0] as f64 + (ix * n as i64) as f64;
                            let dy = cr[1] as f64 - cs[1] as f64 + (iy * n as i64) as f64;
                            let dz = cr[2] as f64 - cs[2] as f64 + (iz * n as i64) as f64;
                            pot += 1.0 / (dx * dx + dy * dy + dz * dz).sqrt();
                        }
                    }
                }
                direct += f[r] * h[s] * pot;
            }
        }
        assert!(spectral.abs() > 0.0);
        assert!(((spectral - direct) / direct).abs() < 0.1, "{spectral} vs {direct}");
    }

    #[test]
    fn dp_multipliers_invert_on_retained_modes() {
        let g = grid3(5);
        let k = CorrelationKernel::Dp { kappa: 2.0, g: 0.3 }
            .on(&g, LaplacianSymbol::FiniteDifference)
            .unwrap();
        assert_eq!(k.multiplier()[0], 0.0);
        assert_eq!(k.inverse_multiplier()[0], 0.0);
        for (a, b) in k.multiplier().iter().zip(k.inverse_multiplier()).skip(1) {
            assert!((a * b - 1.0).abs() < 1e-12);
            assert!(*a >= 0.0);
        }
    }

    #[test]
    fn dp_noise_has_no_zero_mode() {
        let g = grid3(4);
        let k = CorrelationKernel::Dp { kappa: 2.0, g: 1.0 }
            .on(&g, LaplacianSymbol::default())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = k.sample_noise(0.01, &mut rng).unwrap();
        assert!(noise.values().iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let g = grid3(3);
        let k = CorrelationKernel::Csl { gamma: 1.0 }
            .on(&g, LaplacianSymbol::default())
            .unwrap();
        let draw = |seed| k.sample_noise(0.1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn csl_noise_covariance_is_inverse_kernel() {
        let g = LatticeGrid::cubic(4, 1, 1.0).unwrap();
        let k = CorrelationKernel::Csl { gamma: 1.0 }
            .on(&g, LaplacianSymbol::default())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut var = 0.0;
        let mut cross = 0.0;
        for _ in 0..n {
            let e = k.sample_noise(1.0, &mut rng).unwrap();
            var += e.values()[0] * e.values()[0];
            cross += e.values()[0] * e.values()[2];
        }
        var /= n as f64;
        cross /= n as f64;
        // Var of a unit-variance sample variance is 2/n.
        let stat = (2.0 / n as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * stat, "variance {var}");
        assert!(cross.abs() < 4.0 / (n as f64).sqrt(), "covariance {cross}");
    }

    #[test]
    fn matrix_kernel_noise_covariance() {
        let gamma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = MatrixKernel::new(gamma.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 50_000;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let e = DVector::from_column_slice(k.sample_noise(0.5, &mut rng).unwrap().values());
            cov += &e * e.transpose();
        }
        cov /= n as f64;
        let target = gamma.try_inverse().unwrap() / 0.5;
        assert!((cov - target).amax() < 0.05);
        assert!(MatrixKernel::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    proptest! {
        #[test]
        fn kernel_roundtrip_is_identity_on_retained_modes(
            seed in 0u64..1000,
            kind in 0usize..3,
            n in 2usize..6,
        ) {
            let g = LatticeGrid::new(vec![n, n + 1], vec![0.7, 1.1]).unwrap();
            let kernel = match kind {
                0 => CorrelationKernel::Csl { gamma: 0.3 },
                1 => CorrelationKernel::Dp { kappa: 2.0, g: 0.5 },
                _ => CorrelationKernel::Gaussian { gamma: 1.5, length: 0.6 },
            };
            let k = kernel.on(&g, LaplacianSymbol::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..g.num_sites()).map(|_| rng.random::<f64>() - 0.5).collect();
            prop_assert!(k.roundtrip_defect(&f).unwrap() < 1e-12);
            prop_assert!(k.multiplier().iter().all(|&m| m >= 0.0));
            let q = k.quadratic_form(&f, &f).unwrap();
            prop_assert!(q >= -1e-14);
            let h: Vec<f64> = (0..g.num_sites()).map(|_| rng.random::<f64>()).collect();
            let fh = k.quadratic_form(&f, &h).unwrap();
            let hf = k.quadratic_form(&h, &f).unwrap();
            prop_assert!((fh - hf).abs() < 1e-12 * (1.0 + fh.abs()));
        }
    }
}
