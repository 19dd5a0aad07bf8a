//! Periodic lattice geometry, the configuration space of distinguishable
//! point particles, and the position-basis operator algebra.
//!
//! Continuum integrals map onto the lattice as `∫dr f(r) ↦ ΔV·Σ_r f(r)` and
//! `δ(r−s) ↦ δ_rs/ΔV`; every module uses this dictionary.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::LatticeError;

pub type C64 = Complex64;

/// Largest configuration-space dimension accepted for dense density matrices.
pub const MAX_CONFIG_DIM: usize = 4096;

/// Which symbol stands in for `k²` when inverting the Laplacian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianSymbol {
    /// Exact Fourier multiplier `|k|²`.
    Spectral,
    /// Seven-point finite-difference Laplacian, `Σ_j (2/h_j · sin(k_j h_j / 2))²`.
    #[default]
    FiniteDifference,
}

/// Periodic grid with up to three axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeGrid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl LatticeGrid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>) -> Result<Self, LatticeError> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(LatticeError::Axes(dims.len()));
        }
        if dims.len() != spacing.len() {
            return Err(LatticeError::SpacingLength {
                dims: dims.len(),
                spacing: spacing.len(),
            });
        }
        if dims.contains(&0) {
            return Err(LatticeError::EmptyAxis);
        }
        if spacing.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(LatticeError::Spacing);
        }
        Ok(Self { dims, spacing })
    }

    /// `n` sites per axis on `ndim` axes, all with spacing `h`.
    pub fn cubic(n: usize, ndim: usize, h: f64) -> Result<Self, LatticeError> {
        Self::new(vec![n; ndim], vec![h; ndim])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn num_sites(&self) -> usize {
        self.dims.iter().product()
    }

    /// ΔV, the product of the spacings.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Box length along `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        self.dims[axis] as f64 * self.spacing[axis]
    }

    /// Integer coordinates of `site`, row-major with the last axis fastest.
    pub fn coords(&self, site: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rem = site;
        for axis in (0..self.ndim()).rev() {
            c[axis] = rem % self.dims[axis];
            rem /= self.dims[axis];
        }
        c
    }

    /// Site index of (possibly out-of-range) integer coordinates, wrapped periodically.
    pub fn site(&self, coords: &[i64]) -> usize {
        let mut idx = 0usize;
        for axis in 0..self.ndim() {
            let n = self.dims[axis] as i64;
            let c = coords.get(axis).copied().unwrap_or(0).rem_euclid(n) as usize;
            idx = idx * self.dims[axis] + c;
        }
        idx
    }

    /// Site holding the periodic difference `a − b`.
    pub fn difference(&self, a: usize, b: usize) -> usize {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let mut idx = 0usize;
        for axis in 0..self.ndim() {
            let n = self.dims[axis];
            let c = (ca[axis] + n - cb[axis]) % n;
            idx = idx * n + c;
        }
        idx
    }

    /// Minimal-image displacement `b − a` in physical units.
    pub fn displacement(&self, a: usize, b: usize) -> [f64; 3] {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let mut out = [0.0; 3];
        for axis in 0..self.ndim() {
            let n = self.dims[axis] as i64;
            let mut d = cb[axis] as i64 - ca[axis] as i64;
            if d > n / 2 {
                d -= n;
            } else if d < -(n / 2) {
                d += n;
            }
            out[axis] = d as f64 * self.spacing[axis];
        }
        out
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let d = self.displacement(a, b);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Angular wavenumbers along `axis` in FFT order.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let n = self.dims[axis];
        let dk = 2.0 * PI / self.extent(axis);
        (0..n)
            .map(|q| {
                let signed = if q <= n / 2 { q as f64 } else { q as f64 - n as f64 };
                signed * dk
            })
            .collect()
    }

    /// `|k|²` for every Fourier mode, in site order.
    pub fn k_squared(&self) -> Vec<f64> {
        self.per_mode(|axis, k| {
            let _ = axis;
            k * k
        })
    }

    /// The Laplacian symbol for every Fourier mode (non-negative, zero at k=0).
    pub fn laplacian_symbol(&self, symbol: LaplacianSymbol) -> Vec<f64> {
        match symbol {
            LaplacianSymbol::Spectral => self.k_squared(),
            LaplacianSymbol::FiniteDifference => self.per_mode(|axis, k| {
                let h = self.spacing[axis];
                let s = 2.0 / h * (0.5 * k * h).sin();
                s * s
            }),
        }
    }

    /// Sums `f(axis, k_axis)` over axes for every mode.
    fn per_mode(&self, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
        let ks: Vec<Vec<f64>> = (0..self.ndim()).map(|a| self.wavenumbers(a)).collect();
        (0..self.num_sites())
            .map(|site| {
                let c = self.coords(site);
                (0..self.ndim()).map(|a| f(a, ks[a][c[a]])).sum()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub mass: f64,
    /// Include the free `−∇²/2m` term.
    pub kinetic: bool,
    /// Optional external potential, one value per particle site.
    pub external: Option<Vec<f64>>,
}

impl Particle {
    pub fn new(mass: f64) -> Self {
        Self {
            mass,
            kinetic: true,
            external: None,
        }
    }

    pub fn frozen(mass: f64) -> Self {
        Self {
            mass,
            kinetic: false,
            external: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn new(particles: Vec<Particle>) -> Result<Self, LatticeError> {
        if particles.is_empty() {
            return Err(LatticeError::NoParticles);
        }
        if particles.iter().any(|p| !(p.mass.is_finite() && p.mass > 0.0)) {
            return Err(LatticeError::Mass);
        }
        Ok(Self { particles })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.mass).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Particle> {
        self.particles.iter()
    }

    pub fn get(&self, n: usize) -> &Particle {
        &self.particles[n]
    }
}

/// One axis of the configuration tensor: particle `particle` moving along `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorAxis {
    pub particle: usize,
    pub axis: usize,
    pub len: usize,
    pub stride: usize,
}

/// Joint configuration space of N distinguishable particles.
///
/// Fields live on `grid`. Particles move on the sub-lattice spanned by the
/// first `particle_axes` axes, with the remaining coordinates pinned at zero.
/// A 1D chain embedded in a 3D field grid is `particle_axes = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSpace {
    grid: LatticeGrid,
    particle_axes: usize,
    particles: ParticleSet,
    sites_per_particle: usize,
    dim: usize,
}

impl ConfigSpace {
    pub fn new(grid: LatticeGrid, particle_axes: usize, particles: ParticleSet) -> Result<Self, LatticeError> {
        if particle_axes == 0 || particle_axes > grid.ndim() {
            return Err(LatticeError::ParticleAxes {
                requested: particle_axes,
                available: grid.ndim(),
            });
        }
        let sites_per_particle: usize = grid.dims()[..particle_axes].iter().product();
        let mut dim = 1usize;
        for _ in 0..particles.len() {
            dim = dim
                .checked_mul(sites_per_particle)
                .filter(|&d| d <= MAX_CONFIG_DIM)
                .ok_or(LatticeError::TooLarge { limit: MAX_CONFIG_DIM })?;
        }
        for p in particles.iter() {
            if let Some(v) = &p.external {
                if v.len() != sites_per_particle || v.iter().any(|x| !x.is_finite()) {
                    return Err(LatticeError::ExternalPotential);
                }
            }
        }
        Ok(Self {
            grid,
            particle_axes,
            particles,
            sites_per_particle,
            dim,
        })
    }

    /// Every particle moves on the full grid.
    pub fn full(grid: LatticeGrid, particles: ParticleSet) -> Result<Self, LatticeError> {
        let axes = grid.ndim();
        Self::new(grid, axes, particles)
    }

    pub fn grid(&self) -> &LatticeGrid {
        &self.grid
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn particle_axes(&self) -> usize {
        self.particle_axes
    }

    pub fn num_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn sites_per_particle(&self) -> usize {
        self.sites_per_particle
    }

    /// Configuration-basis dimension, `(sites per particle)^N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The lattice a single particle moves on.
    pub fn particle_grid(&self) -> LatticeGrid {
        LatticeGrid {
            dims: self.grid.dims[..self.particle_axes].to_vec(),
            spacing: self.grid.spacing[..self.particle_axes].to_vec(),
        }
    }

    /// Field-grid site of particle-grid site `s`.
    pub fn field_site(&self, s: usize) -> usize {
        let pg = self.particle_grid();
        let c = pg.coords(s);
        let coords: Vec<i64> = (0..self.grid.ndim())
            .map(|a| if a < self.particle_axes { c[a] as i64 } else { 0 })
            .collect();
        self.grid.site(&coords)
    }

    /// Field-grid sites for every particle-grid site.
    pub fn field_sites(&self) -> Vec<usize> {
        (0..self.sites_per_particle).map(|s| self.field_site(s)).collect()
    }

    /// Particle-grid site of each particle in configuration `x`.
    pub fn decode(&self, x: usize) -> Vec<usize> {
        let n = self.num_particles();
        let mut out = vec![0; n];
        let mut rem = x;
        for slot in out.iter_mut().rev() {
            *slot = rem % self.sites_per_particle;
            rem /= self.sites_per_particle;
        }
        out
    }

    pub fn encode(&self, sites: &[usize]) -> usize {
        sites.iter().fold(0, |acc, &s| acc * self.sites_per_particle + s)
    }

    /// Axes of the configuration tensor, particle 0 most significant.
    pub fn tensor_axes(&self) -> Vec<TensorAxis> {
        let mut axes = Vec::new();
        let mut stride = self.dim;
        for particle in 0..self.num_particles() {
            for axis in 0..self.particle_axes {
                let len = self.grid.dims[axis];
                stride /= len;
                axes.push(TensorAxis {
                    particle,
                    axis,
                    len,
                    stride,
                });
            }
        }
        axes
    }
}

/// A real function on configuration space; the matrix of a position-diagonal operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalField(Vec<f64>);

impl DiagonalField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Pointwise product; the operator product of two diagonal operators.
    pub fn product(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(self.0.iter().map(|a| a * c).collect())
    }

    /// `max − min`.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self.0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.0.len(),
            self.0.iter().map(|&v| C64::new(v, 0.0)),
        ))
    }
}

impl std::ops::Index<usize> for DiagonalField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Density matrix over the configuration basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    pub fn new(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let v = psi.as_vector();
        Self(v * v.adjoint())
    }

    /// Position eigenstate `|x⟩⟨x|`.
    pub fn basis(dim: usize, x: usize) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(x, x)] = C64::new(1.0, 0.0);
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Diagonal populations `Re ρ_xx`.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|x| self.0[(x, x)].re).collect()
    }

    /// `Tr ρ²`, computed as `Σ ρ_xy ρ_yx`.
    pub fn purity(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for y in 0..d {
            for x in 0..d {
                acc += (self.0[(x, y)] * self.0[(y, x)]).re;
            }
        }
        acc
    }

    /// `max |ρ − ρ†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for y in 0..d {
            for x in 0..=y {
                worst = worst.max((self.0[(x, y)] - self.0[(y, x)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.0 + self.0.adjoint()).scale(0.5);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let diff = &self.0 - &other.0;
        let h = (&diff + diff.adjoint()).scale(0.5);
        0.5 * h.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>()
    }

    /// Entrywise L1 norm, used by the step-size guard.
    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).sum()
    }
}

/// Pure state over the configuration basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(DVector<C64>);

impl StateVector {
    pub fn new(v: DVector<C64>) -> Self {
        Self(v)
    }

    /// Normalises `v`; fails on a zero vector.
    pub fn normalized(v: DVector<C64>) -> Result<Self, LatticeError> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(LatticeError::ZeroState);
        }
        Ok(Self(v.unscale(n)))
    }

    pub fn basis(dim: usize, x: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[x] = C64::new(1.0, 0.0);
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<C64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

/// `ϱ̂(r)` for field site `r`: value `Σ_n m_n δ_{r,x_n}/ΔV` on each configuration.
pub fn mass_density_field(space: &ConfigSpace, r: usize) -> DiagonalField {
    let dv = space.grid().cell_volume();
    let masses = space.particles().masses();
    let field_sites = space.field_sites();
    DiagonalField::new(
        (0..space.dim())
            .map(|x| {
                space
                    .decode(x)
                    .iter()
                    .zip(&masses)
                    .filter(|(&s, _)| field_sites[s] == r)
                    .map(|(_, m)| m / dv)
                    .sum()
            })
            .collect(),
    )
}

/// Coordinate of particle `particle` along `axis`, in `[0, L)`.
pub fn position_field(space: &ConfigSpace, particle: usize, axis: usize) -> DiagonalField {
    let pg = space.particle_grid();
    let h = pg.spacing()[axis];
    DiagonalField::new(
        (0..space.dim())
            .map(|x| pg.coords(space.decode(x)[particle])[axis] as f64 * h)
            .collect(),
    )
}

/// One term of a tensor-structured Hamiltonian: a real symmetric matrix acting
/// along one axis of the configuration tensor.
#[derive(Clone, Debug, PartialEq)]
struct AxisTerm {
    len: usize,
    stride: usize,
    matrix: Vec<f64>,
}

impl AxisTerm {
    fn accumulate(&self, input: &[C64], out: &mut [C64]) {
        let block = self.len * self.stride;
        let outer = input.len() / block;
        let mut line = vec![C64::new(0.0, 0.0); self.len];
        for o in 0..outer {
            for inner in 0..self.stride {
                let base = o * block + inner;
                for (b, slot) in line.iter_mut().enumerate() {
                    *slot = input[base + b * self.stride];
                }
                for a in 0..self.len {
                    let row = &self.matrix[a * self.len..(a + 1) * self.len];
                    let acc: C64 = row.iter().zip(&line).map(|(t, v)| v * *t).sum();
                    out[base + a * self.stride] += acc;
                }
            }
        }
    }
}

/// Circulant matrix `(1/L) Σ_q f(k_q) e^{i k_q (a−b) h}` on a periodic axis.
fn circulant(len: usize, spacing: f64, symbol: impl Fn(f64) -> f64) -> Vec<f64> {
    let axis = LatticeGrid::new(vec![len], vec![spacing]).expect("valid axis");
    let ks = axis.wavenumbers(0);
    let mut m = vec![0.0; len * len];
    for a in 0..len {
        for b in 0..len {
            let d = (a as f64 - b as f64) * spacing;
            m[a * len + b] = ks.iter().map(|&k| symbol(k) * (k * d).cos()).sum::<f64>() / len as f64;
        }
    }
    m
}

/// Hamiltonian `Σ_terms T_axis ⊗ 1 + V(x)` on configuration space.
#[derive(Clone, Debug, PartialEq)]
pub struct Hamiltonian {
    dim: usize,
    terms: Vec<AxisTerm>,
    potential: DiagonalField,
}

impl Hamiltonian {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
            potential: DiagonalField::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self) -> &DiagonalField {
        &self.potential
    }

    pub fn has_kinetic(&self) -> bool {
        !self.terms.is_empty()
    }

    /// Adds a diagonal potential.
    pub fn with_potential(mut self, extra: &DiagonalField) -> Self {
        self.potential = self.potential.add(extra);
        self
    }

    /// `H v`.
    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::from_iterator(self.dim, v.iter().zip(self.potential.values()).map(|(z, p)| z * *p));
        for term in &self.terms {
            term.accumulate(v.as_slice(), out.as_mut_slice());
        }
        out
    }

    /// `−i[H, ρ]`.
    pub fn commutator(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.dim;
        let mut out = DMatrix::<C64>::zeros(d, d);
        let pot = self.potential.values();
        for y in 0..d {
            for x in 0..d {
                out[(x, y)] = C64::new(0.0, -(pot[x] - pot[y])) * rho[(x, y)];
            }
        }
        if self.terms.is_empty() {
            return out;
        }
        // Hρ column by column; ρH = (Hρ†)† since H is Hermitian.
        let mut left = DMatrix::<C64>::zeros(d, d);
        let mut right = DMatrix::<C64>::zeros(d, d);
        let rho_adj = rho.adjoint();
        let src = rho.as_slice();
        let src_adj = rho_adj.as_slice();
        let lbuf = left.as_mut_slice();
        let rbuf = right.as_mut_slice();
        for y in 0..d {
            let cols = y * d..(y + 1) * d;
            for term in &self.terms {
                term.accumulate(&src[cols.clone()], &mut lbuf[cols.clone()]);
                term.accumulate(&src_adj[cols.clone()], &mut rbuf[cols.clone()]);
            }
        }
        let right = right.adjoint();
        let minus_i = C64::new(0.0, -1.0);
        out += (left - right) * minus_i;
        out
    }

    /// Dense matrix, for oracles and small systems.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(self.dim, self.dim);
        for x in 0..self.dim {
            let e = DVector::from_fn(
                self.dim,
                |i, _| {
                    if i == x {
                        C64::new(1.0, 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                },
            );
            m.set_column(x, &self.apply(&e));
        }
        m
    }
}

/// Free Hamiltonian `Σ_n −∇²_n/2m_n` (spectral multiplier `k²/2m`) plus the
/// particles' external potentials.
pub fn kinetic_hamiltonian(space: &ConfigSpace) -> Hamiltonian {
    let dim = space.dim();
    let mut terms = Vec::new();
    for ax in space.tensor_axes() {
        let p = space.particles().get(ax.particle);
        if !p.kinetic {
            continue;
        }
        let m = p.mass;
        let h = space.grid().spacing()[ax.axis];
        terms.push(AxisTerm {
            len: ax.len,
            stride: ax.stride,
            matrix: circulant(ax.len, h, |k| k * k / (2.0 * m)),
        });
    }
    let mut potential = vec![0.0; dim];
    for (n, p) in space.particles().iter().enumerate() {
        if let Some(ext) = &p.external {
            for (x, v) in potential.iter_mut().enumerate() {
                *v += ext[space.decode(x)[n]];
            }
        }
    }
    Hamiltonian {
        dim,
        terms,
        potential: DiagonalField::new(potential),
    }
}

/// Total momentum `Σ_n p_n` along `axis`, with the spectral multiplier `k`
/// (the unpaired Nyquist mode is dropped so the operator stays Hermitian).
pub fn total_momentum(space: &ConfigSpace, axis: usize) -> DMatrix<C64> {
    let dim = space.dim();
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    for ax in space.tensor_axes().into_iter().filter(|a| a.axis == axis) {
        let len = ax.len;
        let h = space.grid().spacing()[axis];
        let g = LatticeGrid::new(vec![len], vec![h]).expect("valid axis");
        let ks = g.wavenumbers(0);
        // p_ab = (1/L) Σ_q k_q e^{i k_q (a−b) h}; purely imaginary, antisymmetric.
        let mut p = vec![C64::new(0.0, 0.0); len * len];
        for a in 0..len {
            for b in 0..len {
                let d = (a as f64 - b as f64) * h;
                let mut acc = C64::new(0.0, 0.0);
                for (q, &k) in ks.iter().enumerate() {
                    if len % 2 == 0 && q == len / 2 {
                        continue;
                    }
                    acc += C64::from_polar(k, k * d);
                }
                p[a * len + b] = acc / len as f64;
            }
        }
        let block = len * ax.stride;
        for o in 0..dim / block {
            for inner in 0..ax.stride {
                let base = o * block + inner;
                for a in 0..len {
                    for b in 0..len {
                        m[(base + a * ax.stride, base + b * ax.stride)] += p[a * len + b];
                    }
                }
            }
        }
    }
    m
}

/// `−[D,[D,ρ]]`, element `(x,y) = −(D(x) − D(y))² ρ_xy`.
pub fn apply_double_commutator(d: &DiagonalField, rho: &DensityMatrix) -> Result<DensityMatrix, LatticeError> {
    apply_double_commutator_pair(d, d, 1.0, rho)
}

/// `−w[D₁,[D₂,ρ]]`, element `(x,y) = −w (D₁(x)−D₁(y))(D₂(x)−D₂(y)) ρ_xy`.
pub fn apply_double_commutator_pair(
    d1: &DiagonalField,
    d2: &DiagonalField,
    weight: f64,
    rho: &DensityMatrix,
) -> Result<DensityMatrix, LatticeError> {
    let n = rho.dim();
    if d1.len() != n || d2.len() != n {
        return Err(LatticeError::DimensionMismatch {
            expected: n,
            found: if d1.len() != n { d1.len() } else { d2.len() },
        });
    }
    let a = d1.values();
    let b = d2.values();
    Ok(DensityMatrix::new(DMatrix::from_fn(n, n, |x, y| {
        rho.matrix()[(x, y)] * (-weight * (a[x] - a[y]) * (b[x] - b[y]))
    })))
}
