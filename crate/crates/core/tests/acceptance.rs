//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails.

mod common;

use std::io::Write;
use std::time::Instant;

use collapse_core::analysis::{
    closed_form_rate, csl_backaction_slope, kappa_scan, linearity_witness, pair_potential_curve, rate_profile,
};
use collapse_core::config::RunConfig;
use collapse_core::engine::trajectory::{evolve, mean_final_state, trajectory_rng, QuantumState};
use collapse_core::engine::{hfb_identity_check, FeedbackSpec, Generator, MonitoringSpec, Scheme};
use collapse_core::gravity::{build_model, DecoherenceRoute, Mode, ModelKind, ModelSpec};
use collapse_core::jobs::execute_run;
use collapse_core::kernels::{CorrelationKernel, MatrixKernel, NoiseField};
use collapse_core::lattice::{
    kinetic_hamiltonian, ConfigSpace, DensityMatrix, DiagonalField, LaplacianSymbol, LatticeGrid, Particle,
    ParticleSet, StateVector, C64,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pair_potential_emergence() -> Outcome {
    let start = Instant::now();
    let grid = LatticeGrid::cubic(64, 3, 1.0).unwrap();
    let l = grid.extent(0);
    let extent = [l; 3];
    let alpha = 3.5 / l;
    let (m1, m2, g) = (1.0, 2.0, 0.7);
    let separations: Vec<usize> = (8..=16).collect();
    let e_far = ewald(extent, [l / 2.0, 0.0, 0.0], alpha);
    let mut worst: f64 = 0.0;
    for symbol in [LaplacianSymbol::Spectral, LaplacianSymbol::FiniteDifference] {
        let spec = ModelSpec {
            laplacian: symbol,
            ..ModelSpec::csl(1.0, 1.0, g)
        };
        let rows = pair_potential_curve(&spec, &grid, [m1, m2], 0, &separations).unwrap();
        for r in rows {
            let e = ewald(extent, [r.d, 0.0, 0.0], alpha);
            let corrected = r.v_raw + g * m1 * m2 * ((e - e_far) - 1.0 / r.d);
            let newton = -g * m1 * m2 / r.d;
            worst = worst.max((corrected / newton - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 0.02 && secs < 10.0,
        format!("max |V/V_Newton − 1| = {worst:.2e} over d ∈ [8, 16] on 64³, both symbols, {secs:.1} s"),
    )
}

fn no_self_interaction() -> Outcome {
    let grid = LatticeGrid::cubic(8, 3, 1.0).unwrap();
    let space = ConfigSpace::full(grid, ParticleSet::new(vec![Particle::new(1.3)]).unwrap()).unwrap();
    let mut spread: f64 = 0.0;
    for spec in [ModelSpec::csl(1.0, 1.0, 0.8), ModelSpec::dp(1.0, 2.0, 0.8)] {
        let v = build_model(&spec, &space).unwrap().backaction_hamiltonian();
        spread = spread.max(v.spread());
    }
    let fields: Vec<DiagonalField> = [0.1, 1.0, 10.0]
        .iter()
        .map(|&gamma| {
            build_model(&ModelSpec::csl(1.0, gamma, 0.8), &space)
                .unwrap()
                .backaction_hamiltonian()
        })
        .collect();
    let gamma_diff = fields[1..]
        .iter()
        .flat_map(|f| f.values().iter().zip(fields[0].values()).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    outcome(
        spread < 1e-10 && gamma_diff < 1e-14,
        format!("V spread {spread:.1e} on 8³; max change under γ ∈ {{0.1, 1, 10}} {gamma_diff:.1e}"),
    )
}

fn backaction_linearity() -> Outcome {
    let start = Instant::now();
    let n = 32;
    let grid = LatticeGrid::cubic(n, 3, 1.0).unwrap();
    let (g, m, gamma) = (1.0, 1.0, 1.0);
    let spec = ModelSpec::csl(1.0, gamma, g);
    let separations: Vec<usize> = (3..=n / 4).collect();
    let profile = rate_profile(&spec, &grid, m, 0, &separations).unwrap();
    let coefficient = g * g * m * m / (2.0 * gamma);
    let ratios: Vec<f64> = profile
        .rows
        .iter()
        .map(|r| {
            let image = periodic_coulomb_difference_norm(n as f64, r.d, 64) - 4.0 * std::f64::consts::PI * r.d;
            (r.rate.backaction - coefficient * image) / r.d
        })
        .collect();
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (max - min) / min;
    let quad_err = [1.0, 3.0, 8.0]
        .iter()
        .map(|&d| (coulomb_difference_norm_quadrature(d) / (4.0 * std::f64::consts::PI * d) - 1.0).abs())
        .fold(0.0f64, f64::max);
    let slope = csl_backaction_slope(g, m, gamma);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        spread < 0.05 && quad_err < 0.01 && secs < 5.0,
        format!(
            "Γ_ba/d spread {:.1}% over d ∈ [3, {}] (image-corrected, 32³); quadrature error {quad_err:.1e}; \
             slope derived {:.4} vs stated {:.4} (ratio {}, reported only); {secs:.1} s",
            spread * 100.0,
            n / 4,
            slope.derived,
            slope.stated,
            slope.ratio
        ),
    )
}

fn intrinsic_rate_shape() -> Outcome {
    let sigma = 1.0;
    let grid = LatticeGrid::new(vec![256, 16, 16], vec![0.25, 0.5, 0.5]).unwrap();
    let spec = ModelSpec {
        feedback: false,
        ..ModelSpec::csl(sigma, 1.0, 1.0)
    };
    let profile = rate_profile(&spec, &grid, 1.0, 0, &[1, 2, 32, 64]).unwrap();
    let rate: Vec<f64> = profile.rows.iter().map(|r| r.rate.intrinsic).collect();
    let short = rate[1] / rate[0];
    let long = rate[3] / rate[2];
    let oracle_short = csl_rate_shape(0.5, sigma) / csl_rate_shape(0.25, sigma);
    outcome(
        (3.8..=4.0).contains(&short) && (1.0..=1.1).contains(&long) && (short / oracle_short - 1.0).abs() < 0.01,
        format!("Γ(2d)/Γ(d) = {short:.4} at d = σ/4 (Gaussian oracle {oracle_short:.4}), {long:.6} at d = 8σ"),
    )
}

fn dp_unification() -> Outcome {
    let grid = LatticeGrid::cubic(4, 3, 1.0).unwrap();
    let space = ConfigSpace::full(grid.clone(), ParticleSet::new(vec![Particle::new(1.0)]).unwrap()).unwrap();
    let base = ModelSpec::dp(1.0, 2.0, 0.5);
    let with = |route| {
        build_model(
            &ModelSpec {
                decoherence: Some(route),
                ..base.clone()
            },
            &space,
        )
        .unwrap()
    };
    let split = with(DecoherenceRoute::Split);
    let united = with(DecoherenceRoute::United);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dt = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let rho = random_density(space.dim(), &mut rng);
        let action = |m: &collapse_core::gravity::Model| {
            (m.generator()
                .unwrap()
                .me_step(&rho, m.hamiltonian(), dt)
                .unwrap()
                .matrix()
                - rho.matrix())
                / C64::new(dt, 0.0)
        };
        let a = action(&split);
        let b = action(&united);
        worst = worst.max((&a - &b).camax() / a.camax());
    }
    let kappas = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let scan = kappa_scan(&base, &grid, 1.0, 0, 2, &kappas).unwrap();
    let y = grid.site(&[2, 0, 0]);
    let entry = closed_form_rate(&split, 0, y).unwrap();
    let doubling = (entry.total / entry.intrinsic - 2.0).abs();
    outcome(
        worst < 1e-10 && scan.argmin == 2.0 && doubling < 1e-10,
        format!(
            "split vs united max relative difference {worst:.1e} on 20 states (dim 64); κ-scan argmin {}; \
             |total/intrinsic − 2| = {doubling:.1e}",
            scan.argmin
        ),
    )
}

fn ensemble_matches_master_equation() -> Outcome {
    let start = Instant::now();
    let space = chain_space(16, 2, 1.0, true);
    let model = build_model(&ModelSpec::csl(1.0, 1.0, 0.03), &space).unwrap();
    let initial = QuantumState::Mixed(cat(16, 4, 11).projector());
    let (dt, steps, count) = (1e-3, 1000, 2000);
    let conditional = model.propagator(Mode::Conditional, Scheme::EulerMaruyama);
    let mean = mean_final_state(conditional.as_ref(), &initial, dt, steps, 17, 0, count).unwrap();
    let unconditional = model.propagator(Mode::Unconditional, Scheme::EulerMaruyama);
    let me = evolve(unconditional.as_ref(), &initial, dt, steps, &mut trajectory_rng(0, 0))
        .unwrap()
        .density();
    let distance = mean.trace_distance(&me);
    let tolerance = 5.0 / (count as f64).sqrt();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        distance < tolerance && secs < 120.0,
        format!("trace distance {distance:.4} < {tolerance:.3} (2000 trajectories, 16 sites, t = 1), {secs:.1} s"),
    )
}

fn mean_purity_defect(model: &collapse_core::gravity::Model, scheme: Scheme, dt: f64, trajectories: usize) -> f64 {
    let prop = model.propagator(Mode::Conditional, scheme);
    let dim = model.space().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let initial = QuantumState::Mixed(random_state(dim, &mut rng).projector());
    let steps = (1.0 / dt).round() as usize;
    (0..trajectories)
        .map(|i| {
            let end = evolve(prop.as_ref(), &initial, dt, steps, &mut trajectory_rng(23, i)).unwrap();
            (1.0 - end.purity()).abs()
        })
        .sum::<f64>()
        / trajectories as f64
}

fn conditional_purity() -> Outcome {
    let space = chain_space(8, 4, 1.0, true);
    let spec = ModelSpec {
        feedback: false,
        ..ModelSpec::csl(1.0, 1.0, 1.0)
    };
    let model = build_model(&spec, &space).unwrap();
    let dts = [1e-2, 1e-3, 1e-4];
    let defects: Vec<f64> = dts
        .iter()
        .map(|&dt| mean_purity_defect(&model, Scheme::Milstein, dt, 20))
        .collect();
    let slope = loglog_slope(&dts, &defects);
    let em: Vec<f64> = dts[..2]
        .iter()
        .map(|&dt| mean_purity_defect(&model, Scheme::EulerMaruyama, dt, 20))
        .collect();
    let em_slope = loglog_slope(&dts[..2], &em);
    outcome(
        (slope - 1.0).abs() <= 0.2,
        format!(
            "|1 − Tr ρ²| at t = 1: {:.2e}, {:.2e}, {:.2e} for dt = 1e-2, 1e-3, 1e-4; slope {slope:.3} \
             (Milstein; Euler–Maruyama slope {em_slope:.2})",
            defects[0], defects[1], defects[2]
        ),
    )
}

fn composition_order() -> Outcome {
    let grid = LatticeGrid::cubic(4, 1, 1.0).unwrap();
    let space = ConfigSpace::full(grid, ParticleSet::new(vec![Particle::new(1.0)]).unwrap()).unwrap();
    let gamma = 1.5;
    let a = DiagonalField::new(vec![0.3, -0.7, 1.1, 0.2]);
    let b = DiagonalField::new(vec![0.5, 0.1, -0.4, 0.9]);
    let generator = Generator::new(
        &space,
        MonitoringSpec::Dense {
            observables: vec![a],
            kernel: MatrixKernel::scalar(gamma).unwrap(),
        },
        FeedbackSpec::Dense(vec![b]),
    )
    .unwrap();
    let h = kinetic_hamiltonian(&space);
    let rho = random_density(4, &mut ChaCha8Rng::seed_from_u64(8));
    let dts = [1e-3, 1e-4, 1e-5, 1e-6];
    let diffs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let noise = NoiseField::new(vec![1.0 / (gamma * dt).sqrt()]);
            let inc = generator.increments(&noise, dt).unwrap();
            let composed = generator.composed_step(&rho, &h, &inc, dt).unwrap();
            let combined = generator.combined_step(&rho, &h, &inc, dt).unwrap();
            (composed.matrix() - combined.matrix()).camax()
        })
        .collect();
    let slope = loglog_slope(&dts, &diffs);
    outcome(
        (slope - 1.5).abs() <= 0.2,
        format!(
            "one-step difference {:.2e} … {:.2e} over dt ∈ [1e-6, 1e-3]; slope {slope:.3}",
            diffs[3], diffs[0]
        ),
    )
}

fn minus_cat(dim: usize, x: usize, y: usize) -> StateVector {
    let mut v = DVector::zeros(dim);
    v[x] = C64::new(1.0, 0.0);
    v[y] = C64::new(-1.0, 0.0);
    StateVector::normalized(v).unwrap()
}

fn sn_distance_curve(
    model: &collapse_core::gravity::Model,
    a: &[QuantumState],
    b: &[QuantumState],
    dt: f64,
    checkpoints: usize,
    every: usize,
) -> Vec<(usize, f64)> {
    let prop = model.propagator(Mode::Conditional, Scheme::EulerMaruyama);
    let mut rng = trajectory_rng(0, 0);
    let mut sa: Vec<QuantumState> = a.to_vec();
    let mut sb: Vec<QuantumState> = b.to_vec();
    let mean = |s: &[QuantumState]| {
        let m = s.iter().fold(DMatrix::zeros(s[0].dim(), s[0].dim()), |acc, q| {
            acc + q.density().matrix()
        });
        DensityMatrix::new(m / C64::new(s.len() as f64, 0.0))
    };
    let mut curve = Vec::new();
    for c in 1..=checkpoints {
        for s in sa.iter_mut().chain(sb.iter_mut()) {
            *s = evolve(prop.as_ref(), s, dt, every, &mut rng).unwrap();
        }
        curve.push((c * every, mean(&sa).trace_distance(&mean(&sb))));
    }
    curve
}

fn linearity_contrast() -> Outcome {
    let dim = 16;
    let (x, y) = (4, 11);
    let branches = |pure: bool| {
        let wrap = |s: StateVector| {
            if pure {
                QuantumState::Pure(s)
            } else {
                QuantumState::Mixed(s.projector())
            }
        };
        (
            vec![wrap(cat(dim, x, y)), wrap(minus_cat(dim, x, y))],
            vec![wrap(StateVector::basis(dim, x)), wrap(StateVector::basis(dim, y))],
        )
    };
    let csl = build_model(&ModelSpec::csl(1.0, 1.0, 0.03), &chain_space(dim, 2, 1.0, true)).unwrap();
    let (a, b) = branches(false);
    let trajectories = 1000;
    let monitored = linearity_witness(
        csl.propagator(Mode::Conditional, Scheme::EulerMaruyama).as_ref(),
        &a,
        &b,
        1e-3,
        500,
        41,
        trajectories,
        true,
    )
    .unwrap();
    let exact = linearity_witness(
        csl.propagator(Mode::Unconditional, Scheme::EulerMaruyama).as_ref(),
        &a,
        &b,
        1e-3,
        500,
        0,
        1,
        false,
    )
    .unwrap();

    let sn = build_model(
        &ModelSpec {
            g: 1.0,
            ..ModelSpec::new(ModelKind::SchrodingerNewton)
        },
        &chain_space(dim, 2, 1.0, true),
    )
    .unwrap();
    let (pa, pb) = branches(true);
    // Pilot at twice the step picks the comparison time and sets the threshold.
    let pilot = sn_distance_curve(&sn, &pa, &pb, 2e-3, 20, 100);
    let &(pilot_steps, pilot_distance) = pilot.iter().max_by(|p, q| p.1.total_cmp(&q.1)).unwrap();
    let threshold = (0.5 * pilot_distance).max(monitored.tolerance);
    let steps = pilot_steps * 2;
    let sn_report = linearity_witness(
        sn.propagator(Mode::Conditional, Scheme::EulerMaruyama).as_ref(),
        &pa,
        &pb,
        1e-3,
        steps,
        0,
        1,
        false,
    )
    .unwrap();
    outcome(
        monitored.linear && exact.linear && !sn_report.linear && sn_report.trace_distance > threshold,
        format!(
            "monitored: distance {:.4} < MC tolerance {:.3} ({trajectories} trajectories), master equation {:.1e}; \
             Schrödinger–Newton at t = {:.2}: {:.3} > pilot threshold {threshold:.3}",
            monitored.trace_distance,
            monitored.tolerance,
            exact.trace_distance,
            steps as f64 * 1e-3,
            sn_report.trace_distance
        ),
    )
}

fn run_config() -> RunConfig {
    RunConfig::from_toml(
        r#"
[grid]
dims = [12, 4, 4]
particle_axes = 1

[[particles]]
mass = 1.0
initial = { kind = "cat", centers = [[2.0], [8.0]] }

[model]
kind = "csl"
g = 0.3

[integration]
dt = 1e-4
steps = 100
ensemble = 8
seed = 99
"#,
    )
    .unwrap()
}

fn record_bits(config: &RunConfig, threads: usize) -> Vec<u64> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let out = pool.install(|| execute_run(config, None)).unwrap();
    let mut bits = Vec::new();
    for r in &out.records {
        for i in 0..r.times.len() {
            bits.push(r.trace[i].to_bits());
            bits.push(r.purity[i].to_bits());
            bits.extend(r.observables[i].iter().map(|v| v.to_bits()));
            bits.extend(r.offdiagonal[i].iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]));
        }
        bits.extend(
            r.final_state
                .density()
                .matrix()
                .iter()
                .flat_map(|z| [z.re.to_bits(), z.im.to_bits()]),
        );
    }
    bits
}

fn invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    // Trace and Hermiticity per step along a conditional trajectory with feedback.
    let space = chain_space(12, 2, 1.0, true);
    let model = build_model(&ModelSpec::csl(1.0, 1.0, 0.1), &space).unwrap();
    let mut drift_trace: f64 = 0.0;
    let mut drift_herm: f64 = 0.0;
    for mode in [Mode::Conditional, Mode::Composed, Mode::Unconditional] {
        let prop = model.propagator(mode, Scheme::EulerMaruyama);
        let mut state = QuantumState::Mixed(random_density(space.dim(), &mut rng));
        let mut step_rng = trajectory_rng(1, 0);
        for _ in 0..300 {
            let before = state.density();
            state = prop.step(state, &mut step_rng, 1e-4, false).unwrap().0;
            let after = state.density();
            drift_trace = drift_trace.max((after.trace() - before.trace()).norm());
            drift_herm = drift_herm.max(after.hermiticity_defect() - before.hermiticity_defect());
        }
    }

    // Feedback cross term: symmetric families and the lattice Newton feedback.
    let dim = 10;
    let rho = random_density(dim, &mut rng);
    let aa: Vec<DiagonalField> = (0..3)
        .map(|_| DiagonalField::new((0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()))
        .collect();
    let c = DMatrix::from_fn(3, 3, |i, j| 0.2 * (i + j) as f64 + if i == j { 1.0 } else { 0.0 });
    let bb: Vec<DiagonalField> = (0..3)
        .map(|nu| {
            DiagonalField::new(
                (0..dim)
                    .map(|x| (0..3).map(|mu| c[(nu, mu)] * aa[mu][x]).sum())
                    .collect(),
            )
        })
        .collect();
    let mut hfb = hfb_identity_check(&aa, &bb, &rho).defect;
    let s = model.generator().unwrap().s().unwrap();
    hfb = hfb.max((s - s.transpose()).amax());

    // Kernel inverse round trip.
    let grid = LatticeGrid::new(vec![8, 6, 4], vec![1.0, 0.7, 1.3]).unwrap();
    let field: Vec<f64> = (0..grid.num_sites()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut roundtrip: f64 = 0.0;
    for kernel in [
        CorrelationKernel::Csl { gamma: 2.5 },
        CorrelationKernel::Dp { kappa: 2.0, g: 0.4 },
        CorrelationKernel::Gaussian {
            gamma: 1.0,
            length: 0.8,
        },
    ] {
        for symbol in [LaplacianSymbol::FiniteDifference, LaplacianSymbol::Spectral] {
            roundtrip = roundtrip.max(kernel.on(&grid, symbol).unwrap().roundtrip_defect(&field).unwrap());
        }
    }

    // Seed determinism across thread counts.
    let config = run_config();
    let one = record_bits(&config, 1);
    let four = record_bits(&config, 4);
    let again = record_bits(&config, 4);
    let deterministic = one == four && four == again;

    let secs = start.elapsed().as_secs_f64();
    outcome(
        drift_trace < 1e-12 && drift_herm < 1e-12 && hfb < 1e-12 && roundtrip < 1e-12 && deterministic && secs < 300.0,
        format!(
            "trace drift {drift_trace:.1e}, Hermiticity drift {drift_herm:.1e}, Hfb {hfb:.1e}, \
             kernel round trip {roundtrip:.1e}, seed determinism {}, {secs:.1} s",
            if deterministic { "byte-exact" } else { "BROKEN" }
        ),
    )
}

#[test]
fn acceptance_criteria() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 10] = [
        ("pair potential emergence", pair_potential_emergence),
        ("no dynamical self-interaction", no_self_interaction),
        ("CSL back-action decoherence linearity", backaction_linearity),
        ("CSL intrinsic rate shape", intrinsic_rate_shape),
        ("DP unification", dp_unification),
        ("ensemble and master equation agree", ensemble_matches_master_equation),
        ("conditional purity", conditional_purity),
        ("feedback composition order", composition_order),
        ("linearity witness", linearity_contrast),
        ("invariant suite", invariants),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        // The raw handle bypasses test output capture.
        writeln!(
            std::io::stderr().lock(),
            "{} criterion {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        )
        .unwrap();
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
