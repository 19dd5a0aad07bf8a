//! CSV and JSON artifacts for finished jobs.
//!
//! Units in headers are lattice units: `T` time, `L` length, `M` mass,
//! `E` energy, `1` dimensionless.

use collapse_core::analysis::{DecoherenceProfile, KappaScan, PairPotentialRow};
use collapse_core::engine::trajectory::TrajectoryRecord;
use collapse_core::jobs::{AnalysisOutcome, MeanSeries, RunOutcome};
use collapse_core::lattice::C64;
use collapse_core::wire::OutputFile;
use serde_json::json;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_file(name: impl Into<String>, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> OutputFile {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    OutputFile {
        name: name.into(),
        contents: String::from_utf8(bytes).expect("ascii csv"),
    }
}

fn json_file(name: impl Into<String>, value: &serde_json::Value) -> OutputFile {
    OutputFile {
        name: name.into(),
        contents: serde_json::to_string_pretty(value).expect("json value") + "\n",
    }
}

fn series_header(out: &RunOutcome, min_eig: bool, signals: bool) -> Vec<String> {
    let mut h = vec!["t [T]".to_string(), "trace [1]".into(), "purity [1]".into()];
    h.extend(out.observable_names.iter().map(|n| format!("{n} [L]")));
    for c in &out.coherence_names {
        h.push(format!("|{c}| [1]"));
        h.push(format!("re {c} [1]"));
        h.push(format!("im {c} [1]"));
    }
    if signals {
        h.extend(out.signal_names.iter().map(|n| format!("{n} [M/L^3]")));
    }
    if min_eig {
        h.push("min_eigenvalue [1]".into());
    }
    h
}

fn coherence_cells(row: &[C64]) -> impl Iterator<Item = String> + '_ {
    row.iter().flat_map(|z| [num(z.norm()), num(z.re), num(z.im)])
}

fn trajectory_csv(out: &RunOutcome, rec: &TrajectoryRecord) -> OutputFile {
    let min_eig = !rec.min_eigenvalue.is_empty();
    let signals = !rec.signals.is_empty();
    let rows = (0..rec.times.len()).map(|i| {
        let mut row = vec![num(rec.times[i]), num(rec.trace[i]), num(rec.purity[i])];
        row.extend(rec.observables[i].iter().map(|&v| num(v)));
        row.extend(coherence_cells(&rec.offdiagonal[i]));
        if signals {
            row.extend(rec.signals[i].iter().map(|&v| num(v)));
        }
        if min_eig {
            row.push(num(rec.min_eigenvalue[i]));
        }
        row
    });
    csv_file(
        format!("trajectory_{:05}.csv", rec.index),
        &series_header(out, min_eig, signals),
        rows,
    )
}

fn mean_csv(out: &RunOutcome, mean: &MeanSeries) -> OutputFile {
    let rows = (0..mean.times.len()).map(|i| {
        let mut row = vec![num(mean.times[i]), num(mean.trace[i]), num(mean.purity[i])];
        row.extend(mean.observables[i].iter().map(|&v| num(v)));
        row.extend(coherence_cells(&mean.offdiagonal[i]));
        row
    });
    csv_file("ensemble_mean.csv", &series_header(out, false, false), rows)
}

fn snapshots_csv(rec: &TrajectoryRecord) -> OutputFile {
    let header: Vec<String> = ["t [T]", "x", "y", "re [1]", "im [1]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = rec.snapshots.iter().flat_map(|(t, rho)| {
        let m = rho.matrix();
        let d = m.nrows();
        (0..d).flat_map(move |x| {
            (0..d).map(move |y| {
                vec![
                    num(*t),
                    x.to_string(),
                    y.to_string(),
                    num(m[(x, y)].re),
                    num(m[(x, y)].im),
                ]
            })
        })
    });
    csv_file(format!("snapshots_{:05}.csv", rec.index), &header, rows)
}

/// Files for a finished run; the summary is deterministic, the wall time goes
/// to `timing.json`.
pub fn run_files(out: &RunOutcome, wall_seconds: f64) -> Vec<OutputFile> {
    let mut files = Vec::new();
    let per_trajectory = out.config.output.per_trajectory || out.records.len() == 1;
    if per_trajectory {
        for rec in &out.records {
            files.push(trajectory_csv(out, rec));
            if !rec.snapshots.is_empty() {
                files.push(snapshots_csv(rec));
            }
        }
    }
    if let Some(mean) = &out.mean {
        files.push(mean_csv(out, mean));
    }
    let finals: Vec<_> = out
        .records
        .iter()
        .map(|r| {
            let rho = r.final_state.density();
            json!({
                "index": r.index,
                "trace": rho.trace().re,
                "purity": rho.purity(),
                "hermiticity_defect": rho.hermiticity_defect(),
                "min_eigenvalue": r.min_eigenvalue.iter().cloned().fold(f64::INFINITY, f64::min),
                "warnings": r.warnings,
            })
        })
        .collect();
    let names: Vec<String> = files.iter().map(|f| f.name.clone()).collect();
    let summary = json!({
        "config": out.config,
        "seed": out.config.integration.seed,
        "streams": out.records.len(),
        "dimension": out.dim,
        "stochastic": out.stochastic,
        "final": finals,
        "files": names,
    });
    files.push(json_file("summary.json", &summary));
    files.push(json_file("timing.json", &json!({ "wall_seconds": wall_seconds })));
    files
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn rate_csv(p: &DecoherenceProfile) -> OutputFile {
    csv_file(
        "rate.csv",
        &strings(&[
            "d [L]",
            "gamma_intrinsic [1/T]",
            "gamma_backaction [1/T]",
            "gamma_total [1/T]",
        ]),
        p.rows.iter().map(|r| {
            vec![
                num(r.d),
                num(r.rate.intrinsic),
                num(r.rate.backaction),
                num(r.rate.total),
            ]
        }),
    )
}

fn pair_csv(rows: &[PairPotentialRow]) -> OutputFile {
    csv_file(
        "pair_potential.csv",
        &strings(&["d [L]", "v_raw [E]", "v_corrected [E]", "ratio [1]"]),
        rows.iter()
            .map(|r| vec![num(r.d), num(r.v_raw), num(r.v_corrected), num(r.ratio)]),
    )
}

fn kappa_csv(scan: &KappaScan) -> OutputFile {
    csv_file(
        "kappa_scan.csv",
        &strings(&["kappa [1]", "gamma_total [1/T]"]),
        scan.rows.iter().map(|&(k, r)| vec![num(k), num(r)]),
    )
}

pub fn analysis_files(out: &AnalysisOutcome, config: &collapse_core::config::RunConfig) -> Vec<OutputFile> {
    match out {
        AnalysisOutcome::Rate { profile, slope } => vec![
            rate_csv(profile),
            json_file(
                "summary.json",
                &json!({ "analysis": "rate", "config": config, "rows": profile.rows.len(), "backaction_slope": slope }),
            ),
        ],
        AnalysisOutcome::PairPotential(rows) => vec![
            pair_csv(rows),
            json_file(
                "summary.json",
                &json!({ "analysis": "pair-potential", "config": config, "rows": rows.len() }),
            ),
        ],
        AnalysisOutcome::KappaScan(scan) => vec![
            kappa_csv(scan),
            json_file(
                "summary.json",
                &json!({ "analysis": "kappa-scan", "config": config, "argmin": scan.argmin }),
            ),
        ],
        AnalysisOutcome::Linearity(report) => vec![json_file(
            "linearity.json",
            &json!({ "analysis": "linearity", "config": config, "report": report }),
        )],
    }
}
