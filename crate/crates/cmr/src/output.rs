//! Result files: CSV tables, the PGM heatmap and JSON echoes.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), enough to
//! round-trip every `f64` exactly.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use cmr_core::experiment::{
    BSweepResult, BoundTrial, ConcentrationReport, GradcheckReport, PhaseDiagramResult, TrialRecord,
};
use cmr_core::vision::ClassifyResult;
use serde::Serialize;

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// `<outdir>/<name>-<UTC timestamp>`, with a numeric suffix if that exists.
pub fn create_run_dir(outdir: &Path, name: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(outdir)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = outdir.join(format!("{name}-{stamp}"));
    let mut dir = base.clone();
    let mut k = 1;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn trial_row(r: &TrialRecord, with_b: bool) -> Vec<String> {
    let mut row = Vec::with_capacity(9);
    if with_b {
        row.push(r.bands.to_string());
    }
    row.extend([
        r.cell_i.to_string(),
        r.cell_t.to_string(),
        r.trial.to_string(),
        r.seed.to_string(),
        opt_f64(r.dist),
        opt_f64(r.sq_corr),
        u8::from(r.success).to_string(),
        r.error_kind.clone().unwrap_or_default(),
    ]);
    row
}

const TRIAL_HEADER: [&str; 8] = ["cell_i", "cell_t", "trial", "seed", "dist", "sq_corr", "success", "error_kind"];

pub fn write_phase(dir: &Path, res: &PhaseDiagramResult) -> io::Result<()> {
    write_csv(&dir.join("trials.csv"), &TRIAL_HEADER, res.records.iter().map(|r| trial_row(r, false)))?;
    let cfg = &res.config;
    let mut rows = Vec::new();
    for (row, &i) in cfg.i_values.iter().enumerate() {
        for (col, &t) in cfg.t_values.iter().enumerate() {
            let rate = res.success_rate[row][col];
            let successes = (rate * cfg.trials_per_cell as f64).round() as usize;
            rows.push(vec![
                i.to_string(),
                t.to_string(),
                cfg.trials_per_cell.to_string(),
                successes.to_string(),
                fmt_f64(rate),
            ]);
        }
    }
    write_csv(&dir.join("summary.csv"), &["cell_i", "cell_t", "trials", "successes", "success_rate"], rows)?;
    fs::write(dir.join("success.pgm"), heatmap_pgm(&res.success_rate, &cfg.i_values, &cfg.t_values))
}

/// 8-bit binary PGM: one pixel per cell, rows by decreasing `I`, columns by
/// increasing `T`, gray level `round(255·rate)`.
pub fn heatmap_pgm(rates: &[Vec<f64>], i_values: &[usize], t_values: &[usize]) -> Vec<u8> {
    let mut rows: Vec<usize> = (0..i_values.len()).collect();
    rows.sort_by_key(|&r| std::cmp::Reverse(i_values[r]));
    let mut cols: Vec<usize> = (0..t_values.len()).collect();
    cols.sort_by_key(|&c| t_values[c]);
    let mut out = format!("P5\n{} {}\n255\n", cols.len(), rows.len()).into_bytes();
    for &r in &rows {
        for &c in &cols {
            out.push((255.0 * rates[r][c].clamp(0.0, 1.0)).round() as u8);
        }
    }
    out
}

pub fn write_sweep(dir: &Path, res: &BSweepResult) -> io::Result<()> {
    let mut header = vec!["b"];
    header.extend(TRIAL_HEADER);
    write_csv(&dir.join("trials.csv"), &header, res.records.iter().map(|r| trial_row(r, true)))?;
    let rows = res
        .config
        .b_values
        .iter()
        .enumerate()
        .map(|(k, b)| vec![b.to_string(), fmt_f64(res.success_rate[k]), fmt_f64(res.median_sq_corr[k])]);
    write_csv(&dir.join("summary.csv"), &["b", "success_rate", "median_sq_corr"], rows)
}

pub fn write_concentration(dir: &Path, report: &ConcentrationReport) -> io::Result<()> {
    let mut rows = Vec::new();
    for lvl in &report.levels {
        for (rep, e) in lvl.errors.iter().enumerate() {
            rows.push(vec![
                lvl.sample_size.to_string(),
                lvl.tasks.to_string(),
                lvl.samples.to_string(),
                rep.to_string(),
                fmt_f64(*e),
            ]);
        }
    }
    write_csv(&dir.join("errors.csv"), &["sample_size", "tasks", "samples", "repetition", "error"], rows)?;
    let rows = report
        .levels
        .iter()
        .map(|l| vec![l.sample_size.to_string(), fmt_f64(l.median), fmt_f64(l.q10), fmt_f64(l.q90)]);
    write_csv(&dir.join("summary.csv"), &["sample_size", "median", "q10", "q90"], rows)
}

fn bound_row(k: usize, t: &BoundTrial) -> Vec<String> {
    vec![
        k.to_string(),
        t.seed.to_string(),
        fmt_f64(t.eps1),
        fmt_f64(t.eps2),
        fmt_f64(t.dist),
        opt_f64(t.bound),
        u8::from(t.is_valid()).to_string(),
        u8::from(t.is_violation()).to_string(),
    ]
}

pub fn write_bound_trials(dir: &Path, report: &ConcentrationReport) -> io::Result<()> {
    write_csv(
        &dir.join("trials.csv"),
        &["trial", "seed", "eps1", "eps2", "dist", "bound", "valid", "violation"],
        report.bound_trials.iter().enumerate().map(|(k, t)| bound_row(k, t)),
    )
}

pub fn write_gradcheck(dir: &Path, report: &GradcheckReport) -> io::Result<()> {
    write_csv(
        &dir.join("instances.csv"),
        &["instance", "seed", "coordinates", "max_rel_error"],
        report
            .instances
            .iter()
            .enumerate()
            .map(|(k, g)| vec![k.to_string(), g.seed.to_string(), g.coordinates.to_string(), fmt_f64(g.max_rel_error)]),
    )
}

pub fn write_classify(dir: &Path, res: &ClassifyResult) -> io::Result<()> {
    write_csv(
        &dir.join("accuracy.csv"),
        &["method", "t_train", "repetition", "digit_a", "digit_b", "accuracy", "error_kind"],
        res.records.iter().map(|r| {
            vec![
                r.method.name().to_string(),
                r.t_train.to_string(),
                r.repetition.to_string(),
                r.digit_a.to_string(),
                r.digit_b.to_string(),
                fmt_f64(r.accuracy),
                r.error_kind.clone().unwrap_or_default(),
            ]
        }),
    )?;
    let mut rows = Vec::new();
    for s in &res.summary {
        for (rep, acc) in s.per_repetition.iter().enumerate() {
            rows.push(vec![
                s.method.name().to_string(),
                res.config.t_train.to_string(),
                rep.to_string(),
                fmt_f64(*acc),
            ]);
        }
    }
    write_csv(&dir.join("table.csv"), &["method", "t_train", "repetition", "mean_accuracy"], rows)
}

/// Prints one line to stdout; a closed pipe is not an error.
pub fn summary_line(line: &str) {
    let _ = writeln!(io::stdout(), "{line}");
}
