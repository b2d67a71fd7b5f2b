//! Run reports and artifact emission: `summary.json` (17-significant-digit
//! floats, stable schema), `partition.csv`, `solution.csv`, `rounds.csv`,
//! `error_breakdown.csv` and two self-contained SVG plots.

use crate::adaptive::{run_adaptive, AdaptiveError, AdaptiveResult, AdaptiveSettings};
use crate::field::{FullField, Payoff, TensorLevel1Payoff};
use crate::problems::{make_reference, Problem, ProblemError};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("full-solution error mode supports degree ≤ 2 (dense tensor states grow too fast); got {0}")]
    FullErrorDegree(usize),
}

/// One row of the comparison tables: tolerances, achieved errors, interval
/// counts per degree, and runtime.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub algorithm: String,
    pub example: String,
    pub field: String,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub p: f64,
    pub max_degree: usize,
    pub subdivisions: usize,
    pub seed: u64,
    pub horizon: Option<f64>,
    pub full_error: bool,
    pub converged: bool,
    pub rounds: usize,
    pub n_intervals: usize,
    pub intervals_by_degree: BTreeMap<String, usize>,
    pub payoff: Vec<f64>,
    pub estimated_error: Option<Vec<f64>>,
    pub estimated_error_norm: Option<f64>,
    pub corrected_payoff: Option<Vec<f64>>,
    pub true_payoff: Option<Vec<f64>>,
    pub true_error: Option<f64>,
    pub corrected_error: Option<f64>,
    pub min_interval_t0: f64,
    pub min_interval_t1: f64,
    pub min_interval_len: f64,
    pub total_work: f64,
    /// Wall-clock; the only field excluded from determinism comparisons.
    pub runtime_seconds: f64,
}

/// Everything needed to run one solve end to end.
pub struct RunSpec {
    pub settings: AdaptiveSettings,
    pub full_error: bool,
    pub want_reference: bool,
    pub seed: u64,
    pub horizon: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs the configured variant on a problem, optionally computes the
/// reference solution (8× the final interval count, max degree used, inner
/// tolerance /100, cached under `cache_dir`), and assembles the report.
pub fn execute_run(
    problem: &Problem,
    spec: &RunSpec,
    cache_dir: Option<&Path>,
) -> Result<(RunReport, AdaptiveResult), RunError> {
    let settings = &spec.settings;
    let result = if spec.full_error {
        let degree_cap = settings.max_degree.max(settings.starting_degree());
        if degree_cap > 2 {
            return Err(RunError::FullErrorDegree(degree_cap));
        }
        let full = Arc::new(FullField::new(
            problem.field.clone(),
            problem.y0.clone(),
            degree_cap,
        ));
        let state_len = full.state_len();
        let payoff: Arc<dyn Payoff> = Arc::new(TensorLevel1Payoff {
            inner: problem.payoff.clone(),
            base_point: problem.y0.clone(),
            state_len,
        });
        let mut z0 = vec![0.0; state_len];
        z0[0] = 1.0;
        run_adaptive(full, payoff, &z0, &problem.cache, settings)?
    } else {
        run_adaptive(
            problem.field.clone(),
            problem.payoff.clone(),
            &problem.y0,
            &problem.cache,
            settings,
        )?
    };

    let (mut true_payoff, mut true_error, mut corrected_error) = (None, None, None);
    if spec.want_reference && !spec.full_error {
        let n_ref = result.partition.len() * 8;
        let deg_ref = result.partition.max_degree();
        let tol_eff = settings
            .tol_abs
            .max(settings.tol_rel * norm(&result.payoff_terminal));
        let inner = settings
            .ode_tol_override
            .unwrap_or(settings.ode_tol_scale * tol_eff / result.partition.len() as f64);
        let y_ref = make_reference(problem, n_ref, deg_ref, inner / 100.0, cache_dir)?;
        let mut g_ref = vec![0.0; problem.payoff.dims().0];
        problem.payoff.eval_f64(&y_ref, &mut g_ref);
        let diff: Vec<f64> = g_ref
            .iter()
            .zip(&result.payoff_terminal)
            .map(|(a, b)| a - b)
            .collect();
        true_error = Some(norm(&diff));
        if let Some(corr) = &result.corrected_payoff {
            let cdiff: Vec<f64> = g_ref.iter().zip(corr).map(|(a, b)| a - b).collect();
            corrected_error = Some(norm(&cdiff));
        }
        true_payoff = Some(g_ref);
    }

    let (min_k, min_len) = result
        .partition
        .times
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k, w[1] - w[0]))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("nonempty partition");

    let report = RunReport {
        algorithm: settings.algorithm.name().to_string(),
        example: problem.name.clone(),
        field: problem.field_name.clone(),
        tol_abs: settings.tol_abs,
        tol_rel: settings.tol_rel,
        p: settings.p,
        max_degree: settings.max_degree,
        subdivisions: settings.subdivisions,
        seed: spec.seed,
        horizon: spec.horizon,
        full_error: spec.full_error,
        converged: result.converged,
        rounds: result.rounds.len(),
        n_intervals: result.partition.len(),
        intervals_by_degree: result
            .intervals_by_degree()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        payoff: result.payoff_terminal.clone(),
        estimated_error: result.estimate.clone(),
        estimated_error_norm: result.estimate.as_ref().map(|_| result.estimate_norm),
        corrected_payoff: result.corrected_payoff.clone(),
        true_payoff,
        true_error,
        corrected_error,
        min_interval_t0: result.partition.times[min_k],
        min_interval_t1: result.partition.times[min_k + 1],
        min_interval_len: min_len,
        total_work: result.total_work,
        runtime_seconds: result.wall_seconds,
    };
    Ok((report, result))
}

/// serde_json formatter printing every float with 17 significant digits.
struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:e}")
    }
}

/// Serializes with the 17-significant-digit float convention.
pub fn to_json_17<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFigFormatter);
    value.serialize(&mut ser).expect("serializable");
    String::from_utf8(out).expect("utf8 json")
}

/// Writes all artifacts of one run into `out_dir`.
pub fn write_artifacts(
    out_dir: &Path,
    report: &RunReport,
    result: &AdaptiveResult,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;

    std::fs::write(out_dir.join("summary.json"), to_json_17(report) + "\n")?;

    let mut partition = String::from("k,t_start,t_end,degree,length\n");
    for k in 0..result.partition.len() {
        let (t0, t1) = (result.partition.times[k], result.partition.times[k + 1]);
        partition.push_str(&format!(
            "{k},{t0:.16e},{t1:.16e},{},{:.16e}\n",
            result.partition.degrees[k],
            t1 - t0
        ));
    }
    std::fs::write(out_dir.join("partition.csv"), partition)?;

    let e = result.y_grid.first().map(|y| y.len()).unwrap_or(0);
    let mut solution = String::from("t");
    for i in 1..=e {
        solution.push_str(&format!(",y{i}"));
    }
    solution.push('\n');
    for (k, y) in result.y_grid.iter().enumerate() {
        solution.push_str(&format!("{:.16e}", result.partition.times[k]));
        for v in y {
            solution.push_str(&format!(",{v:.16e}"));
        }
        solution.push('\n');
    }
    std::fs::write(out_dir.join("solution.csv"), solution)?;

    let mut rounds = String::from("round,n_intervals,estimate,intervals_by_degree,seconds\n");
    for r in &result.rounds {
        let by_degree = r
            .intervals_by_degree
            .iter()
            .map(|(d, n)| format!("{d}:{n}"))
            .collect::<Vec<_>>()
            .join("|");
        rounds.push_str(&format!(
            "{},{},{:.16e},{},{:.16e}\n",
            r.round, r.n_intervals, r.estimate, by_degree, r.seconds
        ));
    }
    std::fs::write(out_dir.join("rounds.csv"), rounds)?;

    if let Some(breakdown) = &result.breakdown {
        std::fs::write(out_dir.join("error_breakdown.csv"), breakdown.to_csv())?;
    }

    std::fs::write(out_dir.join("solution.svg"), solution_svg(result))?;
    std::fs::write(out_dir.join("partition.svg"), partition_svg(result))?;
    Ok(())
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 360.0;
const PALETTE: [&str; 6] = [
    "#888888", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e",
];

/// Line plot of every solution component over time.
fn solution_svg(result: &AdaptiveResult) -> String {
    let times = &result.partition.times;
    let e = result.y_grid.first().map(|y| y.len()).unwrap_or(0);
    let (t0, t1) = (times[0], *times.last().unwrap());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in &result.y_grid {
        for &v in y {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |t: f64| (t - t0) / (t1 - t0) * (SVG_W - 60.0) + 50.0;
    let sy = |v: f64| SVG_H - 30.0 - (v - lo) / (hi - lo) * (SVG_H - 60.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"10\" y=\"16\" font-size=\"12\">solution components over time</text>\n"
    );
    for i in 0..e {
        let mut pts = String::new();
        for (k, y) in result.y_grid.iter().enumerate() {
            pts.push_str(&format!("{:.2},{:.2} ", sx(times[k]), sy(y[i])));
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            PALETTE[(i + 1) % PALETTE.len()],
            pts.trim_end()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Step plot of interval lengths (log scale) colored by degree.
fn partition_svg(result: &AdaptiveResult) -> String {
    let times = &result.partition.times;
    let (t0, t1) = (times[0], *times.last().unwrap());
    let lens: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &l in &lens {
        lo = lo.min(l.log10());
        hi = hi.max(l.log10());
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let sx = |t: f64| (t - t0) / (t1 - t0) * (SVG_W - 60.0) + 50.0;
    let sy = |v: f64| SVG_H - 30.0 - (v - lo) / (hi - lo) * (SVG_H - 60.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"10\" y=\"16\" font-size=\"12\">interval lengths (log10) by degree</text>\n"
    );
    for k in 0..lens.len() {
        let color = PALETTE[result.partition.degrees[k].min(PALETTE.len() - 1)];
        let y = sy(lens[k].log10());
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            sx(times[k]),
            y,
            sx(times[k + 1]),
            y,
            color
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
