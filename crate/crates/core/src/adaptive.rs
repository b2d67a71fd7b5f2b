//! Adaptive controller: cost model, refine-vs-degree decision, and the four
//! algorithm variants.
//!
//! The two ER variants iterate the error-representation pipeline, flag
//! intervals whose contribution exceeds the equal-contribution share
//! `TOL/n`, and act on each flagged interval: "er-predicting" consults the
//! cost model, "er-testing" tries both actions on trial copies and keeps the
//! one with the better error reduction per unit work. The two simple
//! variants estimate the error against the previous (coarser) uniform grid
//! and refine everything.

use crate::error_rep::{run_pipeline, subdivided_solve, ErrorBreakdown, PipelineError};
use crate::field::{Augment1, FieldEval, FullField, Payoff};
use crate::logode::{
    log_ode_step, sweep, sweep_full, OdeSolverConfig, Partition, SolveError,
};
use crate::path::SignatureCache;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Hard cap on the log-ODE degree; intervals at the cap always refine.
pub const DEGREE_CAP: usize = 5;

/// Refine the grid or raise the degree on one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Refine,
    IncreaseDegree,
}

/// The refinement rule: refine `[t_k,t_{k+1}]` iff
/// `(a_N/a_{N+1})^{p/(N+1−p)} · ω^{−1/(N+1−p)} ≤ (c_{N+1}/c_N)·d`
/// (ties refine); if `N+1 ≤ p` the rule is void and the interval refines.
pub fn decide(
    omega: f64,
    degree: usize,
    p: f64,
    a_ratio: f64,
    c_ratio: f64,
    driver_dim: usize,
) -> Action {
    let denom = degree as f64 + 1.0 - p;
    if denom <= 0.0 {
        return Action::Refine;
    }
    let lhs = a_ratio.powf(p / denom) * omega.powf(-1.0 / denom);
    if lhs <= c_ratio * driver_dim as f64 {
        Action::Refine
    } else {
        Action::IncreaseDegree
    }
}

/// Local control from an observed contribution:
/// `ω^{1/p} = (contribution / a_N)^{1/(N+1)}` (0 maps to 0).
pub fn infer_local_control(contribution: f64, degree: usize, a_n: f64) -> f64 {
    if contribution <= 0.0 {
        return 0.0;
    }
    (contribution / a_n).powf(1.0 / (degree as f64 + 1.0))
}

/// Per-degree estimates of the error constant `a_i` and the per-component
/// evaluation cost `c_i`, with `a = c = 1` seeded at the starting degree and
/// medians of harvested samples elsewhere.
#[derive(Debug, Clone)]
pub struct CostModelState {
    pub p: f64,
    a_samples: Vec<Vec<f64>>,
    c_samples: Vec<Vec<f64>>,
}

impl CostModelState {
    pub fn new(p: f64, seed_degree: usize) -> Self {
        let mut a_samples = vec![Vec::new(); DEGREE_CAP + 2];
        let mut c_samples = vec![Vec::new(); DEGREE_CAP + 2];
        a_samples[seed_degree].push(1.0);
        c_samples[seed_degree].push(1.0);
        CostModelState {
            p,
            a_samples,
            c_samples,
        }
    }

    pub fn a(&self, degree: usize) -> Option<f64> {
        median(&self.a_samples[degree])
    }

    pub fn c(&self, degree: usize) -> Option<f64> {
        median(&self.c_samples[degree])
    }

    pub fn has(&self, degree: usize) -> bool {
        !self.a_samples[degree].is_empty() && !self.c_samples[degree].is_empty()
    }

    /// One observation of the same interval solved at degrees `i` and `i+1`:
    /// appends the samples `c_{i+1} = c_i·T_{i+1}/(T_i·d)` and
    /// `a_{i+1} = e_{i+1}·(e_i/a_i)^{(i+2)/(i+1)}`.
    pub fn update_cost_estimates(
        &mut self,
        degree: usize,
        t_i: f64,
        t_ip1: f64,
        e_i: f64,
        e_ip1: f64,
        driver_dim: usize,
    ) {
        let (Some(a_i), Some(c_i)) = (self.a(degree), self.c(degree)) else {
            return;
        };
        if t_i > 0.0 && t_ip1 > 0.0 {
            self.c_samples[degree + 1].push(c_i * t_ip1 / (t_i * driver_dim as f64));
        }
        if e_i > 0.0 && e_ip1 > 0.0 {
            let expo = (degree as f64 + 2.0) / (degree as f64 + 1.0);
            self.a_samples[degree + 1].push(e_ip1 * (e_i / a_i).powf(expo));
        }
    }
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Algorithm variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ErPredicting,
    ErTesting,
    SimpleFirst,
    SimpleFull,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "er-predicting" => Some(Algorithm::ErPredicting),
            "er-testing" => Some(Algorithm::ErTesting),
            "simple-first" => Some(Algorithm::SimpleFirst),
            "simple-full" => Some(Algorithm::SimpleFull),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ErPredicting => "er-predicting",
            Algorithm::ErTesting => "er-testing",
            Algorithm::SimpleFirst => "simple-first",
            Algorithm::SimpleFull => "simple-full",
        }
    }
}

/// Controller settings.
#[derive(Debug, Clone, Serialize)]
pub struct AdaptiveSettings {
    pub algorithm: Algorithm,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Roughness parameter of the driver.
    pub p: f64,
    pub max_degree: usize,
    pub subdivisions: usize,
    pub initial_intervals: usize,
    pub max_rounds: usize,
    /// Inner tolerance = `ode_tol_scale × tol_eff / n`, unless overridden.
    pub ode_tol_scale: f64,
    pub ode_tol_override: Option<f64>,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        AdaptiveSettings {
            algorithm: Algorithm::ErPredicting,
            tol_abs: 1e-4,
            tol_rel: 1e-4,
            p: 1.0,
            max_degree: DEGREE_CAP,
            subdivisions: 8,
            initial_intervals: 8,
            max_rounds: 30,
            ode_tol_scale: 0.01,
            ode_tol_override: None,
        }
    }
}

impl AdaptiveSettings {
    /// Starting degree `max(1, ⌈p⌉)`, clamped by the cap.
    pub fn starting_degree(&self) -> usize {
        (self.p.ceil() as usize).max(1).min(self.max_degree)
    }

    fn inner_cfg(&self, tol_eff: f64, n: usize) -> OdeSolverConfig {
        let tol = self
            .ode_tol_override
            .unwrap_or(self.ode_tol_scale * tol_eff / n as f64)
            .max(1e-13);
        OdeSolverConfig {
            rtol: tol,
            atol: tol * 1e-2,
            max_steps: 1_000_000,
        }
    }
}

/// Per-round diagnostics row.
#[derive(Debug, Clone, Serialize)]
pub struct RoundDiag {
    pub round: usize,
    pub n_intervals: usize,
    /// Estimate magnitude; -1 on the first simple round where no previous
    /// grid exists yet.
    pub estimate: f64,
    pub intervals_by_degree: BTreeMap<usize, usize>,
    pub seconds: f64,
    pub work: f64,
}

/// Result bundle of an adaptive run.
#[derive(Debug)]
pub struct AdaptiveResult {
    pub converged: bool,
    pub rounds: Vec<RoundDiag>,
    pub partition: Partition,
    pub estimate: Option<Vec<f64>>,
    pub estimate_norm: f64,
    pub payoff_terminal: Vec<f64>,
    pub corrected_payoff: Option<Vec<f64>>,
    pub y_terminal: Vec<f64>,
    /// Solution values at the final partition's grid points.
    pub y_grid: Vec<Vec<f64>>,
    pub breakdown: Option<ErrorBreakdown>,
    pub total_work: f64,
    pub wall_seconds: f64,
}

impl AdaptiveResult {
    pub fn intervals_by_degree(&self) -> BTreeMap<usize, usize> {
        let mut map = BTreeMap::new();
        for &d in &self.partition.degrees {
            *map.entry(d).or_insert(0) += 1;
        }
        map
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn interval_key(t0: f64, t1: f64) -> (u64, u64) {
    (t0.to_bits(), t1.to_bits())
}

/// A numerical failure the controller can respond to by refining (the
/// log-ODE surrogate field can explode on intervals far coarser than the
/// dynamics allow); returns the offending interval when known.
fn recoverable_interval(err: &AdaptiveError) -> Option<Option<usize>> {
    fn scan(e: &SolveError) -> Option<Option<usize>> {
        match e {
            SolveError::Explosion | SolveError::StepLimit(_) | SolveError::StepUnderflow(_) => {
                Some(None)
            }
            SolveError::AtInterval { index, source, .. } => {
                scan(source).map(|inner| Some(inner.unwrap_or(*index)))
            }
            _ => None,
        }
    }
    match err {
        AdaptiveError::Solve(e) => scan(e),
        AdaptiveError::Pipeline(PipelineError::Solve(e)) => scan(e),
        _ => None,
    }
}

#[derive(Clone, Copy)]
struct PrevObs {
    degree: usize,
    work: f64,
    contribution: f64,
}

/// Runs the selected variant until the error estimate meets
/// `max(tol_abs, tol_rel·‖g(ȳ_T)‖)` or the round cap is hit.
pub fn run_adaptive(
    field: Arc<dyn FieldEval>,
    payoff: Arc<dyn Payoff>,
    y0: &[f64],
    cache: &SignatureCache,
    settings: &AdaptiveSettings,
) -> Result<AdaptiveResult, AdaptiveError> {
    match settings.algorithm {
        Algorithm::ErPredicting | Algorithm::ErTesting => {
            run_er(field, payoff, y0, cache, settings)
        }
        Algorithm::SimpleFirst | Algorithm::SimpleFull => {
            run_simple(field, payoff, y0, cache, settings)
        }
    }
}

fn run_er(
    field: Arc<dyn FieldEval>,
    payoff: Arc<dyn Payoff>,
    y0: &[f64],
    cache: &SignatureCache,
    settings: &AdaptiveSettings,
) -> Result<AdaptiveResult, AdaptiveError> {
    let started = Instant::now();
    let (t_start, t_end) = (cache.path().t_start(), cache.path().t_end());
    let n0 = settings.initial_intervals.max(1);
    let n_deg = settings.starting_degree();
    let mut partition = Partition::uniform(t_start, t_end, n0, n_deg);
    let mut cost = CostModelState::new(settings.p, n_deg);
    let mut prev_obs: HashMap<(u64, u64), PrevObs> = HashMap::new();
    let (_, driver_dim) = field.dims();

    let mut rounds = Vec::new();
    let mut total_work = 0.0;
    let mut converged = false;
    let mut tol_eff = settings.tol_abs.max(1e-300);
    let mut last: Option<(ErrorBreakdown, Vec<Vec<f64>>)> = None;

    for round in 1..=settings.max_rounds {
        let round_started = Instant::now();
        let n = partition.len();
        let cfg = settings.inner_cfg(tol_eff, n);
        let res = match run_pipeline(
            field.clone(),
            payoff.clone(),
            y0,
            cache,
            &partition,
            &cfg,
            settings.subdivisions,
        ) {
            Ok(res) => res,
            Err(err) => {
                let err: AdaptiveError = err.into();
                // the surrogate field left its trust region: refine and retry
                let Some(which) = recoverable_interval(&err) else {
                    return Err(err);
                };
                if round == settings.max_rounds {
                    return Err(err);
                }
                let actions: Vec<(usize, Action)> = match which {
                    Some(k) => vec![(k, Action::Refine)],
                    None => (0..n).map(|k| (k, Action::Refine)).collect(),
                };
                partition = apply_actions(&partition, &actions);
                rounds.push(RoundDiag {
                    round,
                    n_intervals: n,
                    estimate: -1.0,
                    intervals_by_degree: BTreeMap::new(),
                    seconds: round_started.elapsed().as_secs_f64(),
                    work: 0.0,
                });
                continue;
            }
        };
        let round_work: f64 = res.interval_work.iter().sum();
        total_work += round_work;
        let estimate_norm = res.breakdown.estimate_norm();
        tol_eff = settings
            .tol_abs
            .max(settings.tol_rel * norm(&res.breakdown.payoff_terminal));
        // contributions at the inner-solver noise scale carry no truncation
        // information and would corrupt the a-estimates
        let noise_floor = cfg.rtol * (1.0 + norm(&res.breakdown.payoff_terminal));

        // harvest cost-model samples from intervals whose degree was raised
        // last round
        for (k, row) in res.breakdown.rows.iter().enumerate() {
            if let Some(prev) = prev_obs.get(&interval_key(row.t0, row.t1)) {
                let fresh = norm(&row.contribution);
                if row.degree == prev.degree + 1
                    && prev.contribution > 100.0 * noise_floor
                    && fresh > noise_floor
                {
                    cost.update_cost_estimates(
                        prev.degree,
                        prev.work,
                        res.subdivision_work[k],
                        prev.contribution,
                        fresh,
                        driver_dim,
                    );
                }
            }
        }
        prev_obs.clear();
        for (k, row) in res.breakdown.rows.iter().enumerate() {
            prev_obs.insert(
                interval_key(row.t0, row.t1),
                PrevObs {
                    degree: row.degree,
                    work: res.subdivision_work[k],
                    contribution: norm(&row.contribution),
                },
            );
        }

        let mut by_degree = BTreeMap::new();
        for &d in &partition.degrees {
            *by_degree.entry(d).or_insert(0usize) += 1;
        }
        rounds.push(RoundDiag {
            round,
            n_intervals: n,
            estimate: estimate_norm,
            intervals_by_degree: by_degree,
            seconds: round_started.elapsed().as_secs_f64(),
            work: round_work,
        });

        if estimate_norm <= tol_eff || round == settings.max_rounds {
            converged = estimate_norm <= tol_eff;
            last = Some((res.breakdown, res.y_states));
            break;
        }

        // flag intervals holding more than the equal-contribution share
        let share = tol_eff / n as f64;
        let contribution_of = |k: usize| norm(&res.breakdown.rows[k].contribution);
        let mut flagged: Vec<usize> = (0..n).filter(|&k| contribution_of(k) > share).collect();
        if flagged.is_empty() {
            let worst = (0..n)
                .max_by(|&a, &b| contribution_of(a).partial_cmp(&contribution_of(b)).unwrap())
                .unwrap();
            flagged.push(worst);
        }

        let mut actions: Vec<(usize, Action)> = Vec::with_capacity(flagged.len());
        match settings.algorithm {
            Algorithm::ErPredicting => {
                // bootstrap missing higher-degree estimates once per round,
                // on the worst flagged interval of each degree (the largest
                // contribution has the best signal above the noise floor)
                let mut bootstrapped: Vec<usize> = Vec::new();
                for &k in &flagged {
                    let deg = partition.degrees[k];
                    if deg >= settings.max_degree {
                        actions.push((k, Action::Refine));
                        continue;
                    }
                    if !cost.has(deg + 1) && !bootstrapped.contains(&(deg + 1)) {
                        bootstrapped.push(deg + 1);
                        let pick = flagged
                            .iter()
                            .copied()
                            .filter(|&j| partition.degrees[j] == deg)
                            .max_by(|&a, &b| {
                                contribution_of(a).partial_cmp(&contribution_of(b)).unwrap()
                            })
                            .unwrap_or(k);
                        if contribution_of(pick) > 100.0 * noise_floor {
                            if let Ok((e_trial, w_trial)) = trial_degree(
                                field.as_ref(),
                                cache,
                                &res.y_states[pick],
                                partition.times[pick],
                                partition.times[pick + 1],
                                deg + 1,
                                &res.weights[pick + 1],
                                payoff.dims(),
                                &cfg,
                                settings.subdivisions,
                            ) {
                                if e_trial > noise_floor {
                                    cost.update_cost_estimates(
                                        deg,
                                        res.subdivision_work[pick],
                                        w_trial,
                                        contribution_of(pick),
                                        e_trial,
                                        driver_dim,
                                    );
                                }
                            }
                        }
                    }
                    let a_n = cost.a(deg).unwrap_or(1.0);
                    let omega_root = infer_local_control(contribution_of(k), deg, a_n);
                    let omega = omega_root.powf(settings.p);
                    let action = match (cost.a(deg + 1), cost.c(deg + 1), cost.c(deg)) {
                        (Some(a1), Some(c1), Some(c0)) if a1 > 0.0 && omega > 0.0 => {
                            decide(omega, deg, settings.p, a_n / a1, c1 / c0, driver_dim)
                        }
                        _ => Action::Refine,
                    };
                    actions.push((k, action));
                }
            }
            Algorithm::ErTesting => {
                for &k in &flagged {
                    let deg = partition.degrees[k];
                    let e_old = contribution_of(k);
                    if deg >= settings.max_degree {
                        actions.push((k, Action::Refine));
                        continue;
                    }
                    let (t0, t1) = (partition.times[k], partition.times[k + 1]);
                    let (e_ref, w_ref) = trial_refine(
                        field.as_ref(),
                        cache,
                        &res.y_states[k],
                        t0,
                        t1,
                        deg,
                        &res.weights[k + 1],
                        payoff.dims(),
                        &cfg,
                        settings.subdivisions,
                    )
                    .unwrap_or((f64::INFINITY, 1.0));
                    let (e_deg, w_deg) = trial_degree(
                        field.as_ref(),
                        cache,
                        &res.y_states[k],
                        t0,
                        t1,
                        deg + 1,
                        &res.weights[k + 1],
                        payoff.dims(),
                        &cfg,
                        settings.subdivisions,
                    )
                    .unwrap_or((f64::INFINITY, 1.0));
                    // the trial pair is a free cost-model sample
                    if e_deg.is_finite() && e_old > 100.0 * noise_floor && e_deg > noise_floor {
                        cost.update_cost_estimates(
                            deg,
                            res.subdivision_work[k],
                            w_deg,
                            e_old,
                            e_deg,
                            driver_dim,
                        );
                    }
                    let score_ref = (e_old - e_ref) / w_ref.max(1e-300);
                    let score_deg = (e_old - e_deg) / w_deg.max(1e-300);
                    actions.push((
                        k,
                        if score_ref >= score_deg {
                            Action::Refine
                        } else {
                            Action::IncreaseDegree
                        },
                    ));
                }
            }
            _ => unreachable!(),
        }

        partition = apply_actions(&partition, &actions);
    }

    let (breakdown, y_grid) = last.expect("at least one round ran");
    Ok(AdaptiveResult {
        converged,
        rounds,
        partition,
        estimate_norm: breakdown.estimate_norm(),
        estimate: Some(breakdown.estimate.clone()),
        payoff_terminal: breakdown.payoff_terminal.clone(),
        corrected_payoff: Some(breakdown.corrected_payoff.clone()),
        y_terminal: y_grid.last().unwrap().clone(),
        y_grid,
        breakdown: Some(breakdown),
        total_work,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trial solve of one interval at the given degree: coarse step plus
/// subdivided fine solve; returns the propagated local error magnitude
/// `‖Ψ̄·ē‖` and the deterministic work of the subdivided solve.
#[allow(clippy::too_many_arguments)]
fn trial_degree(
    field: &dyn FieldEval,
    cache: &SignatureCache,
    y_in: &[f64],
    t0: f64,
    t1: f64,
    degree: usize,
    psi: &[f64],
    payoff_dims: (usize, usize),
    cfg: &OdeSolverConfig,
    subdivisions: usize,
) -> Result<(f64, f64), AdaptiveError> {
    let sig = cache.signature(t0, t1, degree).map_err(SolveError::from)?;
    let (coarse, _) = log_ode_step(field, y_in, &sig, cfg)?;
    let (fine, work, _) = subdivided_solve(field, cache, y_in, t0, t1, degree, cfg, subdivisions)?;
    let err: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    Ok((weighted_norm(psi, &err, payoff_dims), work))
}

/// Trial refinement of one interval into two halves at the same degree.
#[allow(clippy::too_many_arguments)]
fn trial_refine(
    field: &dyn FieldEval,
    cache: &SignatureCache,
    y_in: &[f64],
    t0: f64,
    t1: f64,
    degree: usize,
    psi: &[f64],
    payoff_dims: (usize, usize),
    cfg: &OdeSolverConfig,
    subdivisions: usize,
) -> Result<(f64, f64), AdaptiveError> {
    let mid = 0.5 * (t0 + t1);
    let sig1 = cache.signature(t0, mid, degree).map_err(SolveError::from)?;
    let (coarse1, _) = log_ode_step(field, y_in, &sig1, cfg)?;
    let sig2 = cache.signature(mid, t1, degree).map_err(SolveError::from)?;
    let (coarse2, _) = log_ode_step(field, &coarse1, &sig2, cfg)?;
    let (fine1, w1, _) = subdivided_solve(field, cache, y_in, t0, mid, degree, cfg, subdivisions)?;
    let (fine2, w2, _) =
        subdivided_solve(field, cache, &coarse1, mid, t1, degree, cfg, subdivisions)?;
    let err: Vec<f64> = fine1
        .iter()
        .zip(&coarse1)
        .zip(fine2.iter().zip(&coarse2))
        .map(|((f1, c1), (f2, c2))| (f1 - c1) + (f2 - c2))
        .collect();
    Ok((weighted_norm(psi, &err, payoff_dims), w1 + w2))
}

fn weighted_norm(psi: &[f64], err: &[f64], (c, e): (usize, usize)) -> f64 {
    let contribution: Vec<f64> = (0..c)
        .map(|a| (0..e).map(|i| psi[a * e + i] * err[i]).sum())
        .collect();
    norm(&contribution)
}

/// Applies per-interval actions; splits happen exactly at midpoints, so
/// every interval stays a binary descendant of the initial grid and the new
/// grid is a superset of the old one.
fn apply_actions(partition: &Partition, actions: &[(usize, Action)]) -> Partition {
    let action_of: HashMap<usize, Action> = actions.iter().copied().collect();
    let mut times = Vec::with_capacity(partition.times.len() + actions.len());
    let mut degrees = Vec::with_capacity(partition.degrees.len() + actions.len());
    times.push(partition.times[0]);
    for k in 0..partition.len() {
        let (t0, t1) = (partition.times[k], partition.times[k + 1]);
        match action_of.get(&k) {
            Some(Action::Refine) => {
                times.push(0.5 * (t0 + t1));
                times.push(t1);
                degrees.push(partition.degrees[k]);
                degrees.push(partition.degrees[k]);
            }
            Some(Action::IncreaseDegree) => {
                times.push(t1);
                degrees.push(partition.degrees[k] + 1);
            }
            None => {
                times.push(t1);
                degrees.push(partition.degrees[k]);
            }
        }
    }
    Partition { times, degrees }
}

fn run_simple(
    field: Arc<dyn FieldEval>,
    payoff: Arc<dyn Payoff>,
    y0: &[f64],
    cache: &SignatureCache,
    settings: &AdaptiveSettings,
) -> Result<AdaptiveResult, AdaptiveError> {
    let started = Instant::now();
    let (t_start, t_end) = (cache.path().t_start(), cache.path().t_end());
    let degree = settings.starting_degree();
    let full_mode = settings.algorithm == Algorithm::SimpleFull;
    let (e, d) = field.dims();

    let mut n = settings.initial_intervals.max(1);
    let mut rounds = Vec::new();
    let mut prev_payoff: Option<Vec<f64>> = None;
    let mut total_work = 0.0;
    let mut converged = false;
    let mut tol_eff = settings.tol_abs.max(1e-300);
    let mut estimate_norm = f64::INFINITY;
    let mut y_terminal = y0.to_vec();
    let mut y_grid = vec![y0.to_vec()];
    let mut g_terminal = vec![0.0; payoff.dims().0];
    let mut partition = Partition::uniform(t_start, t_end, n, degree);

    for round in 1..=settings.max_rounds {
        let round_started = Instant::now();
        partition = Partition::uniform(t_start, t_end, n, degree);
        let cfg = settings.inner_cfg(tol_eff, n);
        let swept = if full_mode {
            let mut base = vec![0.0; d + e];
            base[d..].copy_from_slice(y0);
            let full = FullField::new(Arc::new(Augment1::new(field.clone())), base, degree);
            sweep_full(&full, cache, &partition, &cfg).map(|(recs, _)| {
                let w: f64 = recs.iter().map(|r| r.work).sum();
                let mut grid = vec![y0.to_vec()];
                grid.extend(recs.iter().map(|r| r.y_out[d..].to_vec()));
                (grid, w)
            })
        } else {
            sweep(field.as_ref(), y0, cache, &partition, &cfg).map(|recs| {
                let w: f64 = recs.iter().map(|r| r.work).sum();
                let mut grid = vec![y0.to_vec()];
                grid.extend(recs.iter().map(|r| r.y_out.clone()));
                (grid, w)
            })
        };
        let (grid, work) = match swept {
            Ok(v) => v,
            Err(e) => {
                let err: AdaptiveError = e.into();
                if recoverable_interval(&err).is_none() || round == settings.max_rounds {
                    return Err(err);
                }
                // too coarse for the surrogate field: halve everything
                rounds.push(RoundDiag {
                    round,
                    n_intervals: n,
                    estimate: -1.0,
                    intervals_by_degree: BTreeMap::new(),
                    seconds: round_started.elapsed().as_secs_f64(),
                    work: 0.0,
                });
                prev_payoff = None;
                n *= 2;
                continue;
            }
        };
        let y_t = grid.last().unwrap().clone();
        total_work += work;
        let mut g = vec![0.0; payoff.dims().0];
        payoff.eval_f64(&y_t, &mut g);
        tol_eff = settings.tol_abs.max(settings.tol_rel * norm(&g));

        estimate_norm = match &prev_payoff {
            Some(prev) => norm(&g.iter().zip(prev).map(|(a, b)| a - b).collect::<Vec<_>>()),
            None => f64::INFINITY,
        };
        rounds.push(RoundDiag {
            round,
            n_intervals: n,
            estimate: if estimate_norm.is_finite() {
                estimate_norm
            } else {
                -1.0
            },
            intervals_by_degree: BTreeMap::from([(degree, n)]),
            seconds: round_started.elapsed().as_secs_f64(),
            work,
        });
        prev_payoff = Some(g.clone());
        y_terminal = y_t;
        y_grid = grid;
        g_terminal = g;

        if estimate_norm <= tol_eff {
            converged = true;
            break;
        }
        n *= 2;
    }

    Ok(AdaptiveResult {
        converged,
        rounds,
        partition,
        estimate: None,
        estimate_norm,
        payoff_terminal: g_terminal,
        corrected_payoff: None,
        y_terminal,
        y_grid,
        breakdown: None,
        total_work,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{IdentityPayoff, TanhCosField};
    use crate::path::{build_example_path, PathOptions};

    #[test]
    fn decide_hand_substitutions() {
        // a-ratio=1, c-ratio=1, p=2, N=2, ω=0.01, d=2: LHS = 100 > 2
        assert_eq!(decide(0.01, 2, 2.0, 1.0, 1.0, 2), Action::IncreaseDegree);
        // ω → 1⁻: LHS → 1 ≤ 2
        assert_eq!(decide(1.0 - 1e-12, 2, 2.0, 1.0, 1.0, 2), Action::Refine);
        // a_N/a_{N+1}=1e−4, p=1, N=1, ω=0.1, d=2, c-ratio=3: LHS = 1e−3 ≤ 6
        assert_eq!(decide(0.1, 1, 1.0, 1e-4, 3.0, 2), Action::Refine);
        // exact tie (LHS = RHS = 1) refines
        assert_eq!(decide(1.0, 2, 2.0, 1.0, 0.5, 2), Action::Refine);
        // rule void when N+1 ≤ p
        assert_eq!(decide(1e-6, 1, 2.0, 1.0, 1.0, 2), Action::Refine);
    }

    #[test]
    fn infer_local_control_examples() {
        // a=1, contribution=1e−3, N=2 → ω^{1/p} = 0.1
        assert!((infer_local_control(1e-3, 2, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(infer_local_control(0.0, 3, 1.0), 0.0);
        // doubling a halves contribution/a: monotone decrease
        let w1 = infer_local_control(1e-3, 2, 1.0);
        let w2 = infer_local_control(1e-3, 2, 2.0);
        assert!(w2 < w1);
    }

    #[test]
    fn update_cost_estimates_examples() {
        let mut cm = CostModelState::new(1.0, 2);
        // a₂=1, e₂=1e−3, e₃=1e−5, i=2 → a₃ = 1e−5·(1e−3)^{4/3} = 1e−9
        cm.update_cost_estimates(2, 1.0, 2.0, 1e-3, 1e-5, 2);
        let a3 = cm.a(3).unwrap();
        assert!(
            (a3 - 1e-5 * 1e-3f64.powf(4.0 / 3.0)).abs() < 1e-22,
            "a₃ = {a3:e}"
        );
        assert!((a3 - 1e-9).abs() < 1e-20);
        // T ratio = d → c-ratio sample = 1
        let c3 = cm.c(3).unwrap();
        assert!((c3 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_of_samples_used() {
        let mut cm = CostModelState::new(1.0, 1);
        // T ratios chosen so the c₂ samples are {2, 3, 10} (d = 1)
        for t_ratio in [2.0, 3.0, 10.0] {
            cm.update_cost_estimates(1, 1.0, t_ratio, 1e-3, 1e-4, 1);
        }
        assert!((cm.c(2).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn scale_consistency_of_decide() {
        // multiplying all a_i by a common factor leaves decisions unchanged
        for omega in [1e-4, 1e-2, 0.5] {
            for scale in [1.0, 37.0, 1e-6] {
                let base = decide(omega, 2, 1.0, 0.5, 2.0, 2);
                let scaled = decide(omega, 2, 1.0, (0.5 * scale) / scale, 2.0, 2);
                assert_eq!(base, scaled);
            }
        }
    }

    #[test]
    fn huge_tolerance_returns_initial_grid() {
        let opts = PathOptions {
            smooth_steps: 1 << 9,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let settings = AdaptiveSettings {
            tol_abs: 1e3,
            tol_rel: 1e3,
            initial_intervals: 4,
            ..Default::default()
        };
        let res = run_adaptive(
            Arc::new(TanhCosField),
            Arc::new(IdentityPayoff { e: 2 }),
            &[0.0, 0.0],
            &cache,
            &settings,
        )
        .unwrap();
        assert!(res.converged);
        assert_eq!(res.rounds.len(), 1);
        assert_eq!(res.partition.len(), 4);
    }

    #[test]
    fn monotone_tiling_after_actions() {
        let part = Partition::uniform(0.0, 1.0, 4, 1);
        let refined = apply_actions(
            &part,
            &[
                (0, Action::Refine),
                (2, Action::IncreaseDegree),
                (3, Action::Refine),
            ],
        );
        assert_eq!(refined.times.first(), Some(&0.0));
        assert_eq!(refined.times.last(), Some(&1.0));
        for w in refined.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        // the refined grid is strictly finer: old points survive
        for t in &part.times {
            assert!(refined.times.iter().any(|u| u == t));
        }
        assert_eq!(refined.len(), 6);
        assert_eq!(refined.degrees, vec![1, 1, 1, 2, 1, 1]);
    }

    #[test]
    fn simple_first_and_full_agree_on_first_level() {
        let opts = PathOptions {
            smooth_steps: 1 << 9,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let mk = |alg| AdaptiveSettings {
            algorithm: alg,
            tol_abs: 5e-4,
            tol_rel: 5e-4,
            initial_intervals: 8,
            max_rounds: 8,
            ..Default::default()
        };
        let first = run_adaptive(
            Arc::new(TanhCosField),
            Arc::new(IdentityPayoff { e: 2 }),
            &[0.0, 0.0],
            &cache,
            &mk(Algorithm::SimpleFirst),
        )
        .unwrap();
        let full = run_adaptive(
            Arc::new(TanhCosField),
            Arc::new(IdentityPayoff { e: 2 }),
            &[0.0, 0.0],
            &cache,
            &mk(Algorithm::SimpleFull),
        )
        .unwrap();
        assert_eq!(first.partition.len(), full.partition.len());
        let gap = norm(
            &first
                .y_terminal
                .iter()
                .zip(&full.y_terminal)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        assert!(gap < 1e-7, "simple-first vs simple-full terminal gap {gap}");
    }

    #[test]
    fn er_predicting_terminates_on_spike_path_desk_scale() {
        let opts = PathOptions {
            smooth_steps: 1 << 12,
            ..Default::default()
        };
        let path = build_example_path("spike-path", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let settings = AdaptiveSettings {
            tol_abs: 1e-3,
            tol_rel: 1e-3,
            initial_intervals: 8,
            ..Default::default()
        };
        let res = run_adaptive(
            Arc::new(TanhCosField),
            Arc::new(IdentityPayoff { e: 2 }),
            &[0.0, 0.0],
            &cache,
            &settings,
        )
        .unwrap();
        assert!(res.converged, "did not converge in {} rounds", res.rounds.len());
        for w in res.partition.times.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
