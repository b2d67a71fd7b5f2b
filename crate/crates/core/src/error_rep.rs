//! A-posteriori error representation: the global payoff error as a weighted
//! sum of local errors, with dual weights computable by a backward sweep.
//!
//! The pipeline has five stages over a partition of `[0,T]`:
//!
//! 1. a forward solve of the joint system `z = (x,y)` as group-like tensor
//!    states (so the rough integrals of stage 2 are well-defined);
//! 2. per-interval increments `h̄` of the rough integral `∫ f′(y) dx`,
//!    obtained by solving one more adjoined system and projecting onto the
//!    trailing `e²` block;
//! 3. dual weights `Ψ̄` by a backward linear sweep from `Ψ̄(T) = ∇g(ȳ_T)`,
//!    each step driven by the time-reversed `h̄` increment;
//! 4. local errors `ē` by re-solving every interval on `m` subintervals;
//! 5. the global estimate `Σ_k Ψ̄(t_k) ē(t_k)` and the corrected terminal
//!    payoff `g(ȳ_T) + estimate`.

use crate::field::{
    payoff_gradient, payoff_value, Augment1, Augment2, FieldEval, FullField, LinearMatrixField,
    Payoff,
};
use crate::logode::{
    log_ode_step, log_ode_step_full, step_work, OdeSolverConfig, Partition, SolveError, StepRecord,
    sweep_full,
};
use crate::path::SignatureCache;
use crate::tensor::{GroupTensor, TruncatedTensor};
use serde::Serialize;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("grid mismatch: {0} weights for {1} intervals")]
    GridMismatch(usize, usize),
    #[error("local-error subdivision must be ≥ 2, got {0}")]
    BadSubdivisions(usize),
}

/// Dual weights `Ψ̄(t_k) ∈ ℝ^{c×e}` on the grid; the terminal entry is
/// exactly `∇g(ȳ_T)`.
pub type DualWeights = Vec<Vec<f64>>;

/// Per-interval entry of the assembled error estimate.
#[derive(Debug, Clone, Serialize)]
pub struct BreakdownRow {
    pub index: usize,
    pub t0: f64,
    pub t1: f64,
    pub degree: usize,
    pub local_err_norm: f64,
    pub weight_norm: f64,
    pub contribution: Vec<f64>,
}

/// The weighted local errors and their sum.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBreakdown {
    pub rows: Vec<BreakdownRow>,
    /// `Σ_k Ψ̄(t_k) ē(t_k) ∈ ℝ^c`.
    pub estimate: Vec<f64>,
    pub payoff_terminal: Vec<f64>,
    /// `g(ȳ_T) + estimate`.
    pub corrected_payoff: Vec<f64>,
}

impl ErrorBreakdown {
    pub fn estimate_norm(&self) -> f64 {
        self.estimate.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// CSV dump: `k,t_start,t_end,degree,local_err_norm,weight_norm,contribution_1..c`.
    pub fn to_csv(&self) -> String {
        let c = self.estimate.len();
        let mut out = String::from("k,t_start,t_end,degree,local_err_norm,weight_norm");
        for i in 1..=c {
            out.push_str(&format!(",contribution_{i}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                row.index, row.t0, row.t1, row.degree, row.local_err_norm, row.weight_norm
            ));
            for v in &row.contribution {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }
}

/// Result of the full pipeline over one partition.
pub struct PipelineResult {
    pub z_states: Vec<TruncatedTensor>,
    pub y_states: Vec<Vec<f64>>,
    pub forward: Vec<StepRecord>,
    pub h_increments: Vec<GroupTensor>,
    pub weights: DualWeights,
    pub local_errors: Vec<Vec<f64>>,
    /// Deterministic per-interval cost (forward step + subdivision solve).
    pub interval_work: Vec<f64>,
    /// Cost of the subdivision solve alone; the cost model compares this
    /// against trial solves of the same composition.
    pub subdivision_work: Vec<f64>,
    pub interval_wall: Vec<f64>,
    pub breakdown: ErrorBreakdown,
}

/// Stage 1: joint forward solve. Returns the group-like tensor states of
/// `z = (x,y)` at the grid points (increments from `(x_{t₀}, y₀)`) and the
/// per-step records; the solution values `ȳ_{t_k}` are the base-point reads
/// of the y-block.
pub fn forward_augmented(
    field: Arc<dyn FieldEval>,
    y0: &[f64],
    cache: &SignatureCache,
    partition: &Partition,
    cfg: &OdeSolverConfig,
) -> Result<(Vec<TruncatedTensor>, Vec<Vec<f64>>, Vec<StepRecord>), SolveError> {
    let (e, d) = field.dims();
    let degree = partition.max_degree();
    let mut base = vec![0.0; d + e];
    base[d..].copy_from_slice(y0);
    let full = FullField::new(Arc::new(Augment1::new(field)), base, degree);
    let (records, states) = sweep_full(&full, cache, partition, cfg)?;
    let y_states: Vec<Vec<f64>> = states
        .iter()
        .map(|z| {
            let pt = full.read_point(z);
            pt[d..].to_vec()
        })
        .collect();
    let z_states = states
        .into_iter()
        .map(|z| TruncatedTensor::from_raw(d + e, degree, z))
        .collect();
    Ok((z_states, y_states, records))
}

/// Stage 2: per-interval rough-integral increments `h̄ ∈ G^N(ℝ^{e²})` of
/// `∫ f′(y) dx`, driven by the `z`-increments of stage 1.
pub fn interval_rough_integrals(
    field: Arc<dyn FieldEval>,
    z_states: &[TruncatedTensor],
    y_states: &[Vec<f64>],
    cfg: &OdeSolverConfig,
) -> Result<Vec<GroupTensor>, SolveError> {
    let (e, d) = field.dims();
    let degree = z_states[0].degree();
    let mut out = Vec::with_capacity(z_states.len() - 1);
    for k in 0..z_states.len() - 1 {
        let driver = GroupTensor::new(z_states[k].inverse()?.mul(&z_states[k + 1])?)?;
        let mut base = vec![0.0; d + e + e * e];
        base[d..d + e].copy_from_slice(&y_states[k]);
        let vf = FullField::new(
            Arc::new(Augment2::new(field.clone())),
            base,
            degree,
        );
        let (v_out, _) = log_ode_step_full(&vf, &vf.initial_state(), &driver, cfg)
            .map_err(|e| e.at_interval(k, f64::NAN, f64::NAN))?;
        let v_tensor = TruncatedTensor::from_raw(d + e + e * e, degree, v_out);
        let h = v_tensor.project_letters(d + e, e * e);
        out.push(GroupTensor::new(h)?);
    }
    Ok(out)
}

/// Stage 3: backward dual sweep. Solves the linear equation
/// `−dΨ = Ψ dh̄` from `Ψ̄(T) = ∇g(ȳ_T)` down the grid; one step is a
/// forward linear solve driven by the time-reversed increment (the
/// word-reversal of `h̄`, i.e. `δ₋₁(h̄⁻¹)`).
pub fn backward_dual(
    h_increments: &[GroupTensor],
    payoff: &dyn Payoff,
    y_terminal: &[f64],
    cfg: &OdeSolverConfig,
) -> Result<DualWeights, SolveError> {
    let (c, e) = payoff.dims();
    let f3 = LinearMatrixField { c, e };
    let n = h_increments.len();
    let mut weights = vec![Vec::new(); n + 1];
    weights[n] = payoff_gradient(payoff, y_terminal);
    for k in (0..n).rev() {
        let reversed = GroupTensor::new(h_increments[k].tensor().reverse_words())?;
        let (psi, _) = log_ode_step(&f3, &weights[k + 1], &reversed, cfg)
            .map_err(|e| e.at_interval(k, f64::NAN, f64::NAN))?;
        weights[k] = psi;
    }
    Ok(weights)
}

/// Composite solve of one interval split into `m` equal subintervals at the
/// given degree. Tolerances are tightened so the fine solve stands in for
/// the actual local solution.
pub fn subdivided_solve(
    field: &dyn FieldEval,
    cache: &SignatureCache,
    y_in: &[f64],
    t0: f64,
    t1: f64,
    degree: usize,
    cfg: &OdeSolverConfig,
    m: usize,
) -> Result<(Vec<f64>, f64, f64), SolveError> {
    let fine = OdeSolverConfig {
        rtol: cfg.rtol / 100.0,
        atol: cfg.atol / 100.0,
        max_steps: cfg.max_steps,
    };
    let started = Instant::now();
    let (_, d) = field.dims();
    let mut y = y_in.to_vec();
    let mut work = 0.0;
    for j in 0..m {
        let (s, t) = (
            t0 + (t1 - t0) * j as f64 / m as f64,
            t0 + (t1 - t0) * (j + 1) as f64 / m as f64,
        );
        let sig = cache.signature(s, t, degree)?;
        let (y_next, stats) = log_ode_step(field, &y, &sig, &fine)?;
        work += step_work(y.len(), d, degree, stats.n_evals);
        y = y_next;
    }
    Ok((y, work, started.elapsed().as_secs_f64()))
}

/// Stage 4: local errors `ē(t_{k+1}) = (m-substep solve from ȳ_{t_k}) −
/// ȳ_{t_{k+1}}`, one per interval.
pub fn local_errors(
    field: &dyn FieldEval,
    cache: &SignatureCache,
    partition: &Partition,
    y_states: &[Vec<f64>],
    cfg: &OdeSolverConfig,
    subdivisions: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>), PipelineError> {
    if subdivisions < 2 {
        return Err(PipelineError::BadSubdivisions(subdivisions));
    }
    let n = partition.len();
    let mut errors = Vec::with_capacity(n);
    let mut works = Vec::with_capacity(n);
    let mut walls = Vec::with_capacity(n);
    for k in 0..n {
        let (t0, t1) = (partition.times[k], partition.times[k + 1]);
        let (fine, work, wall) = subdivided_solve(
            field,
            cache,
            &y_states[k],
            t0,
            t1,
            partition.degrees[k],
            cfg,
            subdivisions,
        )
        .map_err(|e| PipelineError::Solve(e.at_interval(k, t0, t1)))?;
        errors.push(
            fine.iter()
                .zip(&y_states[k + 1])
                .map(|(f, c)| f - c)
                .collect(),
        );
        works.push(work);
        walls.push(wall);
    }
    Ok((errors, works, walls))
}

/// Stage 5: contributions `Ψ̄(t_{k+1})·ē(t_{k+1})`, their sum, and the
/// corrected terminal payoff.
pub fn assemble(
    weights: &DualWeights,
    local_errs: &[Vec<f64>],
    partition: &Partition,
    payoff: &dyn Payoff,
    y_terminal: &[f64],
) -> Result<ErrorBreakdown, PipelineError> {
    let n = local_errs.len();
    if weights.len() != n + 1 {
        return Err(PipelineError::GridMismatch(weights.len(), n));
    }
    let (c, e) = payoff.dims();
    let mut rows = Vec::with_capacity(n);
    let mut estimate = vec![0.0; c];
    for k in 0..n {
        let psi = &weights[k + 1];
        let err = &local_errs[k];
        let contribution: Vec<f64> = (0..c)
            .map(|a| (0..e).map(|i| psi[a * e + i] * err[i]).sum())
            .collect();
        for (s, v) in estimate.iter_mut().zip(&contribution) {
            *s += v;
        }
        rows.push(BreakdownRow {
            index: k,
            t0: partition.times[k],
            t1: partition.times[k + 1],
            degree: partition.degrees[k],
            local_err_norm: err.iter().map(|x| x * x).sum::<f64>().sqrt(),
            weight_norm: psi.iter().map(|x| x * x).sum::<f64>().sqrt(),
            contribution,
        });
    }
    let payoff_terminal = payoff_value(payoff, y_terminal);
    let corrected_payoff = payoff_terminal
        .iter()
        .zip(&estimate)
        .map(|(g, e)| g + e)
        .collect();
    Ok(ErrorBreakdown {
        rows,
        estimate,
        payoff_terminal,
        corrected_payoff,
    })
}

/// Runs the five stages over one partition.
pub fn run_pipeline(
    field: Arc<dyn FieldEval>,
    payoff: Arc<dyn Payoff>,
    y0: &[f64],
    cache: &SignatureCache,
    partition: &Partition,
    cfg: &OdeSolverConfig,
    subdivisions: usize,
) -> Result<PipelineResult, PipelineError> {
    let (z_states, y_states, forward) =
        forward_augmented(field.clone(), y0, cache, partition, cfg)?;
    let h_increments = interval_rough_integrals(field.clone(), &z_states, &y_states, cfg)?;
    let y_terminal = y_states.last().expect("nonempty partition").clone();
    let weights = backward_dual(&h_increments, payoff.as_ref(), &y_terminal, cfg)?;
    let (locals, local_work, local_wall) =
        local_errors(field.as_ref(), cache, partition, &y_states, cfg, subdivisions)?;
    let breakdown = assemble(&weights, &locals, partition, payoff.as_ref(), &y_terminal)?;
    let interval_work: Vec<f64> = forward
        .iter()
        .zip(&local_work)
        .map(|(rec, lw)| rec.work + lw)
        .collect();
    let subdivision_work = local_work;
    let interval_wall: Vec<f64> = forward
        .iter()
        .zip(&local_wall)
        .map(|(rec, lw)| rec.wall_seconds + lw)
        .collect();
    Ok(PipelineResult {
        z_states,
        y_states,
        forward,
        h_increments,
        weights,
        local_errors: locals,
        interval_work,
        subdivision_work,
        interval_wall,
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::MultiDual;
    use crate::field::{IdentityPayoff, LinearVecField, ScalarLinearField, TanhCosField};
    use crate::logode::sweep;
    use crate::path::{build_example_path, PathOptions, SampledPath, SignatureCache};

    fn tight() -> OdeSolverConfig {
        OdeSolverConfig {
            rtol: 1e-11,
            atol: 1e-13,
            max_steps: 1_000_000,
        }
    }

    fn two_segment_path() -> SignatureCache {
        SignatureCache::new(
            SampledPath::new(1, vec![0.0, 0.4, 1.0], vec![0.0, 0.3, 0.7]).unwrap(),
        )
    }

    #[test]
    fn forward_one_interval_scalar_linear() {
        // level-1 of z̄ holds increments: (Δx, y0(e^{Δx}−1))
        let cache = two_segment_path();
        let field: Arc<dyn FieldEval> = Arc::new(ScalarLinearField { a: 1.0 });
        let part = Partition::uniform(0.0, 1.0, 1, 2);
        let y0 = [2.0];
        let (z, y, _) = forward_augmented(field, &y0, &cache, &part, &tight()).unwrap();
        let dx = 0.7;
        let lvl1 = z[1].level(1);
        assert!((lvl1[0] - dx).abs() < 1e-9);
        assert!((lvl1[1] - 2.0 * (dx.exp() - 1.0)).abs() < 1e-8);
        assert!((y[1][0] - 2.0 * dx.exp()).abs() < 1e-8);
    }

    struct ZeroField;
    impl FieldEval for ZeroField {
        fn dims(&self) -> (usize, usize) {
            (2, 2)
        }
        fn eval_f64(&self, _y: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn eval_jet(&self, _y: &[MultiDual], out: &mut [MultiDual]) {
            out.fill(MultiDual::constant(0.0));
        }
    }

    #[test]
    fn forward_zero_field_yields_path_signature() {
        let opts = PathOptions {
            smooth_steps: 1 << 8,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path.clone());
        let part = Partition::uniform(0.0, 1.0, 4, 2);
        let (z, y, _) =
            forward_augmented(Arc::new(ZeroField), &[0.5, -0.5], &cache, &part, &tight()).unwrap();
        // y-block constant
        assert!((y[4][0] - 0.5).abs() < 1e-10 && (y[4][1] + 0.5).abs() < 1e-10);
        // x-block equals the path signature
        let sig = path.signature(0.0, 1.0, 2).unwrap();
        let xblock = z[4].project_letters(0, 2);
        assert!(xblock.max_abs_diff(sig.tensor()) < 1e-8);
    }

    #[test]
    fn forward_matches_plain_sweep() {
        let opts = PathOptions {
            smooth_steps: 1 << 10,
            ..Default::default()
        };
        let path = build_example_path("spike-path", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let part = Partition::uniform(0.0, 1.0, 8, 2);
        let field: Arc<dyn FieldEval> = Arc::new(TanhCosField);
        let (_, y_states, _) =
            forward_augmented(field.clone(), &[0.0, 0.0], &cache, &part, &tight()).unwrap();
        let recs = sweep(&TanhCosField, &[0.0, 0.0], &cache, &part, &tight()).unwrap();
        let yp = &recs.last().unwrap().y_out;
        let ya = y_states.last().unwrap();
        let gap = ((yp[0] - ya[0]).powi(2) + (yp[1] - ya[1]).powi(2)).sqrt();
        assert!(gap < 1e-10, "augmented vs plain terminal gap {gap}");
    }

    #[test]
    fn rough_integral_scalar_linear_is_x_increment() {
        // f(y)=y has f′ ≡ 1, so dh = dx and level-1 of h̄ is the x-increment
        let cache = two_segment_path();
        let field: Arc<dyn FieldEval> = Arc::new(ScalarLinearField { a: 1.0 });
        let part = Partition::uniform(0.0, 1.0, 2, 2);
        let (z, y, _) = forward_augmented(field.clone(), &[1.5], &cache, &part, &tight()).unwrap();
        let hs = interval_rough_integrals(field, &z, &y, &tight()).unwrap();
        let x_incs = [
            cache.path().value_at(0.5)[0] - cache.path().value_at(0.0)[0],
            cache.path().value_at(1.0)[0] - cache.path().value_at(0.5)[0],
        ];
        for (h, dx) in hs.iter().zip(x_incs) {
            assert!((h.tensor().level(1)[0] - dx).abs() < 1e-8);
        }
    }

    #[test]
    fn rough_integral_constant_jacobian() {
        // f(y) = A·y on a scalar driver: level-1 of h̄ = A·Δx (flattened)
        let a = vec![0.3, -0.2, 0.5, 0.1];
        let field: Arc<dyn FieldEval> = Arc::new(LinearVecField { a: a.clone(), e: 2 });
        let cache = SignatureCache::new(
            SampledPath::new(1, vec![0.0, 1.0], vec![0.0, 0.6]).unwrap(),
        );
        let part = Partition::uniform(0.0, 1.0, 1, 2);
        let (z, y, _) =
            forward_augmented(field.clone(), &[0.4, -0.7], &cache, &part, &tight()).unwrap();
        let hs = interval_rough_integrals(field, &z, &y, &tight()).unwrap();
        let lvl1 = hs[0].tensor().level(1);
        for i in 0..4 {
            assert!(
                (lvl1[i] - a[i] * 0.6).abs() < 1e-8,
                "h̄ level-1[{i}] = {} vs {}",
                lvl1[i],
                a[i] * 0.6
            );
        }
    }

    #[test]
    fn rough_integral_matches_quadrature() {
        // h̄ level-1 vs composite quadrature of f′(ȳ_t) dx̄_t on a fine grid
        let opts = PathOptions {
            smooth_steps: 1 << 10,
            ..Default::default()
        };
        let path = build_example_path("spike-path", &opts).unwrap();
        let cache = SignatureCache::new(path.clone());
        let field: Arc<dyn FieldEval> = Arc::new(TanhCosField);
        // h̄'s own truncation is O(ω^{(N+1)/p}) per interval and concentrates
        // at the spike, so the grid must resolve it for the oracle tolerance
        let part = Partition::uniform(0.0, 1.0, 256, 2);
        let (z, y, _) =
            forward_augmented(field.clone(), &[0.0, 0.0], &cache, &part, &tight()).unwrap();
        let hs = interval_rough_integrals(field.clone(), &z, &y, &tight()).unwrap();

        // quadrature oracle per interval: a fine composite sweep of the flow
        // started at the coarse state ȳ_{t_k} (what h̄ integrates along),
        // midpoint rule on J(y(t))·Δx with J the state-Jacobian of f(y)dx
        let aug = Augment2::new(Arc::new(TanhCosField));
        for (k, h) in hs.iter().enumerate() {
            let (t0, t1) = (part.times[k], part.times[k + 1]);
            let fine_m = 128;
            let mut acc = [0.0f64; 4];
            let mut yk = y[k].clone();
            for j in 0..fine_m {
                let (s0, s1) = (
                    t0 + (t1 - t0) * j as f64 / fine_m as f64,
                    t0 + (t1 - t0) * (j + 1) as f64 / fine_m as f64,
                );
                let sig = cache.signature(s0, s1, 3).unwrap();
                let y_next = crate::logode::log_ode_step(&TanhCosField, &yk, &sig, &tight())
                    .unwrap()
                    .0;
                let ymid = [0.5 * (yk[0] + y_next[0]), 0.5 * (yk[1] + y_next[1])];
                let (a, b) = (path.value_at(s0), path.value_at(s1));
                let dx = [b[0] - a[0], b[1] - a[1]];
                let state = [0.0, 0.0, ymid[0], ymid[1], 0.0, 0.0, 0.0, 0.0];
                let mut fmat = vec![0.0; 8 * 4];
                aug.eval_f64(&state, &mut fmat);
                for row in 0..4 {
                    acc[row] += fmat[(4 + row) * 4] * dx[0] + fmat[(4 + row) * 4 + 1] * dx[1];
                }
                yk = y_next;
            }
            let lvl1 = h.tensor().level(1);
            for i in 0..4 {
                assert!(
                    (lvl1[i] - acc[i]).abs() < 1e-6,
                    "interval {k} entry {i}: {} vs quadrature {}",
                    lvl1[i],
                    acc[i]
                );
            }
        }
    }

    #[test]
    fn dual_scalar_linear_closed_form() {
        // dy = a y dx, g(y)=y: Ψ(t) = e^{a(x_T − x_t)}
        let a = 1.3;
        let n = 8;
        let times: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let values: Vec<f64> = times.iter().map(|t| (2.1 * t).sin() * 0.8).collect();
        let path = SampledPath::new(1, times, values).unwrap();
        let cache = SignatureCache::new(path.clone());
        let field: Arc<dyn FieldEval> = Arc::new(ScalarLinearField { a });
        let payoff = IdentityPayoff { e: 1 };
        let part = Partition::uniform(0.0, 1.0, n, 2);
        let (z, y, _) = forward_augmented(field.clone(), &[1.0], &cache, &part, &tight()).unwrap();
        let hs = interval_rough_integrals(field, &z, &y, &tight()).unwrap();
        let weights = backward_dual(&hs, &payoff, y.last().unwrap(), &tight()).unwrap();
        let x_t = |t: f64| path.value_at(t)[0];
        for k in 0..=n {
            let expect = (a * (x_t(1.0) - x_t(part.times[k]))).exp();
            assert!(
                (weights[k][0] - expect).abs() < 1e-6,
                "Ψ̄(t_{k}) = {} vs {}",
                weights[k][0],
                expect
            );
        }
    }

    #[test]
    fn dual_zero_field_keeps_terminal_gradient() {
        let opts = PathOptions {
            smooth_steps: 1 << 8,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let part = Partition::uniform(0.0, 1.0, 4, 2);
        let field: Arc<dyn FieldEval> = Arc::new(ZeroField);
        let (z, y, _) =
            forward_augmented(field.clone(), &[0.1, 0.2], &cache, &part, &tight()).unwrap();
        let hs = interval_rough_integrals(field, &z, &y, &tight()).unwrap();
        let payoff = IdentityPayoff { e: 2 };
        let weights = backward_dual(&hs, &payoff, y.last().unwrap(), &tight()).unwrap();
        for w in &weights {
            assert!((w[0] - 1.0).abs() < 1e-9 && w[1].abs() < 1e-9);
            assert!(w[2].abs() < 1e-9 && (w[3] - 1.0).abs() < 1e-9);
        }
    }

    struct ZeroPayoff;
    impl Payoff for ZeroPayoff {
        fn dims(&self) -> (usize, usize) {
            (1, 2)
        }
        fn eval_f64(&self, _y: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn eval_jet(&self, _y: &[MultiDual], out: &mut [MultiDual]) {
            out[0] = MultiDual::constant(0.0);
        }
    }

    #[test]
    fn zero_payoff_gives_exact_zero_estimate() {
        let opts = PathOptions {
            smooth_steps: 1 << 8,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let part = Partition::uniform(0.0, 1.0, 4, 2);
        let res = run_pipeline(
            Arc::new(TanhCosField),
            Arc::new(ZeroPayoff),
            &[0.0, 0.0],
            &cache,
            &part,
            &OdeSolverConfig::with_tol(1e-8),
            4,
        )
        .unwrap();
        assert!(res.weights.iter().all(|w| w.iter().all(|&x| x == 0.0)));
        assert_eq!(res.breakdown.estimate, vec![0.0]);
    }

    #[test]
    fn local_errors_chord_aligned_vanish() {
        let path = SampledPath::new(
            2,
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.0, 0.7, -0.3, 1.0, 0.4],
        )
        .unwrap();
        let cache = SignatureCache::new(path);
        let part = Partition::uniform(0.0, 1.0, 2, 2);
        let recs = sweep(&TanhCosField, &[0.0, 0.0], &cache, &part, &tight()).unwrap();
        let mut y_states = vec![vec![0.0, 0.0]];
        for r in &recs {
            y_states.push(r.y_out.clone());
        }
        let (errs, _, _) =
            local_errors(&TanhCosField, &cache, &part, &y_states, &tight(), 8).unwrap();
        for e in &errs {
            let n = (e[0].powi(2) + e[1].powi(2)).sqrt();
            assert!(n < 1e-9, "chord-aligned local error {n}");
        }
    }

    #[test]
    fn local_errors_reject_degenerate_subdivision() {
        let cache = two_segment_path();
        let part = Partition::uniform(0.0, 1.0, 1, 1);
        let err = local_errors(
            &ScalarLinearField { a: 1.0 },
            &cache,
            &part,
            &[vec![1.0], vec![2.0]],
            &tight(),
            1,
        );
        assert!(matches!(err, Err(PipelineError::BadSubdivisions(1))));
    }

    #[test]
    fn local_error_matches_analytic_defect() {
        // scalar linear: the composite fine solve reproduces the analytic
        // local flow, so ē matches (e^{Δx}·y − coarse step) closely
        let cache = two_segment_path();
        let field = ScalarLinearField { a: 1.0 };
        let part = Partition::uniform(0.0, 1.0, 2, 2);
        let recs = sweep(&field, &[1.0], &cache, &part, &tight()).unwrap();
        let mut y_states = vec![vec![1.0]];
        for r in &recs {
            y_states.push(r.y_out.clone());
        }
        let (errs, _, _) = local_errors(&field, &cache, &part, &y_states, &tight(), 8).unwrap();
        for (k, e) in errs.iter().enumerate() {
            let dx = cache.path().value_at(part.times[k + 1])[0]
                - cache.path().value_at(part.times[k])[0];
            let analytic = y_states[k][0] * dx.exp() - y_states[k + 1][0];
            assert!(
                (e[0] - analytic).abs() < 1e-8,
                "interval {k}: ē {} vs analytic defect {}",
                e[0],
                analytic
            );
        }
    }

    #[test]
    fn assemble_trivial_cases() {
        let part = Partition::uniform(0.0, 1.0, 2, 1);
        let payoff = IdentityPayoff { e: 1 };
        // all ē = 0 → estimate 0
        let weights = vec![vec![1.0], vec![2.0], vec![3.0]];
        let zeros = vec![vec![0.0], vec![0.0]];
        let b = assemble(&weights, &zeros, &part, &payoff, &[1.0]).unwrap();
        assert_eq!(b.estimate, vec![0.0]);
        // single interval: estimate = Ψ̄(t₁)ē(t₁)
        let part1 = Partition::uniform(0.0, 1.0, 1, 1);
        let weights1 = vec![vec![5.0], vec![2.0]];
        let errs1 = vec![vec![0.25]];
        let b1 = assemble(&weights1, &errs1, &part1, &payoff, &[1.0]).unwrap();
        assert_eq!(b1.estimate, vec![0.5]);
        // grid mismatch rejected
        assert!(matches!(
            assemble(&weights1, &zeros, &part, &payoff, &[1.0]),
            Err(PipelineError::GridMismatch(2, 2))
        ));
    }

    #[test]
    fn estimate_tracks_true_error_scalar_linear() {
        // loose coarse solve, analytic truth: estimated/true ratio ≈ 1
        let times: Vec<f64> = (0..=256).map(|i| i as f64 / 256.0).collect();
        let values: Vec<f64> = times.iter().map(|t| (3.0 * t).sin()).collect();
        let path = SampledPath::new(1, times, values).unwrap();
        let cache = SignatureCache::new(path.clone());
        let field: Arc<dyn FieldEval> = Arc::new(ScalarLinearField { a: 1.0 });
        let payoff = Arc::new(IdentityPayoff { e: 1 });
        let part = Partition::uniform(0.0, 1.0, 4, 2);
        let loose = OdeSolverConfig {
            rtol: 1e-5,
            atol: 1e-7,
            max_steps: 100_000,
        };
        let res = run_pipeline(field, payoff, &[1.0], &cache, &part, &loose, 8).unwrap();
        let truth = (path.value_at(1.0)[0] - path.value_at(0.0)[0]).exp();
        let true_err = truth - res.breakdown.payoff_terminal[0];
        let ratio = res.breakdown.estimate[0] / true_err;
        assert!(
            (0.99..=1.01).contains(&ratio),
            "estimate/true = {ratio} (estimate {}, true {true_err})",
            res.breakdown.estimate[0]
        );
    }

    #[test]
    fn breakdown_csv_shape() {
        let part = Partition::uniform(0.0, 1.0, 1, 1);
        let payoff = IdentityPayoff { e: 1 };
        let weights = vec![vec![1.0], vec![1.0]];
        let errs = vec![vec![0.125]];
        let b = assemble(&weights, &errs, &part, &payoff, &[2.0]).unwrap();
        let csv = b.to_csv();
        assert!(csv.starts_with("k,t_start,t_end,degree,local_err_norm,weight_norm,contribution_1"));
        assert_eq!(csv.lines().count(), 2);
    }
}
