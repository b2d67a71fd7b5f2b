//! One-step schemes (log-ODE and Euler) and the partition-sweep driver,
//! backed by an embedded Dormand–Prince 5(4) inner integrator with PI step
//! control.
//!
//! A log-ODE step advances the state by solving the autonomous ODE
//! `dy_τ = Σ_k f^∘k(y_τ) π_k(log_N g) dτ` over unit time; the Euler step is
//! the closed-form contraction `y₀ + Σ_k f^∘k(y₀) π_k(g)` with no inner ODE.

use crate::field::{iterated_field_contract, FieldError, FieldEval, FullField};
use crate::path::{PathError, SignatureCache};
use crate::tensor::{GroupTensor, TensorError};
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

/// State norm beyond which a solve is reported as exploded.
pub const EXPLOSION_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("inner solver exhausted {0} steps")]
    StepLimit(usize),
    #[error("inner step size underflow at τ={0}")]
    StepUnderflow(f64),
    #[error("state norm exceeded {EXPLOSION_THRESHOLD:e} (explosion)")]
    Explosion,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("interval {index} [{t0}, {t1}]: {source}")]
    AtInterval {
        index: usize,
        t0: f64,
        t1: f64,
        #[source]
        source: Box<SolveError>,
    },
}

impl SolveError {
    pub fn at_interval(self, index: usize, t0: f64, t1: f64) -> Self {
        SolveError::AtInterval {
            index,
            t0,
            t1,
            source: Box::new(self),
        }
    }
}

/// Inner-ODE solver configuration: embedded 5(4) pair tolerances and step cap.
#[derive(Debug, Clone, Serialize)]
pub struct OdeSolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeSolverConfig {
    fn default() -> Self {
        OdeSolverConfig {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 100_000,
        }
    }
}

impl OdeSolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        OdeSolverConfig {
            rtol: tol,
            atol: tol * 1e-2,
            max_steps: 100_000,
        }
    }
}

/// Inner-integrator statistics for one step.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct OdeStats {
    pub n_evals: u64,
    pub n_steps: u64,
    pub n_rejected: u64,
}

// Dormand–Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates the autonomous system `dy/dτ = rhs(y)` over `τ ∈ [0,1]`.
pub fn dopri5(
    rhs: &mut dyn FnMut(&[f64], &mut [f64]),
    y0: &[f64],
    cfg: &OdeSolverConfig,
) -> Result<(Vec<f64>, OdeStats), SolveError> {
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut ytmp = vec![0.0; n];

    rhs(&y, &mut k[0]);
    stats.n_evals += 1;

    // starting step size from the scaled derivative magnitudes
    let sc = |yi: f64| cfg.atol + cfg.rtol * yi.abs();
    let d0 = rms(y.iter().map(|&v| v / sc(v)));
    let d1 = rms(y.iter().zip(&k[0]).map(|(&v, &f)| f / sc(v)));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        (0.01 * d0 / d1).min(1.0)
    };
    // one explicit Euler probe to bound the second derivative
    for i in 0..n {
        ytmp[i] = y[i] + h * k[0][i];
    }
    rhs(&ytmp, &mut k[1]);
    stats.n_evals += 1;
    let d2 = rms(
        y.iter()
            .zip(k[0].iter().zip(&k[1]))
            .map(|(&v, (&f0, &f1))| (f1 - f0) / sc(v)),
    ) / h;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    h = (100.0 * h).min(h1).min(1.0);

    let mut t = 0.0;
    let mut facold: f64 = 1e-4;
    const BETA: f64 = 0.04;
    const SAFE: f64 = 0.9;
    let expo1 = 0.2 - BETA * 0.75;

    let mut yerr = vec![0.0; n];
    let mut steps = 0usize;
    while t < 1.0 {
        if steps >= cfg.max_steps {
            return Err(SolveError::StepLimit(cfg.max_steps));
        }
        steps += 1;
        if h < 1e-14 {
            return Err(SolveError::StepUnderflow(t));
        }
        if t + h > 1.0 {
            h = 1.0 - t;
        }
        for stage in 0..6 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                ytmp[i] = y[i] + h * acc;
            }
            rhs(&ytmp, &mut k[stage + 1]);
            stats.n_evals += 1;
        }
        // stage-7 input ytmp is the 5th-order solution (FSAL)
        let ynew = ytmp.clone();
        for i in 0..n {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                if ERR[j] != 0.0 {
                    acc += ERR[j] * kj[i];
                }
            }
            yerr[i] = h * acc;
        }
        let err = rms((0..n).map(|i| {
            let s = cfg.atol + cfg.rtol * y[i].abs().max(ynew[i].abs());
            yerr[i] / s
        }));

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(0.1, 5.0);
            facold = err.max(1e-4);
            t += h;
            y = ynew;
            k[0] = k[6].clone();
            stats.n_steps += 1;
            if y.iter().any(|v| v.abs() > EXPLOSION_THRESHOLD) {
                return Err(SolveError::Explosion);
            }
            h /= fac;
        } else {
            stats.n_rejected += 1;
            h /= (fac11 / SAFE).min(5.0);
        }
    }
    Ok((y, stats))
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for v in it {
        s += v * v;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

/// Deterministic work proxy for one solve: inner evaluations weighted by the
/// contraction leaf count and jet width of the degree.
pub fn step_work(state_len: usize, driver_dim: usize, degree: usize, n_evals: u64) -> f64 {
    let mut per_eval = 0.0;
    for k in 1..=degree {
        per_eval += (2.0 * driver_dim as f64).powi(k as i32 - 1) * (1u64 << (k - 1)) as f64;
    }
    state_len as f64 * per_eval * n_evals as f64
}

/// One log-ODE step: solves `dy = Σ f^∘k(y) π_k(log_N g) dτ` over `[0,1]`.
pub fn log_ode_step(
    field: &dyn FieldEval,
    y0: &[f64],
    g: &GroupTensor,
    cfg: &OdeSolverConfig,
) -> Result<(Vec<f64>, OdeStats), SolveError> {
    let w = g.log();
    // validate dims/order once, then the closure can unwrap
    iterated_field_contract(field, y0, &w)?;
    let mut rhs = |y: &[f64], out: &mut [f64]| {
        let r = iterated_field_contract(field, y, &w).expect("validated");
        out.copy_from_slice(&r);
    };
    dopri5(&mut rhs, y0, cfg)
}

/// One Euler step: `y₀ + Σ_k f^∘k(y₀) π_k(g)`, closed form.
pub fn euler_step(
    field: &dyn FieldEval,
    y0: &[f64],
    g: &GroupTensor,
) -> Result<Vec<f64>, SolveError> {
    let mut levels = g.tensor().clone();
    levels.data_mut()[0] = 0.0;
    let inc = iterated_field_contract(field, y0, &levels)?;
    Ok(y0.iter().zip(&inc).map(|(a, b)| a + b).collect())
}

/// One log-ODE step on a tensor state with the full field `**f**`.
pub fn log_ode_step_full(
    full: &FullField,
    z0: &[f64],
    g: &GroupTensor,
    cfg: &OdeSolverConfig,
) -> Result<(Vec<f64>, OdeStats), SolveError> {
    full.check_order(g.degree())?;
    let w = g.log();
    let mut rhs = |z: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&full.logode_rhs(z, &w));
    };
    dopri5(&mut rhs, z0, cfg)
}

/// One Euler step on a tensor state with the full field.
pub fn euler_step_full(
    full: &FullField,
    z0: &[f64],
    g: &GroupTensor,
) -> Result<Vec<f64>, SolveError> {
    full.check_order(g.degree())?;
    let mut levels = g.tensor().clone();
    levels.data_mut()[0] = 0.0;
    Ok(full.euler_update(z0, &levels))
}

/// Ordered partition of the time horizon with a per-interval degree.
#[derive(Debug, Clone, Serialize)]
pub struct Partition {
    /// `n+1` grid points.
    pub times: Vec<f64>,
    /// `n` degrees.
    pub degrees: Vec<usize>,
}

impl Partition {
    pub fn uniform(t0: f64, t1: f64, n: usize, degree: usize) -> Self {
        let times = (0..=n)
            .map(|i| t0 + (t1 - t0) * i as f64 / n as f64)
            .collect();
        Partition {
            times,
            degrees: vec![degree; n],
        }
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(1)
    }
}

/// Record of one executed step: interval, degree, states, cost accounting,
/// inner-solver statistics and the cached log-signature.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub t0: f64,
    pub t1: f64,
    pub degree: usize,
    pub y_in: Vec<f64>,
    pub y_out: Vec<f64>,
    pub wall_seconds: f64,
    pub work: f64,
    pub stats: OdeStats,
    /// Levels of `log_N(S_N(x))` over the interval.
    pub log_signature: Vec<Vec<f64>>,
}

/// Applies the log-ODE scheme across a partition, recording per-step cost
/// and statistics.
pub fn sweep(
    field: &dyn FieldEval,
    y0: &[f64],
    cache: &SignatureCache,
    partition: &Partition,
    cfg: &OdeSolverConfig,
) -> Result<Vec<StepRecord>, SolveError> {
    let (_, d) = field.dims();
    let mut records = Vec::with_capacity(partition.len());
    let mut y = y0.to_vec();
    for idx in 0..partition.len() {
        let (t0, t1) = (partition.times[idx], partition.times[idx + 1]);
        let degree = partition.degrees[idx];
        let started = Instant::now();
        let sig = cache
            .signature(t0, t1, degree)
            .map_err(|e| SolveError::from(e).at_interval(idx, t0, t1))?;
        let w = sig.log();
        let (y_out, stats) = log_ode_step(field, &y, &sig, cfg)
            .map_err(|e| e.at_interval(idx, t0, t1))?;
        records.push(StepRecord {
            index: idx,
            t0,
            t1,
            degree,
            y_in: std::mem::replace(&mut y, y_out.clone()),
            y_out,
            wall_seconds: started.elapsed().as_secs_f64(),
            work: step_work(y0.len(), d, degree, stats.n_evals),
            stats,
            log_signature: (0..=degree).map(|k| w.level(k).to_vec()).collect(),
        });
    }
    Ok(records)
}

/// Full-field sweep: evolves a tensor state `z ∈ T₁^N` across the partition.
/// Returns per-step records (holding base-space points) plus the tensor
/// states at every grid point.
pub fn sweep_full(
    full: &FullField,
    cache: &SignatureCache,
    partition: &Partition,
    cfg: &OdeSolverConfig,
) -> Result<(Vec<StepRecord>, Vec<Vec<f64>>), SolveError> {
    let (_, d) = full.base_dims();
    let mut records = Vec::with_capacity(partition.len());
    let mut states = Vec::with_capacity(partition.len() + 1);
    let mut z = full.initial_state();
    states.push(z.clone());
    for idx in 0..partition.len() {
        let (t0, t1) = (partition.times[idx], partition.times[idx + 1]);
        let degree = partition.degrees[idx].min(full.degree());
        let started = Instant::now();
        let sig = cache
            .signature(t0, t1, full.degree())
            .map_err(|e| SolveError::from(e).at_interval(idx, t0, t1))?;
        let w = sig.log();
        let (z_out, stats) = log_ode_step_full(full, &z, &sig, cfg)
            .map_err(|e| e.at_interval(idx, t0, t1))?;
        records.push(StepRecord {
            index: idx,
            t0,
            t1,
            degree,
            y_in: full.read_point(&z),
            y_out: full.read_point(&z_out),
            wall_seconds: started.elapsed().as_secs_f64(),
            work: step_work(full.state_len(), d, full.degree(), stats.n_evals),
            stats,
            log_signature: (0..=full.degree()).map(|k| w.level(k).to_vec()).collect(),
        });
        z = z_out;
        states.push(z.clone());
    }
    Ok((records, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{
        FullField, LinearMatrixField, ScalarLinearField, TanhCosField,
    };
    use crate::path::{build_example_path, segment_signature, PathOptions, SignatureCache};
    use crate::tensor::{GroupTensor, TruncatedTensor};
    use std::sync::Arc;

    fn tight() -> OdeSolverConfig {
        OdeSolverConfig {
            rtol: 1e-12,
            atol: 1e-14,
            max_steps: 1_000_000,
        }
    }

    #[test]
    fn scalar_linear_flow() {
        // f(y)=y, g = segment exp with h=0.1: result e^{0.1}·y0 for any N
        let f = ScalarLinearField { a: 1.0 };
        for degree in 1..=4 {
            let g = segment_signature(&[0.1], degree);
            let (y, _) = log_ode_step(&f, &[2.0], &g, &tight()).unwrap();
            assert!(
                (y[0] - 2.0 * 0.1f64.exp()).abs() < 1e-10,
                "N={degree}: {}",
                y[0]
            );
        }
    }

    #[test]
    fn unit_group_element_is_identity() {
        let f = TanhCosField;
        let g = GroupTensor::unit(2, 2);
        let (y, _) = log_ode_step(&f, &[0.3, -0.4], &g, &tight()).unwrap();
        assert_eq!(y, vec![0.3, -0.4]);
    }

    #[test]
    fn self_refinement_oracle_spike_path() {
        // one step over [0, 1/8] vs the same step split into 64 sub-steps
        let opts = PathOptions {
            smooth_steps: 1 << 12,
            ..Default::default()
        };
        let path = build_example_path("spike-path", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let f = TanhCosField;
        let g = cache.signature(0.0, 0.125, 2).unwrap();
        let (coarse, _) = log_ode_step(&f, &[0.0, 0.0], &g, &tight()).unwrap();
        let mut y = vec![0.0, 0.0];
        for i in 0..64 {
            let (s, t) = (0.125 * i as f64 / 64.0, 0.125 * (i + 1) as f64 / 64.0);
            let gi = cache.signature(s, t, 2).unwrap();
            y = log_ode_step(&f, &y, &gi, &tight()).unwrap().0;
        }
        let err = ((coarse[0] - y[0]).powi(2) + (coarse[1] - y[1]).powi(2)).sqrt();
        assert!(err < 1e-6, "one-step vs composite: {err}");
    }

    #[test]
    fn euler_closed_form() {
        // f(y)=y, y0=1, g levels (h, h²/2), N=2, h=0.1 → 1.105
        let f = ScalarLinearField { a: 1.0 };
        let g = segment_signature(&[0.1], 2);
        let y = euler_step(&f, &[1.0], &g).unwrap();
        assert!((y[0] - 1.105).abs() < 1e-15);

        let unit = GroupTensor::unit(1, 2);
        assert_eq!(euler_step(&f, &[1.0], &unit).unwrap(), vec![1.0]);
    }

    #[test]
    fn euler_logode_gap_order() {
        // ‖euler − logode‖ = O(hom_norm(g)^{N+1}): slope N+1 ± 0.3
        let opts = PathOptions {
            smooth_steps: 1 << 12,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let f = TanhCosField;
        let y0 = [0.1, -0.2];
        // base point chosen away from the field's singular bumps so the
        // asymptotic regime is visible
        for degree in [1usize, 2] {
            let mut lens = Vec::new();
            let mut gaps = Vec::new();
            for k in 4..=8 {
                let h = 0.25f64 / (1 << k) as f64;
                let g = cache.signature(0.65, 0.65 + h, degree).unwrap();
                let (logode, _) = log_ode_step(&f, &y0, &g, &tight()).unwrap();
                let euler = euler_step(&f, &y0, &g).unwrap();
                let gap = (0..2)
                    .map(|i| (logode[i] - euler[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                lens.push(h.ln());
                gaps.push(gap.ln());
            }
            let slope = regress(&lens, &gaps);
            assert!(
                (slope - (degree as f64 + 1.0)).abs() < 0.3,
                "N={degree}: euler-logode gap slope {slope}"
            );
        }
    }

    fn regress(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn sweep_single_interval_reduces_to_step() {
        let opts = PathOptions {
            smooth_steps: 1 << 10,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let f = TanhCosField;
        let part = Partition::uniform(0.0, 1.0, 1, 2);
        let recs = sweep(&f, &[0.0, 0.0], &cache, &part, &tight()).unwrap();
        let g = cache.signature(0.0, 1.0, 2).unwrap();
        let (direct, _) = log_ode_step(&f, &[0.0, 0.0], &g, &tight()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].y_out, direct);
    }

    #[test]
    fn refinement_never_hurts_smooth_case() {
        let opts = PathOptions {
            smooth_steps: 1 << 12,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let f = TanhCosField;
        let cfg = tight();
        let reference = {
            let part = Partition::uniform(0.0, 1.0, 1024, 2);
            sweep(&f, &[0.0, 0.0], &cache, &part, &cfg)
                .unwrap()
                .last()
                .unwrap()
                .y_out
                .clone()
        };
        let mut prev_err = f64::INFINITY;
        for n in [32usize, 64, 128] {
            let part = Partition::uniform(0.0, 1.0, n, 2);
            let recs = sweep(&f, &[0.0, 0.0], &cache, &part, &cfg).unwrap();
            let y = &recs.last().unwrap().y_out;
            let err = ((y[0] - reference[0]).powi(2) + (y[1] - reference[1]).powi(2)).sqrt();
            assert!(err < prev_err, "error grew under refinement: {err} vs {prev_err}");
            prev_err = err;
        }
    }

    #[test]
    fn chord_aligned_exactness_independent_of_degree() {
        // partition points on path samples, one segment per interval: the
        // log-ODE solves the exact chord ODE, independent of N
        let path = crate::path::SampledPath::new(
            2,
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.0, 0.7, -0.3, 1.0, 0.4],
        )
        .unwrap();
        let cache = SignatureCache::new(path);
        let f = TanhCosField;
        let cfg = tight();
        let mut results = Vec::new();
        for degree in 1..=3 {
            let part = Partition::uniform(0.0, 1.0, 2, degree);
            let recs = sweep(&f, &[0.0, 0.0], &cache, &part, &cfg).unwrap();
            results.push(recs.last().unwrap().y_out.clone());
        }
        for r in &results[1..] {
            let gap = ((r[0] - results[0][0]).powi(2) + (r[1] - results[0][1]).powi(2)).sqrt();
            assert!(gap < 1e-9, "degree dependence on chord-aligned grid: {gap}");
        }
    }

    #[test]
    fn full_sweep_first_level_matches_plain() {
        let opts = PathOptions {
            smooth_steps: 1 << 10,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let cfg = OdeSolverConfig::with_tol(1e-10);
        let part = Partition::uniform(0.0, 0.5, 8, 2);

        let plain = sweep(&TanhCosField, &[0.0, 0.0], &cache, &part, &cfg).unwrap();
        let full = FullField::new(Arc::new(TanhCosField), vec![0.0, 0.0], 2);
        let (recs, _) = sweep_full(&full, &cache, &part, &cfg).unwrap();
        let yp = &plain.last().unwrap().y_out;
        let yf = &recs.last().unwrap().y_out;
        let gap = ((yp[0] - yf[0]).powi(2) + (yp[1] - yf[1]).powi(2)).sqrt();
        assert!(gap < 1e-8, "full vs plain first level: {gap}");
    }

    #[test]
    fn full_step_stays_group_like() {
        let opts = PathOptions {
            smooth_steps: 1 << 10,
            ..Default::default()
        };
        let path = build_example_path("spike-field", &opts).unwrap();
        let cache = SignatureCache::new(path);
        let full = FullField::new(Arc::new(TanhCosField), vec![0.0, 0.0], 3);
        let g = cache.signature(0.0, 0.25, 3).unwrap();
        let (z, _) = log_ode_step_full(&full, &full.initial_state(), &g, &tight()).unwrap();
        let t = TruncatedTensor::from_raw(2, 3, z);
        let gt = GroupTensor::new(t).unwrap();
        assert!(gt.max_shuffle_defect() < 1e-8);
    }

    #[test]
    fn linear_matrix_field_scalar_flow() {
        // c=e=1: f₃(ψ)h = ψh, flow over a group element exp(u) is ψ·e^u
        let f3 = LinearMatrixField { c: 1, e: 1 };
        let u = 0.42;
        let g = segment_signature(&[u], 3);
        let (psi, _) = log_ode_step(&f3, &[2.0], &g, &tight()).unwrap();
        assert!((psi[0] - 2.0 * u.exp()).abs() < 1e-10);
    }

    #[test]
    fn explosion_detected() {
        // dy = y² dx with a big increment blows past the threshold
        let f = crate::field::ScalarQuadField;
        let g = segment_signature(&[5.0], 1);
        let err = log_ode_step(&f, &[1.0], &g, &OdeSolverConfig::default());
        assert!(matches!(
            err,
            Err(SolveError::Explosion) | Err(SolveError::StepLimit(_)) | Err(SolveError::StepUnderflow(_))
        ));
    }
}
