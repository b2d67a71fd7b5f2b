//! Built-in example problems (driver path + vector field + payoff +
//! tolerances) and reference-solution generation.

use crate::field::{field_by_name, CoordPayoff, FieldEval, IdentityPayoff, Payoff};
use crate::logode::{sweep, OdeSolverConfig, Partition, SolveError};
use crate::path::{build_example_path, PathError, PathOptions, SampledPath, SignatureCache};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown example '{0}' (expected spike-path, spike-field, changing-roughness or langevin)")]
    UnknownExample(String),
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("initial value has {0} components, field state dimension is {1}")]
    BadInitialValue(usize, usize),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("reference cache: {0}")]
    Cache(String),
}

/// A fully assembled solve: driver, field, payoff, initial value, roughness
/// parameter and default tolerances.
pub struct Problem {
    pub name: String,
    pub field_name: String,
    pub field: Arc<dyn FieldEval>,
    pub payoff: Arc<dyn Payoff>,
    pub y0: Vec<f64>,
    pub cache: Arc<SignatureCache>,
    pub p: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Stable content digest, the key for the on-disk reference cache.
    pub hash: String,
}

/// Options shared by the example builders.
#[derive(Debug, Clone)]
pub struct ProblemOptions {
    pub seed: u64,
    /// Langevin time horizon (desk-scale default 10; the full-scale setup
    /// uses 1000).
    pub horizon: f64,
    /// Use the full-scale path discretizations (2^20 samples).
    pub full_scale: bool,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions {
            seed: 0,
            horizon: 10.0,
            full_scale: false,
        }
    }
}

fn digest_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
        hasher.update([0xff]);
    }
    hex_of(&hasher.finalize())
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

fn path_digest(path: &SampledPath) -> String {
    let mut hasher = Sha256::new();
    for &t in path.times() {
        hasher.update(t.to_le_bytes());
    }
    for i in 0..path.times().len() {
        for &v in path.sample(i) {
            hasher.update(v.to_le_bytes());
        }
    }
    hex_of(&hasher.finalize())
}

/// The registered examples: name → (field, payoff, y₀, p, tolerances).
pub fn build_example_problem(name: &str, opts: &ProblemOptions) -> Result<Problem, ProblemError> {
    let path_opts = PathOptions {
        seed: opts.seed,
        horizon: if opts.full_scale { 1000.0 } else { opts.horizon },
        roughness_steps: if opts.full_scale { 1 << 20 } else { 1 << 17 },
        smooth_steps: 1 << 14,
    };
    let (field_name, payoff, y0, p, tol_abs, tol_rel): (
        &str,
        Arc<dyn Payoff>,
        Vec<f64>,
        f64,
        f64,
        f64,
    ) = match name {
        "spike-path" => (
            "spike-path",
            Arc::new(IdentityPayoff { e: 2 }),
            vec![0.0, 0.0],
            1.0,
            1e-4,
            1e-4,
        ),
        "spike-field" => (
            "spike-field",
            Arc::new(IdentityPayoff { e: 2 }),
            vec![0.0, 0.0],
            1.0,
            1e-4,
            1e-4,
        ),
        "changing-roughness" => (
            "changing-roughness",
            Arc::new(IdentityPayoff { e: 2 }),
            vec![0.0, 0.0],
            2.0,
            5e-4,
            5e-4,
        ),
        "langevin" => (
            "langevin",
            Arc::new(CoordPayoff { e: 2, idx: 0 }),
            vec![0.0, 0.0],
            2.0,
            1e-6,
            0.0,
        ),
        other => return Err(ProblemError::UnknownExample(other.to_string())),
    };
    let path = build_example_path(name, &path_opts)?;
    let field = field_by_name(field_name).expect("registered field");
    let hash = digest_parts(&[
        name.as_bytes(),
        field_name.as_bytes(),
        path_digest(&path).as_bytes(),
        &opts.seed.to_le_bytes(),
        &path_opts.horizon.to_le_bytes(),
    ]);
    Ok(Problem {
        name: name.to_string(),
        field_name: field_name.to_string(),
        field,
        payoff,
        y0,
        cache: Arc::new(SignatureCache::new(path)),
        p,
        tol_abs,
        tol_rel,
        hash,
    })
}

/// A user-supplied driver with a registered field.
pub fn build_custom_problem(
    path: SampledPath,
    field_name: &str,
    y0: Option<Vec<f64>>,
) -> Result<Problem, ProblemError> {
    let field =
        field_by_name(field_name).ok_or_else(|| ProblemError::UnknownField(field_name.into()))?;
    let (e, _) = field.dims();
    let y0 = y0.unwrap_or_else(|| vec![0.0; e]);
    if y0.len() != e {
        return Err(ProblemError::BadInitialValue(y0.len(), e));
    }
    let payoff: Arc<dyn Payoff> = Arc::new(IdentityPayoff { e });
    let mut y0_bytes = Vec::new();
    for v in &y0 {
        y0_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let hash = digest_parts(&[
        b"custom",
        field_name.as_bytes(),
        path_digest(&path).as_bytes(),
        &y0_bytes,
    ]);
    Ok(Problem {
        name: "custom".to_string(),
        field_name: field_name.to_string(),
        field,
        payoff,
        y0,
        cache: Arc::new(SignatureCache::new(path)),
        p: 1.0,
        tol_abs: 1e-4,
        tol_rel: 1e-4,
        hash,
    })
}

/// Reference terminal state: uniform grid with the given interval count and
/// degree, tightened inner tolerance, cached on disk keyed by the problem
/// hash. Cache hits return the stored bytes verbatim.
pub fn make_reference(
    problem: &Problem,
    n_intervals: usize,
    degree: usize,
    inner_tol: f64,
    cache_dir: Option<&Path>,
) -> Result<Vec<f64>, ProblemError> {
    let key = digest_parts(&[
        problem.hash.as_bytes(),
        &n_intervals.to_le_bytes(),
        &degree.to_le_bytes(),
        &inner_tol.to_le_bytes(),
    ]);
    let cache_file = cache_dir.map(|d| d.join(format!("ref-{key}.json")));
    if let Some(file) = &cache_file {
        if let Ok(text) = std::fs::read_to_string(file) {
            let parsed: Vec<f64> = serde_json::from_str(&text)
                .map_err(|e| ProblemError::Cache(format!("corrupt {}: {e}", file.display())))?;
            return Ok(parsed);
        }
    }
    let part = Partition::uniform(
        problem.cache.path().t_start(),
        problem.cache.path().t_end(),
        n_intervals,
        degree,
    );
    let cfg = OdeSolverConfig {
        rtol: inner_tol.max(1e-13),
        atol: inner_tol.max(1e-13) * 1e-2,
        max_steps: 10_000_000,
    };
    let recs = sweep(
        problem.field.as_ref(),
        &problem.y0,
        &problem.cache,
        &part,
        &cfg,
    )?;
    let y = recs.last().expect("nonempty grid").y_out.clone();
    if let Some(file) = &cache_file {
        if let Some(dir) = file.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| ProblemError::Cache(format!("mkdir {}: {e}", dir.display())))?;
        }
        let mut text = String::from("[");
        for (i, v) in y.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            text.push_str(&format!("{v:.16e}"));
        }
        text.push(']');
        std::fs::write(file, text)
            .map_err(|e| ProblemError::Cache(format!("write {}: {e}", file.display())))?;
    }
    Ok(y)
}
