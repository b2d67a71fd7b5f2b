//! Driving-path ingestion and signature computation.
//!
//! All drivers are piecewise-linear [`SampledPath`]s with the canonical lift:
//! a linear segment's signature is `exp_N` of its increment placed at level 1,
//! and signatures over arbitrary subintervals come from Chen concatenation of
//! segment exponentials. A dyadic block memo ([`SignatureCache`]) turns the
//! O(M) left-to-right fold into O(log M) amortized for the nested queries the
//! adaptive loop performs.

use crate::tensor::{GroupTensor, TensorError, TruncatedTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("times must be strictly increasing (violation at sample {0})")]
    NonIncreasingTimes(usize),
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("a path needs at least two samples")]
    TooShort,
    #[error("invalid interval [{0}, {1}] for path on [{2}, {3}]")]
    InvalidInterval(f64, f64, f64, f64),
    #[error("unknown example path '{0}'")]
    UnknownExample(String),
    #[error("hurst parameter must lie in (0,1), got {0}")]
    BadHurst(f64),
    #[error("number of steps must be positive")]
    ZeroSteps,
    #[error("{0}")]
    Csv(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Piecewise-linear driving path: strictly increasing times and one
/// `ℝ^d` value per sample.
#[derive(Debug, Clone)]
pub struct SampledPath {
    dim: usize,
    times: Vec<f64>,
    /// Row-major `(M+1) × d`.
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(dim: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self, PathError> {
        if times.len() < 2 {
            return Err(PathError::TooShort);
        }
        assert_eq!(values.len(), times.len() * dim);
        for i in 0..times.len() {
            if !times[i].is_finite() {
                return Err(PathError::NonFinite(i));
            }
            if i > 0 && times[i] <= times[i - 1] {
                return Err(PathError::NonIncreasingTimes(i));
            }
            if values[i * dim..(i + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(PathError::NonFinite(i));
            }
        }
        Ok(SampledPath { dim, times, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of linear segments `M`.
    pub fn num_segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Linear interpolation at `t` (clamped to the time range).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let i = self.segment_of(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let (p, q) = (self.sample(i), self.sample(i + 1));
        (0..self.dim).map(|j| p[j] + a * (q[j] - p[j])).collect()
    }

    /// Index `i` with `times[i] ≤ t ≤ times[i+1]`.
    fn segment_of(&self, t: f64) -> usize {
        let n = self.num_segments();
        self.times.partition_point(|&u| u <= t).saturating_sub(1).min(n - 1)
    }

    fn segment_increment(&self, i: usize, frac0: f64, frac1: f64) -> Vec<f64> {
        let (p, q) = (self.sample(i), self.sample(i + 1));
        (0..self.dim)
            .map(|j| (q[j] - p[j]) * (frac1 - frac0))
            .collect()
    }

    /// Signature over `[s,t]` by direct left-to-right fold (no cache).
    pub fn signature(&self, s: f64, t: f64, degree: usize) -> Result<GroupTensor, PathError> {
        self.signature_impl(s, t, degree, None)
    }

    fn check_interval(&self, s: f64, t: f64) -> Result<(), PathError> {
        let (a, b) = (self.t_start(), self.t_end());
        if !(s <= t) || s < a - 1e-12 * (b - a).abs() || t > b + 1e-12 * (b - a).abs() {
            return Err(PathError::InvalidInterval(s, t, a, b));
        }
        Ok(())
    }

    fn signature_impl(
        &self,
        s: f64,
        t: f64,
        degree: usize,
        cache: Option<&SignatureCache>,
    ) -> Result<GroupTensor, PathError> {
        self.check_interval(s, t)?;
        if s == t {
            return Ok(GroupTensor::unit(self.dim, degree));
        }
        let is = self.segment_of(s);
        let it = self.segment_of(t);
        let frac = |i: usize, u: f64| (u - self.times[i]) / (self.times[i + 1] - self.times[i]);
        if is == it {
            let inc = self.segment_increment(is, frac(is, s), frac(is, t));
            return Ok(segment_signature(&inc, degree));
        }
        // head partial, full blocks, tail partial
        let mut acc;
        let full_start;
        if s > self.times[is] {
            let inc = self.segment_increment(is, frac(is, s), 1.0);
            acc = segment_signature(&inc, degree);
            full_start = is + 1;
        } else {
            acc = GroupTensor::unit(self.dim, degree);
            full_start = is;
        }
        if full_start < it {
            let body = match cache {
                Some(c) => c.block_fold(full_start, it, degree),
                None => self.fold_segments(full_start, it, degree),
            };
            acc = acc.mul(&body)?;
        }
        if t > self.times[it] {
            let inc = self.segment_increment(it, 0.0, frac(it, t));
            acc = acc.mul(&segment_signature(&inc, degree))?;
        }
        Ok(acc)
    }

    /// Left-to-right Chen fold of the segment exponentials in `[i, j)`.
    fn fold_segments(&self, i: usize, j: usize, degree: usize) -> GroupTensor {
        let mut acc = GroupTensor::unit(self.dim, degree);
        for k in i..j {
            let inc = self.segment_increment(k, 0.0, 1.0);
            acc = acc.mul(&segment_signature(&inc, degree)).expect("same dims");
        }
        acc
    }
}

/// Signature of a single linear segment with increment `v`: levels are
/// `v^⊗k/k!`.
pub fn segment_signature(increment: &[f64], degree: usize) -> GroupTensor {
    let v = TruncatedTensor::embed_level1(increment.len(), degree, increment);
    GroupTensor::exp(&v).expect("level-1 element is primitive")
}

/// Dyadic-block signature memo over a path's segments.
///
/// Block `(level ℓ, index b)` covers segments `[b·2^ℓ, (b+1)·2^ℓ)`; a query
/// decomposes into O(log M) aligned blocks, each computed once per degree.
/// Cached entries are pure functions of `(degree, level, block)`, so repeated
/// queries reproduce the same bytes.
pub struct SignatureCache {
    path: SampledPath,
    memo: Mutex<HashMap<(usize, u32, u64), GroupTensor>>,
}

impl SignatureCache {
    pub fn new(path: SampledPath) -> Self {
        SignatureCache {
            path,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn path(&self) -> &SampledPath {
        &self.path
    }

    pub fn signature(&self, s: f64, t: f64, degree: usize) -> Result<GroupTensor, PathError> {
        self.path.signature_impl(s, t, degree, Some(self))
    }

    fn block(&self, degree: usize, level: u32, idx: u64) -> GroupTensor {
        if level == 0 {
            let inc = self.path.segment_increment(idx as usize, 0.0, 1.0);
            return segment_signature(&inc, degree);
        }
        if let Some(hit) = self.memo.lock().unwrap().get(&(degree, level, idx)) {
            return hit.clone();
        }
        let left = self.block(degree, level - 1, 2 * idx);
        let right = self.block(degree, level - 1, 2 * idx + 1);
        let sig = left.mul(&right).expect("same dims");
        self.memo
            .lock()
            .unwrap()
            .insert((degree, level, idx), sig.clone());
        sig
    }

    /// Chen fold over full segments `[i, j)` via aligned dyadic blocks.
    fn block_fold(&self, mut i: usize, j: usize, degree: usize) -> GroupTensor {
        let mut acc = GroupTensor::unit(self.path.dim, degree);
        while i < j {
            let align = if i == 0 { usize::MAX } else { 1 << i.trailing_zeros() };
            let mut size = align.min((j - i).next_power_of_two());
            while size > j - i {
                size >>= 1;
            }
            let level = size.trailing_zeros();
            acc = acc
                .mul(&self.block(degree, level, (i / size) as u64))
                .expect("same dims");
            i += size;
        }
        acc
    }
}

/// Fractional Gaussian noise (unit spacing, unit variance) by circulant
/// embedding; falls back to Cholesky when the embedding is not PSD, which
/// only happens at tiny sizes.
fn fgn(hurst: f64, n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let cov = |k: usize| -> f64 {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(2.0 * hurst) - 2.0 * k.powf(2.0 * hurst)
            + (k - 1.0).abs().powf(2.0 * hurst))
    };
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|k| Complex::new(cov(k.min(m - k)), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let eig: Vec<f64> = row.iter().map(|c| c.re).collect();
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);

    let normals: Vec<f64> = (0..2 * m)
        .map(|_| StandardNormal.sample(rng))
        .collect();

    if min_eig < -1e-10 * eig.iter().cloned().fold(0.0, f64::max) {
        return fgn_cholesky(hurst, n, &normals);
    }

    let mut w = vec![Complex::new(0.0, 0.0); m];
    let scale2 = 1.0 / (2.0 * m as f64);
    let scale4 = 1.0 / (4.0 * m as f64);
    for i in 0..m {
        let e = eig[i].max(0.0);
        w[i] = if i == 0 {
            Complex::new((e * 2.0 * scale2).sqrt() * normals[0], 0.0)
        } else if i < n {
            Complex::new(
                (e * 2.0 * scale4).sqrt() * normals[2 * i],
                (e * 2.0 * scale4).sqrt() * normals[2 * i + 1],
            )
        } else if i == n {
            Complex::new((e * 2.0 * scale2).sqrt() * normals[1], 0.0)
        } else {
            let j = m - i;
            Complex::new(
                (e * 2.0 * scale4).sqrt() * normals[2 * j],
                -(e * 2.0 * scale4).sqrt() * normals[2 * j + 1],
            )
        };
    }
    fft.process(&mut w);
    w[..n].iter().map(|c| c.re).collect()
}

fn fgn_cholesky(hurst: f64, n: usize, normals: &[f64]) -> Vec<f64> {
    let cov = |i: usize, j: usize| -> f64 {
        let k = i.abs_diff(j) as f64;
        0.5 * ((k + 1.0).powf(2.0 * hurst) - 2.0 * k.powf(2.0 * hurst)
            + (k - 1.0).abs().powf(2.0 * hurst))
    };
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = cov(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = if i == j { s.max(1e-300).sqrt() } else { s / l[j * n + j] };
        }
    }
    (0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * normals[k]).sum())
        .collect()
}

/// Fractional Brownian motion on `[0,1]`, `n_steps` uniform increments per
/// coordinate, exact covariance via circulant embedding, deterministic per
/// seed.
pub fn generate_fbm(
    hurst: f64,
    n_steps: usize,
    dim: usize,
    seed: u64,
) -> Result<SampledPath, PathError> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(PathError::BadHurst(hurst));
    }
    if n_steps == 0 {
        return Err(PathError::ZeroSteps);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dt = 1.0 / n_steps as f64;
    let scale = dt.powf(hurst);
    let coords: Vec<Vec<f64>> = (0..dim).map(|_| fgn(hurst, n_steps, &mut rng)).collect();
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let mut values = vec![0.0; (n_steps + 1) * dim];
    for i in 1..=n_steps {
        for j in 0..dim {
            values[i * dim + j] = values[(i - 1) * dim + j] + scale * coords[j][i - 1];
        }
    }
    SampledPath::new(dim, times, values)
}

/// Standard Brownian motion on `[0, horizon]` with `n_steps` increments.
pub fn generate_brownian(
    horizon: f64,
    n_steps: usize,
    dim: usize,
    seed: u64,
) -> Result<SampledPath, PathError> {
    if n_steps == 0 {
        return Err(PathError::ZeroSteps);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dt = horizon / n_steps as f64;
    let sd = dt.sqrt();
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let mut values = vec![0.0; (n_steps + 1) * dim];
    for i in 1..=n_steps {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[i * dim + j] = values[(i - 1) * dim + j] + sd * z;
        }
    }
    SampledPath::new(dim, times, values)
}

/// Options for the example-path builders.
#[derive(Debug, Clone)]
pub struct PathOptions {
    pub seed: u64,
    /// Time horizon for the Langevin driver.
    pub horizon: f64,
    /// Uniform sample count for the changing-roughness driver.
    pub roughness_steps: usize,
    /// Uniform sample count for the smooth drivers.
    pub smooth_steps: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            seed: 0,
            horizon: 10.0,
            roughness_steps: 1 << 17,
            smooth_steps: 1 << 14,
        }
    }
}

/// Builds the registered example drivers by name.
pub fn build_example_path(name: &str, opts: &PathOptions) -> Result<SampledPath, PathError> {
    match name {
        "spike-path" => {
            let n = opts.smooth_steps;
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let mut values = Vec::with_capacity((n + 1) * 2);
            for &t in &times {
                values.push(1.0 / (5000.0 * (t - 0.5).powi(2) + 1.0));
                values.push(t);
            }
            SampledPath::new(2, times, values)
        }
        "spike-field" => {
            // the circle driver; the counterclockwise orientation is the one
            // that reproduces the reported singular hit times
            let n = opts.smooth_steps;
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let mut values = Vec::with_capacity((n + 1) * 2);
            for &t in &times {
                values.push(0.5 * (8.0 * std::f64::consts::PI * t).cos());
                values.push(0.5 * (8.0 * std::f64::consts::PI * t).sin());
            }
            SampledPath::new(2, times, values)
        }
        "changing-roughness" => {
            let n = opts.roughness_steps;
            assert!(n % 4 == 0, "roughness step count must be divisible by 4");
            let circle = |t: f64| {
                [
                    0.5 * (8.0 * std::f64::consts::PI * t).cos(),
                    0.5 * (8.0 * std::f64::consts::PI * t).sin(),
                ]
            };
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let fbm = generate_fbm(0.4, n / 2, 2, opts.seed)?;
            let mut values = vec![0.0; (n + 1) * 2];
            // circle on [0, 1/4]
            for i in 0..=n / 4 {
                let v = circle(times[i]);
                values[2 * i] = v[0];
                values[2 * i + 1] = v[1];
            }
            // fBm on [1/4, 3/4], shifted to start at the circle endpoint
            let base = [values[2 * (n / 4)], values[2 * (n / 4) + 1]];
            for i in 0..=n / 2 {
                let s = fbm.sample(i);
                let k = n / 4 + i;
                values[2 * k] = base[0] + s[0];
                values[2 * k + 1] = base[1] + s[1];
            }
            // circle on [3/4, 1], shifted to start at the fBm endpoint
            let c0 = circle(0.75);
            let shift = [
                values[2 * (3 * n / 4)] - c0[0],
                values[2 * (3 * n / 4) + 1] - c0[1],
            ];
            for i in 3 * n / 4..=n {
                let v = circle(times[i]);
                values[2 * i] = shift[0] + v[0];
                values[2 * i + 1] = shift[1] + v[1];
            }
            SampledPath::new(2, times, values)
        }
        "langevin" => {
            // time-enhanced Brownian driver (t, W_t); step density matches
            // 2^20 steps per [0,1000]
            let n = (((1u64 << 20) as f64) * opts.horizon / 1000.0).round().max(16.0) as usize;
            let w = generate_brownian(opts.horizon, n, 1, opts.seed)?;
            let times = w.times().to_vec();
            let mut values = Vec::with_capacity((n + 1) * 2);
            for (i, &t) in times.iter().enumerate() {
                values.push(t);
                values.push(w.sample(i)[0]);
            }
            SampledPath::new(2, times, values)
        }
        other => Err(PathError::UnknownExample(other.to_string())),
    }
}

/// Writes the path CSV format: header `t,x1,…,xd`, 17-significant-digit
/// decimals.
pub fn path_to_csv(path: &SampledPath) -> String {
    let mut out = String::from("t");
    for j in 1..=path.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..path.times().len() {
        out.push_str(&format!("{:.16e}", path.times()[i]));
        for v in path.sample(i) {
            out.push_str(&format!(",{:.16e}", v));
        }
        out.push('\n');
    }
    out
}

/// Parses the path CSV format, reporting the offending line on failure.
pub fn path_from_csv(text: &str) -> Result<SampledPath, PathError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| PathError::Csv("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(PathError::Csv(format!(
            "line 1: expected header 't,x1,…,xd', got '{header}'"
        )));
    }
    let dim = cols.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(PathError::Csv(format!(
                "line {}: expected {} fields, got {}",
                lineno + 1,
                dim + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, PathError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| PathError::Csv(format!("line {}: {}", lineno + 1, e)))
        };
        times.push(parse(fields[0])?);
        for f in &fields[1..] {
            values.push(parse(f)?);
        }
    }
    SampledPath::new(dim, times, values)
}
