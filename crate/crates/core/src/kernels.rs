//! Translation-invariant kernels: propagator F, polarization π, (1+π)^{±1/2} − 1,
//! and the τ-field cutoff 1/(1+f).

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad;
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Default position-space spacing.
pub const DEFAULT_GRID_STEP: f64 = 0.125;
/// Values below this magnitude are excluded from decay fits.
pub const NOISE_FLOOR: f64 = 1e-13;
/// Inner radius of the decay-fit annulus.
pub const FIT_INNER_RADIUS: f64 = 2.0;

/// Default tabulation half extent: min(10, 8/m).
pub fn default_half_extent(m: f64) -> f64 {
    (8.0 / m).min(10.0)
}

/// Regulated propagator in momentum space, 1/(q² e^{q²} + m²).
pub fn propagator_symbol(q2: f64, m2: f64) -> f64 {
    if q2 > 700.0 {
        return 0.0;
    }
    1.0 / (q2 * q2.exp() + m2)
}

/// A kernel evaluated at integer lattice displacements.
pub trait LatticeKernel {
    fn grid_step(&self) -> f64;
    /// Kernel value at displacement (di·h, dj·h).
    fn at(&self, di: i64, dj: i64) -> f64;
}

/// Exponential fit log|k| = a − κ r − β ln r.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub power: f64,
    pub log_amplitude: f64,
    /// Root-mean-square residual of log|k|.
    pub rms_residual: f64,
    pub r_squared: f64,
    pub points: usize,
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Weighted linear least squares on the given basis columns.
pub fn weighted_least_squares(basis: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let p = basis.len();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for i in 0..y.len() {
        for r in 0..p {
            b[r] += w[i] * basis[r][i] * y[i];
            for c in 0..p {
                a[r][c] += w[i] * basis[r][i] * basis[c][i];
            }
        }
    }
    solve_small(a, b)
}

fn fit_stats(y: &[f64], pred: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let ss_res: f64 = y.iter().zip(pred).zip(w).map(|((y, p), w)| w * (y - p).powi(2)).sum();
    let ss_tot: f64 = y.iter().zip(w).map(|(y, w)| w * (y - mean).powi(2)).sum();
    let rms = (ss_res / sw).sqrt();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (rms, r2)
}

/// Three-parameter decay fit over points with |value| above the noise floor.
pub fn fit_decay(r: &[f64], values: &[f64]) -> Option<DecayFit> {
    let (mut rr, mut y) = (Vec::new(), Vec::new());
    for (&ri, &vi) in r.iter().zip(values) {
        if vi.abs() >= NOISE_FLOOR && ri > 0.0 {
            rr.push(ri);
            y.push(vi.abs().ln());
        }
    }
    if rr.len() < 4 {
        return None;
    }
    let w = vec![1.0; rr.len()];
    let basis = vec![
        vec![1.0; rr.len()],
        rr.iter().map(|r| -r).collect::<Vec<_>>(),
        rr.iter().map(|r| -r.ln()).collect::<Vec<_>>(),
    ];
    let c = weighted_least_squares(&basis, &y, &w)?;
    let pred: Vec<f64> = (0..rr.len())
        .map(|i| c[0] + c[1] * basis[1][i] + c[2] * basis[2][i])
        .collect();
    let (rms, r2) = fit_stats(&y, &pred, &w);
    Some(DecayFit {
        rate: c[1],
        power: c[2],
        log_amplitude: c[0],
        rms_residual: rms,
        r_squared: r2,
        points: rr.len(),
    })
}

/// Weighted two-parameter fit log|k| = a − κ r. Weights multiply squared residuals.
pub fn fit_log_linear(r: &[f64], log_values: &[f64], weights: &[f64]) -> Option<DecayFit> {
    if r.len() < 2 {
        return None;
    }
    let basis = vec![vec![1.0; r.len()], r.iter().map(|r| -r).collect::<Vec<_>>()];
    let c = weighted_least_squares(&basis, log_values, weights)?;
    let pred: Vec<f64> = r.iter().map(|ri| c[0] - c[1] * ri).collect();
    let (rms, r2) = fit_stats(log_values, &pred, weights);
    Some(DecayFit {
        rate: c[1],
        power: 0.0,
        log_amplitude: c[0],
        rms_residual: rms,
        r_squared: r2,
        points: r.len(),
    })
}

/// Kernel tabulated on the lattice {(i h, j h) : |i|, |j| ≤ n_half}.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledKernel {
    pub kind: String,
    pub grid_step: f64,
    pub half_extent: f64,
    pub n_half: usize,
    /// Row-major over i then j, each in −n_half..=n_half.
    pub values: Vec<f64>,
    /// Coefficient of a δ contribution not contained in `values` (0 if none).
    pub delta_weight: f64,
    pub fitted_decay_rate: f64,
    pub fit_residual: f64,
    pub fit_power: f64,
    pub sup_norm: f64,
}

impl SampledKernel {
    fn side(&self) -> usize {
        2 * self.n_half + 1
    }

    /// Value at lattice displacement (i, j); zero outside the table.
    pub fn get(&self, i: i64, j: i64) -> f64 {
        let n = self.n_half as i64;
        if i.abs() > n || j.abs() > n {
            return 0.0;
        }
        self.values[((i + n) as usize) * self.side() + (j + n) as usize]
    }

    /// Profile along the positive first axis: (r, value).
    pub fn axis_profile(&self) -> (Vec<f64>, Vec<f64>) {
        let r = (0..=self.n_half).map(|i| i as f64 * self.grid_step).collect();
        let v = (0..=self.n_half).map(|i| self.get(i as i64, 0)).collect();
        (r, v)
    }

    /// Fit the decay along the axis over [FIT_INNER_RADIUS, 0.9·half_extent].
    pub fn refit(&mut self) {
        let (r, v) = self.axis_profile();
        let hi = 0.9 * self.half_extent;
        let (rr, vv): (Vec<f64>, Vec<f64>) = r
            .into_iter()
            .zip(v)
            .filter(|(r, _)| *r >= FIT_INNER_RADIUS && *r <= hi)
            .unzip();
        match fit_decay(&rr, &vv) {
            Some(f) => {
                self.fitted_decay_rate = f.rate;
                self.fit_residual = f.rms_residual;
                self.fit_power = f.power;
            }
            None => {
                self.fitted_decay_rate = f64::NAN;
                self.fit_residual = f64::NAN;
                self.fit_power = f64::NAN;
            }
        }
        self.sup_norm = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    }

    /// Largest relative deviation between values at equal |x|², among lattice point-group images.
    pub fn point_group_asymmetry(&self) -> f64 {
        let n = self.n_half as i64;
        let mut worst = 0.0f64;
        for i in 0..=n {
            for j in 0..=i {
                let base = self.get(i, j);
                let scale = base.abs().max(1e-300);
                for (a, b) in [(-i, j), (i, -j), (-i, -j), (j, i), (-j, i), (j, -i), (-j, -i)] {
                    worst = worst.max((self.get(a, b) - base).abs() / scale);
                }
            }
        }
        worst
    }

    /// Write a binary cache file with a text header.
    pub fn write_cache(&self, path: &Path, params_hash: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let header = format!(
            "# largen-sigma kernel cache\nkind={}\ngrid_step={:.16e}\nhalf_extent={:.16e}\nn_half={}\ndelta_weight={:.16e}\nparams_hash={}\nfitted_decay_rate={:.16e}\nfit_residual={:.16e}\nfit_power={:.16e}\nsup_norm={:.16e}\nend_header\n",
            self.kind,
            self.grid_step,
            self.half_extent,
            self.n_half,
            self.delta_weight,
            params_hash,
            self.fitted_decay_rate,
            self.fit_residual,
            self.fit_power,
            self.sup_norm
        );
        let mut buf = header.into_bytes();
        buf.reserve(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Read a cache file; returns the kernel and its parameter hash.
    pub fn read_cache(path: &Path) -> Result<(Self, String)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = BufReader::new(file);
        let mut kv = HashMap::new();
        loop {
            let mut line = String::new();
            let n = rd.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    reason: "missing end_header".into(),
                });
            }
            let line = line.trim_end();
            if line == "end_header" {
                break;
            }
            if line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let bad = |k: &str| Error::Format {
            path: path.display().to_string(),
            reason: format!("bad or missing header key `{k}`"),
        };
        let num = |k: &str| -> Result<f64> { kv.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(k)) };
        let n_half: usize = kv.get("n_half").and_then(|v| v.parse().ok()).ok_or_else(|| bad("n_half"))?;
        let mut raw = Vec::new();
        rd.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        let side = 2 * n_half + 1;
        if raw.len() != side * side * 8 {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("expected {} value bytes, found {}", side * side * 8, raw.len()),
            });
        }
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let k = SampledKernel {
            kind: kv.get("kind").cloned().ok_or_else(|| bad("kind"))?,
            grid_step: num("grid_step")?,
            half_extent: num("half_extent")?,
            n_half,
            values,
            delta_weight: num("delta_weight")?,
            fitted_decay_rate: num("fitted_decay_rate")?,
            fit_residual: num("fit_residual")?,
            fit_power: num("fit_power")?,
            sup_norm: num("sup_norm")?,
        };
        let hash = kv.get("params_hash").cloned().ok_or_else(|| bad("params_hash"))?;
        Ok((k, hash))
    }

    /// CSV of the axis profile.
    pub fn profile_csv(&self) -> String {
        let (r, v) = self.axis_profile();
        let mut s = String::from("r,value\n");
        for (r, v) in r.iter().zip(v) {
            s.push_str(&format!("{:.16e},{:.16e}\n", r, v));
        }
        s
    }
}

impl LatticeKernel for SampledKernel {
    fn grid_step(&self) -> f64 {
        self.grid_step
    }
    fn at(&self, di: i64, dj: i64) -> f64 {
        self.get(di, dj)
    }
}

/// Stable short hash of a parameter description.
pub fn params_hash(desc: &str) -> String {
    let d = Sha256::digest(desc.as_bytes());
    d.iter().take(8).map(|b| format!("{:02x}", b)).collect()
}

// ---------------------------------------------------------------------------
// FFT machinery

fn is_smooth(mut n: usize) -> bool {
    for p in [2, 3, 5] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

/// Smallest even 5-smooth grid size covering a box of side `len`.
pub fn fft_size(len: f64, h: f64) -> usize {
    let mut n = (len / h).ceil() as usize;
    n += n % 2;
    while !is_smooth(n) {
        n += 2;
    }
    n
}

struct Fft2 {
    n: usize,
    planner: FftPlanner<f64>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        Fft2 {
            n,
            planner: FftPlanner::new(),
        }
    }

    fn transpose(&self, data: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                data.swap(i * n + j, j * n + i);
            }
        }
    }

    fn run(&mut self, data: &mut [Complex64], dir: FftDirection) {
        let fft = self.planner.plan_fft(self.n, dir);
        fft.process(data);
        self.transpose(data);
        fft.process(data);
        self.transpose(data);
    }
}

fn freq(j: usize, n: usize) -> f64 {
    if j < n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Periodic lattice: kernel(x) = (1/(n h)²) Σ_k symbol(k²) e^{ikx}.
fn kernel_from_symbol(n: usize, h: f64, symbol: impl Fn(f64) -> f64, fft: &mut Fft2) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * h);
    let mut data = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        let kx = dk * freq(a, n);
        for b in 0..n {
            let ky = dk * freq(b, n);
            data[a * n + b] = Complex64::new(symbol(kx * kx + ky * ky), 0.0);
        }
    }
    fft.run(&mut data, FftDirection::Inverse);
    let scale = 1.0 / (n as f64 * h).powi(2);
    data.iter().map(|c| c.re * scale).collect()
}

/// Fourier transform of a real even periodic grid: Σ_x k(x) e^{-ikx} h².
fn symbol_from_kernel(h: f64, values: &[f64], fft: &mut Fft2) -> Vec<f64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v * h * h, 0.0)).collect();
    fft.run(&mut data, FftDirection::Forward);
    data.iter().map(|c| c.re).collect()
}

fn kernel_from_symbol_grid(n: usize, h: f64, symbol: &[f64], fft: &mut Fft2) -> Vec<f64> {
    let mut data: Vec<Complex64> = symbol.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.run(&mut data, FftDirection::Inverse);
    let scale = 1.0 / (n as f64 * h).powi(2);
    data.iter().map(|c| c.re * scale).collect()
}

fn extract(kind: &str, grid: &[f64], n: usize, h: f64, half_extent: f64) -> SampledKernel {
    let n_half = (half_extent / h).round() as usize;
    let side = 2 * n_half + 1;
    let mut values = Vec::with_capacity(side * side);
    for i in -(n_half as i64)..=(n_half as i64) {
        let a = i.rem_euclid(n as i64) as usize;
        for j in -(n_half as i64)..=(n_half as i64) {
            let b = j.rem_euclid(n as i64) as usize;
            values.push(grid[a * n + b]);
        }
    }
    let mut k = SampledKernel {
        kind: kind.to_string(),
        grid_step: h,
        half_extent,
        n_half,
        values,
        delta_weight: 0.0,
        fitted_decay_rate: f64::NAN,
        fit_residual: f64::NAN,
        fit_power: f64::NAN,
        sup_norm: 0.0,
    };
    k.refit();
    k
}

fn check_grid(m: f64, grid_step: f64, half_extent: f64) -> Result<()> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::param("m", "must lie in (0, 1)"));
    }
    if !(grid_step > 0.0 && grid_step <= 0.25) {
        return Err(Error::param("grid_step", "must lie in (0, 0.25]"));
    }
    if !(half_extent >= (8.0 / m).min(10.0) - 1e-12) {
        return Err(Error::param("half_extent", "must be at least min(8/m, 10)"));
    }
    Ok(())
}

/// Box side for propagator-derived kernels; periodic images are suppressed by e^{-30}.
fn propagator_box(m: f64, half_extent: f64) -> f64 {
    2.0 * half_extent + 30.0 / m
}

/// Mass of the propagator symbol beyond the Nyquist momentum, relative to F(0).
pub fn aliasing_estimate(m: f64, grid_step: f64) -> Result<f64> {
    let kn2 = (PI / grid_step).powi(2);
    let tail = quad::expint_e1(kn2) / (4.0 * PI);
    Ok(tail / radial_propagator(m, 0.0)?)
}

fn propagator_grid(m: f64, h: f64, fft: &mut Fft2) -> Vec<f64> {
    let n = fft.n;
    let m2 = m * m;
    kernel_from_symbol(n, h, |k2| propagator_symbol(k2, m2), fft)
}

/// Tabulate F(x) = ∫ d²q/(2π)² e^{iqx}/(q² e^{q²} + m²) by 2D FFT.
pub fn propagator_kernel(m: f64, grid_step: f64, half_extent: f64) -> Result<SampledKernel> {
    check_grid(m, grid_step, half_extent)?;
    let alias = aliasing_estimate(m, grid_step)?;
    if alias > 1e-6 {
        return Err(Error::Resolution(format!("aliasing estimate {alias:e} exceeds 1e-6 of F(0)")));
    }
    let n = fft_size(propagator_box(m, half_extent), grid_step);
    let mut fft = Fft2::new(n);
    let grid = propagator_grid(m, grid_step, &mut fft);
    Ok(extract("propagator", &grid, n, grid_step, half_extent))
}

/// Tabulate π(x) = (λK/2) F(x)².
pub fn polarization_kernel(params: &ModelParams, grid_step: f64, half_extent: f64) -> Result<SampledKernel> {
    let f = propagator_kernel(params.m, grid_step, half_extent)?;
    let c = 0.5 * params.lambda_k();
    let mut k = SampledKernel {
        kind: "polarization".into(),
        values: f.values.iter().map(|v| c * v * v).collect(),
        ..f
    };
    k.refit();
    Ok(k)
}

/// Sign of the power in (1+π)^{±1/2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqrtSign {
    Plus,
    Minus,
}

impl SqrtSign {
    fn exponent(self) -> f64 {
        match self {
            SqrtSign::Plus => 0.5,
            SqrtSign::Minus => -0.5,
        }
    }
}

/// Regular part of the kernel of (1+π)^{±1/2}: the δ contribution (weight 1) is excluded.
///
/// Also returns π̂(0) as computed on the FFT grid.
pub fn sqrt_one_plus_pi_kernel_with_pi0(
    params: &ModelParams,
    sign: SqrtSign,
    grid_step: f64,
    half_extent: f64,
) -> Result<(SampledKernel, f64)> {
    let m = params.m;
    check_grid(m, grid_step, half_extent)?;
    let alias = aliasing_estimate(m, grid_step)?;
    if alias > 1e-6 {
        return Err(Error::Resolution(format!("aliasing estimate {alias:e} exceeds 1e-6 of F(0)")));
    }
    let n = fft_size(propagator_box(m, half_extent), grid_step);
    let mut fft = Fft2::new(n);
    let f = propagator_grid(m, grid_step, &mut fft);
    let c = 0.5 * params.lambda_k();
    let pi_x: Vec<f64> = f.iter().map(|v| c * v * v).collect();
    drop(f);
    let pi_hat = symbol_from_kernel(grid_step, &pi_x, &mut fft);
    drop(pi_x);
    let pi0 = pi_hat[0];
    let e = sign.exponent();
    let sym: Vec<f64> = pi_hat.iter().map(|p| (1.0 + p).powf(e) - 1.0).collect();
    drop(pi_hat);
    let grid = kernel_from_symbol_grid(n, grid_step, &sym, &mut fft);
    let kind = match sign {
        SqrtSign::Plus => "sqrt_one_plus_pi",
        SqrtSign::Minus => "inv_sqrt_one_plus_pi",
    };
    let mut k = extract(kind, &grid, n, grid_step, half_extent);
    k.delta_weight = 1.0;
    Ok((k, pi0))
}

/// Regular part of the kernel of (1+π)^{±1/2}.
pub fn sqrt_one_plus_pi_kernel(
    params: &ModelParams,
    sign: SqrtSign,
    grid_step: f64,
    half_extent: f64,
) -> Result<SampledKernel> {
    Ok(sqrt_one_plus_pi_kernel_with_pi0(params, sign, grid_step, half_extent)?.0)
}

// ---------------------------------------------------------------------------
// Radial routes

fn hankel_breaks(m: f64, r: f64, q_max: f64) -> Vec<f64> {
    let mut b = quad::geometric_breaks((m / 16.0).min(0.05), 1.0, 2.0);
    let step = if r > 0.0 { (PI / r).min(0.5) } else { 0.5 };
    let mut q = 1.0 + step;
    while q < q_max {
        b.push(q);
        q += step;
    }
    b.push(q_max);
    b
}

/// F(r) by radial quadrature: (1/2π) ∫₀^∞ q J₀(q r) / (q² e^{q²} + m²) dq.
pub fn radial_propagator(m: f64, r: f64) -> Result<f64> {
    const Q_MAX: f64 = 7.0;
    let m2 = m * m;
    let breaks = hankel_breaks(m, r, Q_MAX);
    let res = quad::integrate_with_breaks(
        |q| q * libm::j0(q * r) * propagator_symbol(q * q, m2),
        &breaks,
        1e-16,
        1e-13,
        50_000,
    )?;
    Ok(res.value / (2.0 * PI))
}

/// Radially symmetric kernel tabulated at all lattice displacements up to `max_index`.
#[derive(Debug, Clone)]
pub struct RadialKernelTable {
    grid_step: f64,
    max_index: i64,
    by_norm2: HashMap<i64, f64>,
}

impl RadialKernelTable {
    /// Tabulate `f(r)` for r = h sqrt(i² + j²), |i|, |j| ≤ max_index.
    pub fn build(grid_step: f64, max_index: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Self> {
        let mi = max_index as i64;
        let mut by_norm2 = HashMap::new();
        for i in 0..=mi {
            for j in 0..=i {
                let key = i * i + j * j;
                if let std::collections::hash_map::Entry::Vacant(e) = by_norm2.entry(key) {
                    e.insert(f(grid_step * (key as f64).sqrt())?);
                }
            }
        }
        Ok(RadialKernelTable {
            grid_step,
            max_index: mi,
            by_norm2,
        })
    }

    /// Regulated propagator F on the lattice.
    pub fn propagator(m: f64, grid_step: f64, max_index: usize) -> Result<Self> {
        Self::build(grid_step, max_index, |r| radial_propagator(m, r))
    }

    pub fn max_index(&self) -> i64 {
        self.max_index
    }

    /// Pointwise map of the tabulated values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        RadialKernelTable {
            grid_step: self.grid_step,
            max_index: self.max_index,
            by_norm2: self.by_norm2.iter().map(|(k, v)| (*k, f(*v))).collect(),
        }
    }
}

impl LatticeKernel for RadialKernelTable {
    fn grid_step(&self) -> f64 {
        self.grid_step
    }
    fn at(&self, di: i64, dj: i64) -> f64 {
        assert!(
            di.abs() <= self.max_index && dj.abs() <= self.max_index,
            "displacement ({di}, {dj}) outside radial table"
        );
        self.by_norm2[&(di * di + dj * dj)]
    }
}

// ---------------------------------------------------------------------------
// Polarization in momentum space

/// Propagator used inside the bubble integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BubbleMode {
    /// 1/(q² e^{q²} + m²).
    Regulated,
    /// 1/(q² + m²); test mode with a closed form at p = 0.
    Unregulated,
}

fn bubble_g(q2: f64, m2: f64, mode: BubbleMode) -> f64 {
    match mode {
        BubbleMode::Regulated => propagator_symbol(q2, m2),
        BubbleMode::Unregulated => 1.0 / (q2 + m2),
    }
}

/// π(p) = (λK/2) ∫ d²q/(2π)² G(q) G(p+q) by nested adaptive quadrature.
pub fn polarization_momentum_mode(p2: f64, lambda_k: f64, m: f64, mode: BubbleMode) -> Result<f64> {
    if !(p2 >= 0.0) {
        return Err(Error::param("p2", "must be nonnegative"));
    }
    let m2 = m * m;
    let p = p2.sqrt();
    let q_max = match mode {
        BubbleMode::Regulated => 7.0,
        BubbleMode::Unregulated => 1e4,
    };
    let mut breaks = quad::geometric_breaks((m / 16.0).min(0.05), 1.0, 2.0);
    if p > 0.0 {
        for s in [-2.0, -1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0] {
            let b = p + s * m;
            if b > 0.0 {
                breaks.push(b);
            }
        }
    }
    let mut x = 2.0;
    while x < q_max {
        breaks.push(x);
        x *= 2.0;
    }
    breaks.push(q_max);
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let mut failure = None;
    let outer = quad::integrate_with_breaks(
        |q| {
            let gq = bubble_g(q * q, m2, mode);
            if gq == 0.0 {
                return 0.0;
            }
            let inner = if p == 0.0 {
                PI * bubble_g(q * q, m2, mode)
            } else {
                let ang = |t: f64| bubble_g(q * q + p2 + 2.0 * p * q * t.cos(), m2, mode);
                match quad::integrate_with_breaks(ang, &[0.0, 0.5 * PI, 0.9 * PI, PI], 1e-300, 1e-12, 5_000) {
                    Ok(r) => r.value,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            // ∫d²q = ∫ q dq ∫₀^{2π} dθ; symmetric in θ → 2∫₀^π.
            q * gq * 2.0 * inner
        },
        &breaks,
        1e-300,
        1e-11,
        20_000,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut v = outer?.value;
    if mode == BubbleMode::Unregulated {
        // ∫_{Q}^∞ q dq 2π q^{-4} ≈ π/Q².
        v += PI / (q_max * q_max);
    }
    Ok(0.5 * lambda_k * v / (4.0 * PI * PI))
}

/// π(p) with the regulated propagator.
pub fn polarization_momentum(p2: f64, params: &ModelParams) -> Result<f64> {
    polarization_momentum_mode(p2, params.lambda_k(), params.m, BubbleMode::Regulated)
}

// ---------------------------------------------------------------------------
// τ-field cutoff

/// Cutoff function f(p) = c (p²)², with α ≤ c ≤ A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    pub alpha: f64,
    pub big_a: f64,
    pub c: f64,
}

impl CutoffSpec {
    pub fn quartic(alpha: f64, big_a: f64, c: f64) -> Result<Self> {
        if !(alpha > 0.0 && big_a > 0.0) {
            return Err(Error::param("cutoff", "alpha and A must be positive"));
        }
        if !(alpha <= c && c <= big_a) {
            return Err(Error::param("cutoff", format!("need alpha <= c <= A, got c={c}")));
        }
        Ok(CutoffSpec { alpha, big_a, c })
    }

    /// f = 0: the kernel of 1/(1+f) is δ.
    pub fn degenerate() -> Self {
        CutoffSpec {
            alpha: 0.0,
            big_a: 0.0,
            c: 0.0,
        }
    }

    /// 1/(1 + c p⁴).
    pub fn symbol(&self, p2: f64) -> f64 {
        1.0 / (1.0 + self.c * p2 * p2)
    }
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec {
            alpha: 0.5,
            big_a: 2.0,
            c: 1.0,
        }
    }
}

/// Continuum kernel of 1/(1 + c p⁴) at radius r, −c^{-1/2}/(2π) Im K₀(r c^{-1/4} e^{iπ/4}).
pub fn cutoff_kernel_radial(c: f64, r: f64) -> f64 {
    let s = r * c.powf(-0.25);
    let z = Complex64::from_polar(s, PI / 4.0);
    let q = z * z / 4.0;
    let mut term = Complex64::new(1.0, 0.0);
    let mut i0 = term;
    let mut rest = Complex64::new(0.0, 0.0);
    let mut harmonic = 0.0;
    for k in 1..200 {
        term = term * q / ((k * k) as f64);
        harmonic += 1.0 / k as f64;
        i0 += term;
        rest += term * harmonic;
        if term.norm() < 1e-18 * i0.norm() {
            break;
        }
    }
    let log_part = if s == 0.0 {
        // ln(z/2) with |z| → 0: only the imaginary part survives in Im K₀.
        Complex64::new(0.0, PI / 4.0)
    } else {
        (z / 2.0).ln()
    };
    let k0 = -(log_part + 0.577_215_664_901_532_9) * i0 + rest;
    -k0.im / (2.0 * PI * c.sqrt())
}

/// Disk autocorrelation window on [0, 1], positive definite, W(0) = 1.
pub fn compact_taper(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        2.0 / PI * (r.acos() - r * (1.0 - r * r).sqrt())
    }
}

/// Kernel of 1/(1+f) by FFT, with the mass fraction outside |x| > 1.
#[derive(Debug, Clone)]
pub struct CutoffKernel {
    pub kernel: SampledKernel,
    /// ∫_{|x|>1} |k| / ∫ |k| on the grid.
    pub mass_outside_unit: f64,
}

/// Tabulate the kernel of 1/(1+f).
pub fn cutoff_inverse_kernel(spec: &CutoffSpec, grid_step: f64, half_extent: f64) -> Result<CutoffKernel> {
    if !(grid_step > 0.0 && half_extent > 1.0) {
        return Err(Error::param("grid_step", "need grid_step > 0 and half_extent > 1"));
    }
    let kernel = if spec.c == 0.0 {
        let n_half = (half_extent / grid_step).round() as usize;
        let side = 2 * n_half + 1;
        let mut values = vec![0.0; side * side];
        values[n_half * side + n_half] = 1.0 / (grid_step * grid_step);
        SampledKernel {
            kind: "cutoff_inverse".into(),
            grid_step,
            half_extent,
            n_half,
            values,
            delta_weight: 0.0,
            fitted_decay_rate: f64::NAN,
            fit_residual: f64::NAN,
            fit_power: f64::NAN,
            sup_norm: 1.0 / (grid_step * grid_step),
        }
    } else {
        // The kernel decays like exp(−r c^{-1/4}/√2).
        let len = 2.0 * half_extent + 60.0 * spec.c.powf(0.25);
        let n = fft_size(len, grid_step);
        let mut fft = Fft2::new(n);
        let grid = kernel_from_symbol(n, grid_step, |k2| spec.symbol(k2), &mut fft);
        extract("cutoff_inverse", &grid, n, grid_step, half_extent)
    };
    let n = kernel.n_half as i64;
    let (mut inside, mut outside) = (0.0, 0.0);
    for i in -n..=n {
        for j in -n..=n {
            let r = grid_step * ((i * i + j * j) as f64).sqrt();
            let v = kernel.get(i, j).abs();
            if r > 1.0 {
                outside += v;
            } else {
                inside += v;
            }
        }
    }
    Ok(CutoffKernel {
        kernel,
        mass_outside_unit: outside / (inside + outside),
    })
}

/// Compactly supported variant: continuum kernel times the disk-autocorrelation taper,
/// normalized so the lattice symbol at p = 0 equals 1.
#[derive(Debug, Clone)]
pub struct EnforcedCutoff {
    grid_step: f64,
    reach: i64,
    values: HashMap<i64, f64>,
}

impl EnforcedCutoff {
    pub fn new(spec: &CutoffSpec, grid_step: f64) -> Self {
        let reach = (1.0 / grid_step).floor() as i64;
        let mut values = HashMap::new();
        if spec.c == 0.0 {
            values.insert(0, 1.0 / (grid_step * grid_step));
            return EnforcedCutoff {
                grid_step,
                reach: 0,
                values,
            };
        }
        let mut total = 0.0;
        for i in -reach..=reach {
            for j in -reach..=reach {
                let key = i * i + j * j;
                let r = grid_step * (key as f64).sqrt();
                let v = *values
                    .entry(key)
                    .or_insert_with(|| cutoff_kernel_radial(spec.c, r) * compact_taper(r));
                total += v * grid_step * grid_step;
            }
        }
        for v in values.values_mut() {
            *v /= total;
        }
        EnforcedCutoff {
            grid_step,
            reach,
            values,
        }
    }

    /// Largest lattice displacement index with nonzero value.
    pub fn reach(&self) -> i64 {
        self.reach
    }
}

impl LatticeKernel for EnforcedCutoff {
    fn grid_step(&self) -> f64 {
        self.grid_step
    }
    fn at(&self, di: i64, dj: i64) -> f64 {
        if di.abs() > self.reach || dj.abs() > self.reach {
            return 0.0;
        }
        *self.values.get(&(di * di + dj * dj)).unwrap_or(&0.0)
    }
}

/// ∫ d²p (1/(1 + p⁴))^r by radial quadrature.
pub fn cutoff_power_integral(r: u32) -> Result<f64> {
    // d²p = π du with u = p²; integrand (1+u²)^{-r}.
    let res = quad::integrate_with_breaks(
        |t: f64| {
            // u = t/(1−t) maps [0,1) to [0,∞).
            if t >= 1.0 {
                return 0.0;
            }
            let u = t / (1.0 - t);
            (1.0 + u * u).powi(-(r as i32)) / ((1.0 - t) * (1.0 - t))
        },
        &[0.0, 0.25, 0.5, 0.75, 1.0],
        1e-15,
        1e-13,
        10_000,
    )?;
    Ok(PI * res.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_size_is_smooth_and_even() {
        for len in [10.0, 77.7, 523.0] {
            let n = fft_size(len, 0.25);
            assert!(n as f64 * 0.25 >= len && n % 2 == 0 && is_smooth(n));
        }
    }

    #[test]
    fn cutoff_radial_origin() {
        assert!((cutoff_kernel_radial(1.0, 0.0) - 0.125).abs() < 1e-14);
    }

    #[test]
    fn taper_endpoints() {
        assert!((compact_taper(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(compact_taper(1.0), 0.0);
        assert!(compact_taper(0.5) > 0.0 && compact_taper(0.5) < 1.0);
    }

    #[test]
    fn fit_recovers_synthetic_rate() {
        let r: Vec<f64> = (0..100).map(|i| 2.0 + 0.3 * i as f64).collect();
        let v: Vec<f64> = r.iter().map(|r| 3.0 * (-0.4 * r).exp() * r.powf(-0.5)).collect();
        let f = fit_decay(&r, &v).unwrap();
        assert!((f.rate - 0.4).abs() < 1e-10 && (f.power - 0.5).abs() < 1e-9);
    }
}
