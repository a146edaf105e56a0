//! Monte Carlo estimate of the two-point function with the complex determinant weight.

use crate::covariance::{sample_gaussian, CovarianceContext, PaddedDomain, PolarizationMode};
use crate::error::{Error, Result};
use crate::kernels::{params_hash, radial_propagator, CutoffSpec};
use crate::model::{derive_params, ModelParams, Regulator};
use crate::operators::{build_a_from_matrix, ln_det_reg, propagator_matrix, CMatrix};
use crate::regions::{FieldConfig, LatticeGeometry};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub const MIN_BATCHES: usize = 20;
pub const SIGN_ABORT_THRESHOLD: f64 = 0.05;

/// Fixed-τ factorization of 1 + F·igτ.
pub struct ResolventSystem {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    k: CMatrix,
    cell_weight: f64,
}

impl ResolventSystem {
    /// `f_w` is the propagator matrix F(x−y)·w on the sites.
    pub fn new(f_w: &DMatrix<f64>, tau: &[f64], g: f64, cell_weight: f64) -> Result<Self> {
        if f_w.nrows() != tau.len() {
            return Err(Error::Dimension("propagator matrix and field sizes differ".into()));
        }
        let i = Complex64::i();
        let k = build_a_from_matrix(f_w, tau, g, cell_weight).matrix.map(|z| z * i);
        let n = k.nrows();
        let lu = (CMatrix::identity(n, n) + &k).lu();
        let u = lu.u();
        let min = (0..n).map(|d| u[(d, d)].norm()).fold(f64::INFINITY, f64::min);
        if min < 1e-300 {
            return Err(Error::Singular(min));
        }
        Ok(ResolventSystem { lu, k, cell_weight })
    }

    /// Row x of (1 + K)^{-1} F as a kernel: entries [(p² + m² + igτ)^{-1}](x, ·).
    pub fn row(&self, f_w: &DMatrix<f64>, x: usize) -> Result<Vec<Complex64>> {
        let n = self.k.nrows();
        let mut e = DVector::<Complex64>::zeros(n);
        e[x] = Complex64::new(1.0, 0.0);
        // Row x of M^{-1} solves Mᵀ z = e_x.
        let z = self
            .lu
            .u()
            .transpose()
            .solve_lower_triangular(&e)
            .and_then(|y| self.lu.l().transpose().solve_upper_triangular(&y))
            .ok_or(Error::Singular(0.0))?;
        let mut z = z;
        self.lu.p().inv_permute_rows(&mut z);
        let zf = z.transpose() * f_w.map(|v| Complex64::new(v, 0.0));
        Ok(zf.iter().map(|v| v / self.cell_weight).collect())
    }

    /// Column y of (1 + K)^{-1} F as a kernel: entries [(p² + m² + igτ)^{-1}](·, y).
    pub fn column(&self, f_w: &DMatrix<f64>, y: usize) -> Result<Vec<Complex64>> {
        let rhs = f_w.column(y).map(|v| Complex64::new(v, 0.0));
        let sol = self.lu.solve(&rhs).ok_or(Error::Singular(0.0))?;
        Ok(sol.iter().map(|v| v / self.cell_weight).collect())
    }

    /// ln det₃(1 + K) from the LU pivots, continued from K = 0.
    pub fn ln_det3(&self) -> Result<Complex64> {
        let n = self.k.nrows();
        let u = self.lu.u();
        let mut ln_det: Complex64 = (0..n).map(|d| u[(d, d)].ln()).sum();
        if self.lu.p().determinant::<f64>() < 0.0 {
            ln_det += Complex64::new(0.0, std::f64::consts::PI);
        }
        let tr1 = self.k.trace();
        let mut tr2 = Complex64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                tr2 += self.k[(a, b)] * self.k[(b, a)];
            }
        }
        let mut v = ln_det - tr1 + 0.5 * tr2;
        // Σ|λ|³ ≤ ‖K‖_HS³ bounds |Im ln det₃| and fixes the branch when below π.
        let hs = self.k.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if hs.powi(3) / 3.0 < std::f64::consts::PI {
            v.im = wrap_angle(v.im);
            Ok(v)
        } else {
            let op = crate::operators::DiscretizedOperator::new(self.k.clone(), self.cell_weight);
            ln_det_reg(&op, 3)
        }
    }
}

fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y > std::f64::consts::PI {
        y -= two_pi;
    } else if y <= -std::f64::consts::PI {
        y += two_pi;
    }
    y
}

/// [(p² + m² + igτ)^{-1}](x, y) by a dense solve of (1 + F·igτ)^{-1} F.
pub fn resolvent_kernel_entry(
    field: &FieldConfig,
    params: &ModelParams,
    geometry: &LatticeGeometry,
    x: usize,
    y: usize,
) -> Result<Complex64> {
    let f_w = propagator_matrix(params, geometry)?;
    let n = f_w.nrows();
    if x >= n || y >= n {
        return Err(Error::param("site", "index outside the lattice"));
    }
    let w = geometry.layout().cell_weight();
    let sys = ResolventSystem::new(&f_w, &field.tau, params.g, w)?;
    Ok(sys.column(&f_w, y)?[x])
}

/// det₃^{−N/2}(1 + iA) for one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSample {
    pub ln_weight: Complex64,
}

impl WeightSample {
    pub fn value(&self) -> Complex64 {
        self.ln_weight.exp()
    }
    pub fn magnitude(&self) -> f64 {
        self.ln_weight.re.exp()
    }
    pub fn phase(&self) -> f64 {
        self.ln_weight.im
    }
}

pub fn sample_weight(field: &FieldConfig, params: &ModelParams, geometry: &LatticeGeometry) -> Result<WeightSample> {
    let f_w = propagator_matrix(params, geometry)?;
    let sys = ResolventSystem::new(&f_w, &field.tau, params.g, geometry.layout().cell_weight())?;
    Ok(WeightSample {
        ln_weight: -0.5 * params.n_f64() * sys.ln_det3()?,
    })
}

/// Fit of S₂ along the axis to the shape A·F_μ(r) of the free propagator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassFit {
    pub mass: f64,
    pub mass_se: f64,
    pub log_amplitude: f64,
    pub rms_residual: f64,
    pub r_squared: f64,
    pub points: usize,
}

fn shape_objective(r: &[f64], y: &[f64], w: &[f64], mu: f64) -> Result<(f64, f64, Vec<f64>)> {
    let lf: Vec<f64> = r.iter().map(|&ri| radial_propagator(mu, ri).map(f64::ln)).collect::<Result<_>>()?;
    let sw: f64 = w.iter().sum();
    let a = y.iter().zip(&lf).zip(w).map(|((y, l), w)| w * (y - l)).sum::<f64>() / sw;
    let obj = y.iter().zip(&lf).zip(w).map(|((y, l), w)| w * (y - a - l).powi(2)).sum();
    Ok((obj, a, lf))
}

/// Weighted least squares in log|S₂| over μ ∈ [m/20, 20m] by golden section in ln μ.
pub fn fit_propagator_mass(r: &[f64], values: &[f64], se: &[f64], m_guess: f64) -> Result<MassFit> {
    if r.len() < 3 || values.iter().any(|v| *v <= 0.0) {
        return Err(Error::param("two-point fit", "need ≥ 3 positive values"));
    }
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    // σ of ln|S| with a relative floor for noiseless data.
    let w: Vec<f64> = values
        .iter()
        .zip(se)
        .map(|(v, s)| {
            let sl = (s / v).max(1e-12);
            1.0 / (sl * sl)
        })
        .collect();
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = ((m_guess / 20.0).ln(), (m_guess * 20.0).ln());
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = shape_objective(r, &y, &w, c.exp())?.0;
    let mut fd = shape_objective(r, &y, &w, d.exp())?.0;
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = shape_objective(r, &y, &w, c.exp())?.0;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = shape_objective(r, &y, &w, d.exp())?.0;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let lmu = 0.5 * (lo + hi);
    let mu = lmu.exp();
    let (obj, a, lf) = shape_objective(r, &y, &w, mu)?;
    // Linearized error on ln μ with the amplitude profiled out.
    let step = 1e-4;
    let (_, _, lf_up) = shape_objective(r, &y, &w, (lmu + step).exp())?;
    let deriv: Vec<f64> = lf_up.iter().zip(&lf).map(|(u, l)| (u - l) / step).collect();
    let sw: f64 = w.iter().sum();
    let dbar = deriv.iter().zip(&w).map(|(d, w)| d * w).sum::<f64>() / sw;
    let info: f64 = deriv.iter().zip(&w).map(|(d, w)| w * (d - dbar).powi(2)).sum();
    let mass_se = if info > 0.0 { mu / info.sqrt() } else { f64::INFINITY };
    let ybar = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let ss_tot: f64 = y.iter().zip(&w).map(|(y, w)| w * (y - ybar).powi(2)).sum();
    Ok(MassFit {
        mass: mu,
        mass_se,
        log_amplitude: a,
        rms_residual: (obj / sw).sqrt(),
        r_squared: if ss_tot > 0.0 { 1.0 - obj / ss_tot } else { 1.0 },
        points: r.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Draws discarded at the start of every shard.
    pub thermalization: usize,
    pub batches: usize,
    pub shards: usize,
    /// Fit window in units of the square side; `None` uses [2, L/3].
    pub window: Option<(f64, f64)>,
    pub padding: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 1,
            n_samples: 10_000,
            thermalization: 0,
            batches: MIN_BATCHES,
            shards: 4,
            window: None,
            padding: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointResult {
    pub separations: Vec<f64>,
    pub estimates: Vec<Complex64>,
    pub se_re: Vec<f64>,
    pub se_im: Vec<f64>,
    /// S₂(y, x) for the same pairs.
    pub reversed: Vec<Complex64>,
    pub reversed_se: Vec<f64>,
    pub fit: MassFit,
    pub fitted_mprime: f64,
    /// Plain log-linear rate over the same window.
    pub log_linear_rate: f64,
    pub fit_residual: f64,
    pub m: f64,
    pub sample_count: usize,
    pub params_hash: String,
    /// |⟨w⟩| / ⟨|w|⟩.
    pub sign_diagnostic: f64,
    pub weight_halves: [Complex64; 2],
    pub weight_halves_se: [f64; 2],
    pub window: (f64, f64),
}

impl TwoPointResult {
    pub fn ratio(&self) -> f64 {
        self.fitted_mprime / self.m
    }

    /// Largest |S₂(x,y) − S₂(y,x)| in combined standard errors.
    pub fn symmetry_defect(&self) -> f64 {
        self.estimates
            .iter()
            .zip(&self.reversed)
            .zip(self.se_re.iter().zip(&self.reversed_se))
            .map(|((a, b), (s1, s2))| {
                let d = (a - b).norm();
                let s = (s1 * s1 + s2 * s2).sqrt();
                if d == 0.0 {
                    0.0
                } else {
                    d / s
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest |Im S₂| in standard errors.
    pub fn imaginary_defect(&self) -> f64 {
        self.estimates
            .iter()
            .zip(&self.se_im)
            .map(|(e, s)| if e.im == 0.0 { 0.0 } else { e.im.abs() / s })
            .fold(0.0, f64::max)
    }

    /// |⟨w⟩₁ − ⟨w⟩₂| in combined standard errors.
    pub fn normalization_defect(&self) -> f64 {
        let d = (self.weight_halves[0] - self.weight_halves[1]).norm();
        if d == 0.0 {
            return 0.0;
        }
        d / (self.weight_halves_se[0].powi(2) + self.weight_halves_se[1].powi(2)).sqrt()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("sep,re_mean,im_mean,se,weight_phase_diag\n");
        for k in 0..self.separations.len() {
            let se = (self.se_re[k].powi(2) + self.se_im[k].powi(2)).sqrt();
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.separations[k], self.estimates[k].re, self.estimates[k].im, se, self.sign_diagnostic
            ));
        }
        s
    }
}

#[derive(Default, Clone)]
struct Accum {
    w: Complex64,
    abs_w: f64,
    fwd: Vec<Complex64>,
    rev: Vec<Complex64>,
    count: usize,
}

impl Accum {
    fn new(k: usize) -> Self {
        Accum {
            fwd: vec![Complex64::new(0.0, 0.0); k],
            rev: vec![Complex64::new(0.0, 0.0); k],
            ..Default::default()
        }
    }
}

/// Standard error of Σ num_b / Σ den_b from batch sums by the delta method.
fn ratio_se(num: &[Complex64], den: &[Complex64]) -> (Complex64, f64, f64) {
    let nb = num.len() as f64;
    let n: Complex64 = num.iter().sum::<Complex64>() / nb;
    let d: Complex64 = den.iter().sum::<Complex64>() / nb;
    let r = n / d;
    let (mut vr, mut vi) = (0.0, 0.0);
    for (a, b) in num.iter().zip(den) {
        let e = (a - r * b) / d;
        vr += e.re * e.re;
        vi += e.im * e.im;
    }
    let scale = 1.0 / (nb * (nb - 1.0));
    (r, (vr * scale).sqrt(), (vi * scale).sqrt())
}

fn mean_se(v: &[Complex64]) -> (Complex64, f64) {
    let nb = v.len() as f64;
    let m: Complex64 = v.iter().sum::<Complex64>() / nb;
    let var: f64 = v.iter().map(|x| (x - m).norm_sqr()).sum::<f64>() / (nb - 1.0);
    (m, (var / nb).sqrt())
}

/// S₂(x, y) = ⟨R(x,y) w⟩ / ⟨w⟩ for τ ~ dμ_C, along the lattice axis through the middle of Λ.
pub fn estimate_s2(
    params: &ModelParams,
    geometry: &LatticeGeometry,
    cutoff: &CutoffSpec,
    config: &SamplerConfig,
) -> Result<TwoPointResult> {
    if config.batches < MIN_BATCHES || config.n_samples < config.batches || config.shards == 0 {
        return Err(Error::param("sampler", format!("need ≥ {MIN_BATCHES} batches and samples ≥ batches")));
    }
    let layout = geometry.layout();
    let side = 2.0 * geometry.n as f64;
    let (w_lo, w_hi) = config.window.unwrap_or((2.0, side / 3.0));
    let h = layout.grid_step();
    // Source at the left end of the row just above the axis.
    let row = geometry.n as i64 * layout.sites_per_side() as i64;
    let x0 = -(row);
    let find = |i: i64| (0..layout.num_sites()).find(|&k| layout.site_lattice(k) == (i, 0));
    let source = find(x0).ok_or_else(|| Error::Dimension("source site missing".into()))?;
    let mut targets = Vec::new();
    let mut seps = Vec::new();
    for i in x0..row {
        let s = (i - x0) as f64 * h;
        if s >= w_lo - 1e-12 && s <= w_hi + 1e-12 {
            targets.push(find(i).ok_or_else(|| Error::Dimension("target site missing".into()))?);
            seps.push(s);
        }
    }
    if targets.len() < 3 {
        return Err(Error::param("window", format!("[{w_lo}, {w_hi}] holds only {} separations", targets.len())));
    }
    let ctx = CovarianceContext::new(params, PaddedDomain::new(geometry, config.padding)?, cutoff, PolarizationMode::Full)?;
    let w = ctx.cell_weight();
    let cov = ctx.domain.restrict_to_lambda(&ctx.c0) / w;
    let f_w = propagator_matrix(params, geometry)?;
    let k = targets.len();

    let batch_size = config.n_samples / config.batches;
    let used = batch_size * config.batches;
    let per_shard = used.div_ceil(config.shards);
    let shard_samples = |s: usize| -> Result<Vec<(Complex64, Vec<Complex64>, Vec<Complex64>)>> {
        let count = per_shard.min(used.saturating_sub(s * per_shard));
        if count == 0 {
            return Ok(Vec::new());
        }
        let taus = sample_gaussian(&cov, config.seed.wrapping_mul(1_000_003).wrapping_add(s as u64), count + config.thermalization)?;
        let mut out = Vec::with_capacity(count);
        for tau in taus.into_iter().skip(config.thermalization) {
            if params.g == 0.0 {
                let fwd = targets.iter().map(|&t| Complex64::new(f_w[(source, t)] / w, 0.0)).collect();
                let rev = targets.iter().map(|&t| Complex64::new(f_w[(t, source)] / w, 0.0)).collect();
                out.push((Complex64::new(1.0, 0.0), fwd, rev));
                continue;
            }
            let sys = ResolventSystem::new(&f_w, &tau, params.g, w)?;
            let weight = (-0.5 * params.n_f64() * sys.ln_det3()?).exp();
            let r = sys.row(&f_w, source)?;
            let c = sys.column(&f_w, source)?;
            out.push((weight, targets.iter().map(|&t| r[t]).collect(), targets.iter().map(|&t| c[t]).collect()));
        }
        Ok(out)
    };
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(config.shards);
    let mut shards: Vec<Option<Result<_>>> = (0..config.shards).map(|_| None).collect();
    std::thread::scope(|scope| {
        let shard_samples = &shard_samples;
        let ids: Vec<usize> = (0..config.shards).collect();
        let handles: Vec<_> = ids
            .chunks(config.shards.div_ceil(threads))
            .map(|chunk| {
                let chunk = chunk.to_vec();
                scope.spawn(move || chunk.into_iter().map(|s| (s, shard_samples(s))).collect::<Vec<_>>())
            })
            .collect();
        for handle in handles {
            for (s, r) in handle.join().expect("sampling thread panicked") {
                shards[s] = Some(r);
            }
        }
    });
    let mut samples = Vec::with_capacity(used);
    for s in shards.into_iter().flatten() {
        samples.extend(s?);
    }

    let mut batches: Vec<Accum> = (0..config.batches).map(|_| Accum::new(k)).collect();
    for (idx, (wt, fwd, rev)) in samples.iter().enumerate() {
        let b = &mut batches[idx / batch_size];
        b.w += wt;
        b.abs_w += wt.norm();
        for j in 0..k {
            b.fwd[j] += fwd[j] * wt;
            b.rev[j] += rev[j] * wt;
        }
        b.count += 1;
    }
    let dens: Vec<Complex64> = batches.iter().map(|b| b.w / b.count as f64).collect();
    let mut estimates = Vec::with_capacity(k);
    let (mut se_re, mut se_im, mut reversed, mut reversed_se) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for j in 0..k {
        let nums: Vec<Complex64> = batches.iter().map(|b| b.fwd[j] / b.count as f64).collect();
        let (r, sr, si) = ratio_se(&nums, &dens);
        estimates.push(r);
        se_re.push(sr);
        se_im.push(si);
        let nums: Vec<Complex64> = batches.iter().map(|b| b.rev[j] / b.count as f64).collect();
        let (r, sr, _) = ratio_se(&nums, &dens);
        reversed.push(r);
        reversed_se.push(sr);
    }
    let total_w: Complex64 = batches.iter().map(|b| b.w).sum();
    let total_abs: f64 = batches.iter().map(|b| b.abs_w).sum();
    let sign_diagnostic = total_w.norm() / total_abs;
    let half = config.batches / 2;
    let (h1, s1) = mean_se(&dens[..half]);
    let (h2, s2) = mean_se(&dens[half..]);
    if sign_diagnostic < SIGN_ABORT_THRESHOLD {
        return Err(Error::SignProblem(sign_diagnostic));
    }

    let re: Vec<f64> = estimates.iter().map(|e| e.re).collect();
    let fit = fit_propagator_mass(&seps, &re, &se_re, params.m)?;
    let logs: Vec<f64> = re.iter().map(|v| v.ln()).collect();
    let lw: Vec<f64> = re.iter().zip(&se_re).map(|(v, s)| 1.0 / (s / v).max(1e-12).powi(2)).collect();
    let log_linear_rate = crate::kernels::fit_log_linear(&seps, &logs, &lw).map(|f| f.rate).unwrap_or(f64::NAN);
    let desc = format!(
        "twopoint lambda={} K={} N={} reg={} n={} sps={} cutoff={:?} seed={} samples={} batches={} shards={} window={:?}",
        params.lambda,
        params.big_k,
        params.big_n,
        params.regulator,
        geometry.n,
        layout.sites_per_side(),
        cutoff,
        config.seed,
        config.n_samples,
        config.batches,
        config.shards,
        (w_lo, w_hi)
    );
    Ok(TwoPointResult {
        separations: seps,
        estimates,
        se_re,
        se_im,
        reversed,
        reversed_se,
        fitted_mprime: fit.mass,
        fit_residual: fit.rms_residual,
        fit,
        log_linear_rate,
        m: params.m,
        sample_count: used,
        params_hash: params_hash(&desc),
        sign_diagnostic,
        weight_halves: [h1, h2],
        weight_halves_se: [s1, s2],
        window: (w_lo, w_hi),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub big_n: u64,
    pub m: f64,
    pub mprime: f64,
    pub deviation: f64,
    pub deviation_se: f64,
    pub r_squared: f64,
    pub sign_diagnostic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassScan {
    pub rows: Vec<ScanRow>,
    /// |m′/m − 1| non-increasing in N within 2σ.
    pub monotone: bool,
}

/// estimate_s2 over a grid of N at fixed λ, K.
pub fn mass_vs_n_scan(
    lambda: f64,
    big_k: f64,
    regulator: Regulator,
    n_values: &[u64],
    geometry: &LatticeGeometry,
    cutoff: &CutoffSpec,
    config: &SamplerConfig,
) -> Result<MassScan> {
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let p = derive_params(lambda, big_k, n, regulator)?;
        let r = estimate_s2(&p, geometry, cutoff, config)?;
        rows.push(ScanRow {
            big_n: n,
            m: p.m,
            mprime: r.fitted_mprime,
            deviation: (r.ratio() - 1.0).abs(),
            deviation_se: r.fit.mass_se / p.m,
            r_squared: r.fit.r_squared,
            sign_diagnostic: r.sign_diagnostic,
        });
    }
    Ok(MassScan::from_rows(rows))
}

impl MassScan {
    /// Rows ordered by increasing N.
    pub fn from_rows(rows: Vec<ScanRow>) -> Self {
        let monotone = rows
            .windows(2)
            .all(|p| p[1].deviation <= p[0].deviation + 2.0 * (p[0].deviation_se.powi(2) + p[1].deviation_se.powi(2)).sqrt());
        MassScan { rows, monotone }
    }
}
