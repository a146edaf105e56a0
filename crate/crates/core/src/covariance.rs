//! Configuration-dependent covariance C_γ, its corrections δC_i and normalization Z_γ.
//!
//! All operators live on a padded square domain Ω ⊃ Λ ∪ γ with the matrix convention of
//! [`crate::operators`] (kernel × cell weight). √(1+π) and 1+f are matrix functions of the
//! Ω-restricted kernels, so the algebraic relations between the pieces hold exactly.

use crate::error::{Error, Result};
use crate::kernels::{polarization_momentum, CutoffSpec, EnforcedCutoff, RadialKernelTable};
use crate::model::ModelParams;
use crate::operators::{self, ABlocks, DiscretizedOperator};
use crate::regions::{theta_weights, n_max, FieldConfig, LSAssignment, LatticeGeometry, RegionSet, SiteLayout, Square, SquareLabel};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::{BTreeSet, HashMap};

/// Λ embedded in a padded square domain Ω.
#[derive(Debug, Clone)]
pub struct PaddedDomain {
    pub lambda: SiteLayout,
    pub omega: SiteLayout,
    pub padding: usize,
    /// Ω index of each Λ site, in Λ order.
    pub lambda_sites: Vec<usize>,
    pub lambda_mask: Vec<bool>,
}

impl PaddedDomain {
    pub fn new(geometry: &LatticeGeometry, padding: usize) -> Result<Self> {
        Self::from_squares(geometry.squares(), geometry.layout().sites_per_side(), padding)
    }

    pub fn from_squares(squares: Vec<Square>, sites_per_side: usize, padding: usize) -> Result<Self> {
        if squares.is_empty() {
            return Err(Error::param("squares", "Λ must contain at least one square"));
        }
        let p = padding as i64;
        let (mut lo_i, mut hi_i, mut lo_j, mut hi_j) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for &(i, j) in &squares {
            lo_i = lo_i.min(i);
            hi_i = hi_i.max(i);
            lo_j = lo_j.min(j);
            hi_j = hi_j.max(j);
        }
        let mut omega_sq = Vec::new();
        for i in lo_i - p..=hi_i + p {
            for j in lo_j - p..=hi_j + p {
                omega_sq.push((i, j));
            }
        }
        let lambda = SiteLayout::new(squares, sites_per_side);
        let omega = SiteLayout::new(omega_sq, sites_per_side);
        let index: HashMap<(i64, i64), usize> = (0..omega.num_sites()).map(|k| (omega.site_lattice(k), k)).collect();
        let lambda_sites: Vec<usize> = (0..lambda.num_sites()).map(|k| index[&lambda.site_lattice(k)]).collect();
        let mut lambda_mask = vec![false; omega.num_sites()];
        for &k in &lambda_sites {
            lambda_mask[k] = true;
        }
        Ok(PaddedDomain {
            lambda,
            omega,
            padding,
            lambda_sites,
            lambda_mask,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.num_sites()
    }

    /// Ω site mask of a square set; errors when a square lies outside Ω.
    pub fn mask_of(&self, set: &BTreeSet<Square>) -> Result<Vec<bool>> {
        if let Some(s) = set.iter().find(|s| !self.omega.contains_square(**s)) {
            return Err(Error::Dimension(format!(
                "square {s:?} outside the padded domain (padding {})",
                self.padding
            )));
        }
        Ok(self.omega.mask_of(set))
    }

    /// P_Λ M P_Λ as a Λ-sized matrix.
    pub fn restrict_to_lambda(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let idx = &self.lambda_sites;
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
    }
}

/// Whether π enters the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarizationMode {
    Full,
    /// π = 0.
    Off,
}

/// Shared Ω-level operators: S = √(1+π), S⁻¹, 1/(1+f), 1+f and C₀.
#[derive(Debug, Clone)]
pub struct CovarianceContext {
    pub params: ModelParams,
    pub domain: PaddedDomain,
    pub cutoff: CutoffSpec,
    pub one_plus_pi: DMatrix<f64>,
    pub sqrt_one_plus_pi: DMatrix<f64>,
    pub inv_sqrt_one_plus_pi: DMatrix<f64>,
    pub kf: DMatrix<f64>,
    pub one_plus_f: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    /// π(p = 0).
    pub pi0: f64,
    /// Range of the compact cutoff kernel in lattice steps.
    pub cutoff_reach: i64,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sym_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = nalgebra::SymmetricEigen::new(sym(m));
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(sym(m)).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(sym(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

fn masked(m: &DMatrix<f64>, rows: &[bool], cols: &[bool]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if rows[i] && cols[j] { m[(i, j)] } else { 0.0 })
}

fn diag_mask(mask: &[bool]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(mask.len(), mask.iter().map(|&b| if b { 1.0 } else { 0.0 })))
}

fn sup_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Padding that holds γ for a corridor width plus the cutoff range.
pub fn default_padding(corridor_m: f64) -> usize {
    (0.5 * corridor_m).ceil() as usize + 2
}

impl CovarianceContext {
    pub fn new(
        params: &ModelParams,
        domain: PaddedDomain,
        cutoff: &CutoffSpec,
        mode: PolarizationMode,
    ) -> Result<Self> {
        let omega = &domain.omega;
        let n = omega.num_sites();
        let h = omega.grid_step();
        let pi_w = match mode {
            PolarizationMode::Off => DMatrix::zeros(n, n),
            PolarizationMode::Full => {
                let lk = params.lambda_k();
                let table = RadialKernelTable::propagator(params.m, h, omega.max_displacement())?
                    .map(|f| 0.5 * lk * f * f);
                operators::convolution_operator(&table, omega)?
            }
        };
        let pi0 = match mode {
            PolarizationMode::Off => 0.0,
            PolarizationMode::Full => polarization_momentum(0.0, params)?,
        };
        let one_plus_pi = DMatrix::identity(n, n) + pi_w;
        let ev = sym_eigenvalues(&one_plus_pi);
        if ev[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!("1 + π has eigenvalue {}", ev[0])));
        }
        let sqrt_one_plus_pi = sym_function(&one_plus_pi, f64::sqrt);
        let inv_sqrt_one_plus_pi = sym_function(&one_plus_pi, |x| 1.0 / x.sqrt());
        let cut = EnforcedCutoff::new(cutoff, h);
        let kf = sym(&operators::convolution_operator(&cut, omega)?);
        let kf_eigs = sym_eigenvalues(&kf);
        if kf_eigs[0] <= 1e-12 {
            return Err(Error::NotPositiveDefinite(format!(
                "1/(1+f) has eigenvalue {}; grid too coarse for the cutoff",
                kf_eigs[0]
            )));
        }
        let one_plus_f = sym(&cholesky(&kf, "1/(1+f)")?.inverse());
        let c0 = sym(&(&inv_sqrt_one_plus_pi * &kf * &inv_sqrt_one_plus_pi));
        cholesky(&c0, "C0")?;
        Ok(CovarianceContext {
            params: params.clone(),
            domain,
            cutoff: *cutoff,
            one_plus_pi,
            sqrt_one_plus_pi,
            inv_sqrt_one_plus_pi,
            kf,
            one_plus_f,
            c0,
            pi0,
            cutoff_reach: cut.reach(),
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cell_weight(&self) -> f64 {
        self.domain.omega.cell_weight()
    }

    fn one_minus_eps(&self) -> f64 {
        1.0 - self.params.epsilon
    }

    /// C_γ^{-1} = √(1+π)((1+f) − (1−ε)P_γ)√(1+π).
    pub fn cgamma_inverse(&self, gamma: &[bool]) -> DMatrix<f64> {
        let mid = &self.one_plus_f - diag_mask(gamma) * self.one_minus_eps();
        sym(&(&self.sqrt_one_plus_pi * mid * &self.sqrt_one_plus_pi))
    }

    /// C_γ by direct inversion.
    pub fn cgamma_direct(&self, gamma: &[bool]) -> Result<DMatrix<f64>> {
        let mid = &self.one_plus_f - diag_mask(gamma) * self.one_minus_eps();
        let inv = cholesky(&mid, "(1+f) − (1−ε)P_γ")?.inverse();
        Ok(sym(&(&self.inv_sqrt_one_plus_pi * inv * &self.inv_sqrt_one_plus_pi)))
    }

    /// C^γ from the Neumann series, with the number of summed powers.
    pub fn cgamma_correction_neumann(&self, gamma: &[bool], rel_tail: f64) -> Result<(DMatrix<f64>, u64)> {
        let n = self.dim();
        if !gamma.iter().any(|&b| b) {
            return Ok((DMatrix::zeros(n, n), 0));
        }
        let pg = diag_mask(gamma) * self.one_minus_eps();
        let x = &self.kf * &pg;
        let (series, terms) = neumann_sum(&x, rel_tail)?;
        let inner = &pg * series;
        Ok((
            sym(&(&self.inv_sqrt_one_plus_pi * &self.kf * inner * &self.kf * &self.inv_sqrt_one_plus_pi)),
            terms,
        ))
    }

    /// C_γ and its pieces for a region set.
    pub fn build_cgamma(&self, regions: &RegionSet) -> Result<CovarianceSet> {
        let gamma_mask = self.domain.mask_of(&regions.gamma)?;
        let cgamma = self.cgamma_direct(&gamma_mask)?;
        let (correction, terms) = self.cgamma_correction_neumann(&gamma_mask, 1e-10)?;
        let mut components = Vec::with_capacity(regions.components.len());
        for c in &regions.components {
            let mask = self.domain.mask_of(&c.gamma)?;
            components.push(self.cgamma_correction_neumann(&mask, 1e-10)?.0);
        }
        let direct_correction = &cgamma - &self.c0;
        let neumann_residual = sup_entry(&(&direct_correction - &correction));
        let mut sum = DMatrix::zeros(self.dim(), self.dim());
        for c in &components {
            sum += c;
        }
        let factorization_residual = sup_entry(&(&correction - &sum));
        cholesky(&cgamma, "C_gamma")?;
        Ok(CovarianceSet {
            c0: DiscretizedOperator::from_real(&self.c0, self.cell_weight()),
            cgamma: DiscretizedOperator::from_real(&cgamma, self.cell_weight()),
            cgamma_correction: DiscretizedOperator::from_real(&correction, self.cell_weight()),
            component_corrections: components,
            neumann_terms: terms,
            neumann_residual,
            factorization_residual,
            gamma_mask,
        })
    }

    /// ln Z_γ = ½ Σ ln μ_k over generalized eigenvalues of (C_γ, C₀).
    pub fn ln_zgamma_generalized(&self, cgamma: &DMatrix<f64>) -> Result<f64> {
        let l = cholesky(&self.c0, "C0")?;
        let linv = l.l().try_inverse().ok_or(Error::Singular(0.0))?;
        let m = &linv * cgamma * linv.transpose();
        let ev = sym_eigenvalues(&m);
        if ev[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite("C0^{-1} C_gamma".into()));
        }
        Ok(0.5 * ev.iter().map(|x| x.ln()).sum::<f64>())
    }

    /// ln Z_γ = −½ ln det(1 − (1−ε) P_γ K_f P_γ) on the γ sites alone.
    pub fn ln_zgamma_local(&self, gamma: &[bool]) -> Result<f64> {
        let idx: Vec<usize> = (0..gamma.len()).filter(|&k| gamma[k]).collect();
        if idx.is_empty() {
            return Ok(0.0);
        }
        let q = self.one_minus_eps();
        let m = DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            (if a == b { 1.0 } else { 0.0 }) - q * self.kf[(idx[a], idx[b])]
        });
        let ev = sym_eigenvalues(&m);
        if ev[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite("1 - (1-eps) P K_f P".into()));
        }
        Ok(-0.5 * ev.iter().map(|x| x.ln()).sum::<f64>())
    }

    /// Z_γ with both routes and its per-component product.
    pub fn compute_zgamma(&self, set: &CovarianceSet, regions: &RegionSet) -> Result<ZReport> {
        let cg = set.cgamma.matrix.map(|z| z.re);
        let ln_z = self.ln_zgamma_generalized(&cg)?;
        let ln_z_local = self.ln_zgamma_local(&set.gamma_mask)?;
        let mut ln_components = Vec::new();
        for c in &regions.components {
            ln_components.push(self.ln_zgamma_local(&self.domain.mask_of(&c.gamma)?)?);
        }
        let ln_product: f64 = ln_components.iter().sum();
        let volume = regions.gamma.len() as f64;
        Ok(ZReport {
            ln_z,
            ln_z_local,
            ln_components,
            factorization_residual: ((ln_z - ln_product).exp() - 1.0).abs(),
            volume_constant: if volume > 0.0 { ln_z / volume } else { 0.0 },
        })
    }

    /// δC₁..δC₄ and the check of C_γ^{-1} − C_ls^{-1} = δC_γ − (1 − P_s).
    fn delta_c_terms(&self, regions: &RegionSet) -> Result<([DMatrix<f64>; 4], Vec<bool>, Vec<bool>)> {
        let n = self.dim();
        let s = &self.sqrt_one_plus_pi;
        let gamma = self.domain.mask_of(&regions.gamma)?;
        let ml = self.domain.mask_of(&regions.lambda_l)?;
        let lam = &self.domain.lambda_mask;
        let ms: Vec<bool> = (0..n).map(|k| lam[k] && !ml[k]).collect();
        let out: Vec<bool> = lam.iter().map(|b| !b).collect();
        let sps = s * diag_mask(&gamma) * s;
        let t = s * s - &sps;
        let dc1 = -masked(&sps, &ms, &ms);
        let dc2 = masked(&t, &ml, &ms) + masked(&t, &ms, &ml) + masked(&t, &ml, &ml);
        let dc3 = masked(&t, &out, lam) + masked(&t, lam, &out) + masked(&t, &out, &out);
        let dc4 = &sps * self.params.epsilon;
        Ok(([dc1, dc2, dc3, dc4], gamma, ms))
    }

    /// δC_γ = δC₁ + δC₂ + δC₃ + δC₄ without the diagnostics of `build_delta_c`.
    pub fn delta_c_total(&self, regions: &RegionSet) -> Result<DMatrix<f64>> {
        let ([a, b, c, d], _, _) = self.delta_c_terms(regions)?;
        Ok(a + b + c + d)
    }

    pub fn build_delta_c(&self, regions: &RegionSet) -> Result<DeltaC> {
        let n = self.dim();
        let s = &self.sqrt_one_plus_pi;
        let ([dc1, dc2, dc3, dc4], gamma, ms) = self.delta_c_terms(regions)?;
        let total = &dc1 + &dc2 + &dc3 + &dc4;
        let pi_w = &self.one_plus_pi - DMatrix::identity(n, n);
        let f_w = &self.one_plus_f - DMatrix::identity(n, n);
        let c_ls_inv = masked(&pi_w, &ms, &ms) + DMatrix::identity(n, n) + s * f_w * s;
        let lhs = self.cgamma_inverse(&gamma) - c_ls_inv;
        let rhs = &total - (DMatrix::identity(n, n) - diag_mask(&ms));
        let eq_residual = sup_entry(&(lhs - rhs));
        let dc1_max_eig = *sym_eigenvalues(&dc1).last().unwrap_or(&0.0);
        let dc3_max_eig = *sym_eigenvalues(&dc3).last().unwrap_or(&0.0);
        let dc4_norm = sym_norm(&dc4);
        let dc2_norm = sym_norm(&dc2);
        Ok(DeltaC {
            terms: [dc1, dc2, dc3, dc4],
            eq_residual,
            dc1_max_eig,
            dc2_norm,
            dc3_max_eig,
            dc4_norm,
        })
    }
}

/// Σ_{r≥0} X^r via Π_j (1 + X^{2^j}), stopped once ‖X^{2^k}‖_F < rel_tail.
pub fn neumann_sum(x: &DMatrix<f64>, rel_tail: f64) -> Result<(DMatrix<f64>, u64)> {
    const MAX_DOUBLINGS: u32 = 48;
    let n = x.nrows();
    let mut sum = DMatrix::identity(n, n) + x;
    let mut pw = x * x;
    for k in 1..MAX_DOUBLINGS {
        if pw.norm() < rel_tail {
            return Ok((sum, 1u64 << k));
        }
        sum = &sum + &pw * &sum;
        pw = &pw * &pw;
    }
    Err(Error::NoConvergence(1usize << MAX_DOUBLINGS.min(62)))
}

/// C₀ on Λ (P_Λ C₀ P_Λ) for a lattice.
pub fn build_c0(params: &ModelParams, geometry: &LatticeGeometry, cutoff: &CutoffSpec) -> Result<DiscretizedOperator> {
    let ctx = CovarianceContext::new(
        params,
        PaddedDomain::new(geometry, 2)?,
        cutoff,
        PolarizationMode::Full,
    )?;
    Ok(DiscretizedOperator::from_real(
        &ctx.domain.restrict_to_lambda(&ctx.c0),
        ctx.cell_weight(),
    ))
}

/// C₀, C_γ and the pieces of C^γ on Ω.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub c0: DiscretizedOperator,
    pub cgamma: DiscretizedOperator,
    pub cgamma_correction: DiscretizedOperator,
    pub component_corrections: Vec<DMatrix<f64>>,
    pub neumann_terms: u64,
    /// sup |(C_γ − C₀) − C^γ_Neumann|.
    pub neumann_residual: f64,
    /// sup |C^γ − Σ_i C^{γ_i}|.
    pub factorization_residual: f64,
    pub gamma_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZReport {
    pub ln_z: f64,
    pub ln_z_local: f64,
    pub ln_components: Vec<f64>,
    /// |Z_γ / Π_i Z_{γ_i} − 1|.
    pub factorization_residual: f64,
    /// ln Z_γ / |γ| with |γ| in unit squares.
    pub volume_constant: f64,
}

#[derive(Debug, Clone)]
pub struct DeltaC {
    pub terms: [DMatrix<f64>; 4],
    pub eq_residual: f64,
    pub dc1_max_eig: f64,
    pub dc2_norm: f64,
    pub dc3_max_eig: f64,
    pub dc4_norm: f64,
}

impl DeltaC {
    pub fn total(&self) -> DMatrix<f64> {
        &self.terms[0] + &self.terms[1] + &self.terms[2] + &self.terms[3]
    }
}

/// Mean-zero Gaussian vectors with covariance matrix `cov` (Cholesky factor).
pub fn sample_gaussian(cov: &DMatrix<f64>, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let l = cholesky(cov, "sample covariance")?.l();
    let n = cov.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        out.push((&l * z).iter().copied().collect());
    }
    Ok(out)
}

/// Field samples on Λ from an operator in matrix convention (site covariance = matrix / w).
pub fn sample_fields(
    cov_lambda: &DMatrix<f64>,
    cell_weight: f64,
    geometry: LatticeGeometry,
    seed: u64,
    count: usize,
) -> Result<Vec<FieldConfig>> {
    sample_gaussian(&(cov_lambda / cell_weight), seed, count)?
        .into_iter()
        .map(|tau| FieldConfig::new(geometry, tau))
        .collect()
}

/// Terms of ln(Z_γ |G_γ|) with π absorbed and τ supported in Λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop8Report {
    pub ln_z: f64,
    pub ln_theta: f64,
    pub gaussian_l: f64,
    pub ln_det3_s: f64,
    pub ln_det2_b: f64,
    pub delta_c_quadratic: f64,
    pub mass_l: f64,
    pub mass_s: f64,
    /// (ln Z_γ|G_γ| + (49/100)∫_l τ²) / (N^{-2/5} ∫_s τ²); −∞ when θ vanishes.
    pub fitted_constant: f64,
}

impl Prop8Report {
    pub fn ln_lhs(&self) -> f64 {
        self.ln_z + self.ln_theta + self.gaussian_l + self.ln_det3_s + self.ln_det2_b + self.delta_c_quadratic
    }

    /// Whether the bound holds with a given constant.
    pub fn holds_with(&self, c: f64, big_n: f64) -> bool {
        self.ln_lhs() <= -0.49 * self.mass_l + c * big_n.powf(-0.4) * self.mass_s + 1e-12
    }
}

/// Evaluate every factor of Z_γ G_γ(τ) for one configuration.
pub fn prop8_assembly(
    ctx: &CovarianceContext,
    field: &FieldConfig,
    assignment: &LSAssignment,
    regions: &RegionSet,
    f_w: &DMatrix<f64>,
) -> Result<Prop8Report> {
    let p = &ctx.params;
    let big_n = p.n_f64();
    let gamma = ctx.domain.mask_of(&regions.gamma)?;
    let ln_z = ctx.ln_zgamma_local(&gamma)?;
    let lk = p.lambda_k();
    let x_max = field.masses.values().fold(0.0f64, |a, &m| a.max(lk * m));
    let nm = n_max(x_max, big_n);
    let mut ln_theta = 0.0;
    for (sq, &mass) in &field.masses {
        let w = theta_weights(lk * mass, big_n, nm);
        let t = match assignment.labels.get(sq).copied().unwrap_or(SquareLabel::Small) {
            SquareLabel::Small => w.theta_s,
            SquareLabel::Large(n) => w.theta_n.get(n as usize - 1).copied().unwrap_or(0.0),
        };
        ln_theta += t.ln();
    }
    let mass_l = field.mass_of(regions.lambda_l.iter());
    let mass_s = field.mass_of(regions.lambda_s.iter());
    let layout = field.geometry.layout();
    let a = operators::build_a_from_matrix(f_w, &field.tau, p.g, layout.cell_weight());
    let blocks = ABlocks::split(a, &layout, &regions.lambda_l);
    let ias = blocks.a_s.scale(Complex64::new(0.0, 1.0));
    let ln_det3_s = -0.5 * big_n * operators::ln_det_reg_lu(&ias, 3)?.re;
    let b = operators::b_operator(&blocks)?;
    let ln_det2_b = -0.5 * big_n * operators::ln_det_reg_lu(&b, 2)?.re;
    let dc_lambda = ctx.domain.restrict_to_lambda(&ctx.delta_c_total(regions)?);
    let tau = DVector::from_column_slice(&field.tau);
    let delta_c_quadratic = 0.5 * layout.cell_weight() * (tau.transpose() * dc_lambda * &tau)[(0, 0)];
    let mut r = Prop8Report {
        ln_z,
        ln_theta,
        gaussian_l: -0.5 * mass_l,
        ln_det3_s,
        ln_det2_b,
        delta_c_quadratic,
        mass_l,
        mass_s,
        fitted_constant: 0.0,
    };
    let scale = big_n.powf(-0.4) * mass_s;
    let excess = r.ln_lhs() + 0.49 * mass_l;
    r.fitted_constant = if excess == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if scale > 0.0 {
        excess / scale
    } else if excess <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(r)
}

/// Monte Carlo estimate of Z^Δ for one small-field square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSquareZ {
    pub z: Complex64,
    pub std_err: f64,
    pub bound: f64,
    pub samples: usize,
}

impl SingleSquareZ {
    pub fn deviation(&self) -> f64 {
        (self.z - 1.0).norm()
    }
}

/// Z^Δ = ∫ dμ^Δ θ^s_Δ det₃^{-N/2}(1 + iA_Δ) with covariance χ_Δ C₀ χ_Δ.
pub fn single_square_z(
    params: &ModelParams,
    cutoff: &CutoffSpec,
    sites_per_side: usize,
    padding: usize,
    samples: usize,
    seed: u64,
) -> Result<SingleSquareZ> {
    let domain = PaddedDomain::from_squares(vec![(0, 0)], sites_per_side, padding)?;
    let ctx = CovarianceContext::new(params, domain, cutoff, PolarizationMode::Full)?;
    let layout = &ctx.domain.lambda;
    let w = layout.cell_weight();
    let cov = ctx.domain.restrict_to_lambda(&ctx.c0) / w;
    let table = operators::propagator_table(params.m, layout)?;
    let f_w = operators::convolution_operator(&table, layout)?;
    let big_n = params.n_f64();
    let lk = params.lambda_k();
    let mut sum = Complex64::new(0.0, 0.0);
    let (mut sum_re2, mut sum_im2) = (0.0, 0.0);
    for tau in sample_gaussian(&cov, seed, samples)? {
        let mass: f64 = tau.iter().map(|t| t * t * w).sum();
        let theta = theta_weights(lk * mass, big_n, n_max(lk * mass, big_n)).theta_s;
        let a = operators::build_a_from_matrix(&f_w, &tau, params.g, w).scale(Complex64::new(0.0, 1.0));
        let weight = if theta > 0.0 {
            (-0.5 * big_n * operators::ln_det_reg(&a, 3)?).exp() * theta
        } else {
            Complex64::new(0.0, 0.0)
        };
        sum += weight;
        sum_re2 += weight.re * weight.re;
        sum_im2 += weight.im * weight.im;
    }
    let n = samples as f64;
    let z = sum / n;
    let var = (sum_re2 / n - z.re * z.re) + (sum_im2 / n - z.im * z.im);
    Ok(SingleSquareZ {
        z,
        std_err: (var.max(0.0) / n).sqrt(),
        bound: big_n.powf(-0.2),
        samples,
    })
}
