//! Discretized operators: A = F gτ on Λ, its s/l blocks, regularized determinants and norm checks.

use crate::error::{Error, Result};
use crate::kernels::{LatticeKernel, RadialKernelTable};
use crate::model::ModelParams;
use crate::regions::{FieldConfig, LatticeGeometry, SiteLayout, Square};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;

pub type CMatrix = DMatrix<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Integral operator on a uniform site grid; `matrix` holds kernel × cell weight,
/// so composition is the plain matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedOperator {
    pub matrix: CMatrix,
    pub cell_weight: f64,
}

impl DiscretizedOperator {
    pub fn new(matrix: CMatrix, cell_weight: f64) -> Self {
        DiscretizedOperator { matrix, cell_weight }
    }

    pub fn from_real(m: &DMatrix<f64>, cell_weight: f64) -> Self {
        DiscretizedOperator::new(m.map(|x| Complex64::new(x, 0.0)), cell_weight)
    }

    pub fn zeros(dim: usize, cell_weight: f64) -> Self {
        DiscretizedOperator::new(CMatrix::zeros(dim, dim), cell_weight)
    }

    pub fn identity(dim: usize, cell_weight: f64) -> Self {
        DiscretizedOperator::new(CMatrix::identity(dim, dim), cell_weight)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Kernel value K(x_i, x_j).
    pub fn kernel(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)] / self.cell_weight
    }

    /// P_left · self · P_right for site masks.
    pub fn project(&self, left: &[bool], right: &[bool]) -> Self {
        let mut m = self.matrix.clone();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if !(left[i] && right[j]) {
                    m[(i, j)] = Complex64::new(0.0, 0.0);
                }
            }
        }
        DiscretizedOperator::new(m, self.cell_weight)
    }

    pub fn compose(&self, other: &Self) -> Self {
        DiscretizedOperator::new(&self.matrix * &other.matrix, self.cell_weight)
    }

    pub fn adjoint(&self) -> Self {
        DiscretizedOperator::new(self.matrix.adjoint(), self.cell_weight)
    }

    pub fn add(&self, other: &Self) -> Self {
        DiscretizedOperator::new(&self.matrix + &other.matrix, self.cell_weight)
    }

    pub fn sub(&self, other: &Self) -> Self {
        DiscretizedOperator::new(&self.matrix - &other.matrix, self.cell_weight)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        DiscretizedOperator::new(&self.matrix * c, self.cell_weight)
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Largest |entry| of self − self*.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()))
    }

    /// Tr(self* self).
    pub fn hilbert_schmidt_sq(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Weighted quadratic form (τ, K τ) = Σ τ_i M_ij τ_j w for a real field.
    pub fn quadratic_form(&self, tau: &[f64]) -> Complex64 {
        let v = DVector::from_iterator(tau.len(), tau.iter().map(|&t| Complex64::new(t, 0.0)));
        (v.transpose() * &self.matrix * &v)[(0, 0)] * self.cell_weight
    }
}

/// Propagator F tabulated on all displacements of a layout.
pub fn propagator_table(m: f64, layout: &SiteLayout) -> Result<RadialKernelTable> {
    RadialKernelTable::propagator(m, layout.grid_step(), layout.max_displacement())
}

/// Dense operator with kernel k(x − y) on the sites of a layout (no τ factor).
pub fn convolution_operator(kernel: &dyn LatticeKernel, layout: &SiteLayout) -> Result<DMatrix<f64>> {
    if (kernel.grid_step() - layout.grid_step()).abs() > 1e-12 {
        return Err(Error::Dimension(format!(
            "kernel grid step {} differs from site grid step {}",
            kernel.grid_step(),
            layout.grid_step()
        )));
    }
    let n = layout.num_sites();
    let w = layout.cell_weight();
    let coords: Vec<(i64, i64)> = (0..n).map(|k| layout.site_lattice(k)).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.at(coords[i].0 - coords[j].0, coords[i].1 - coords[j].1) * w;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// A_xy = F(x − y) g τ(y) w on Λ.
pub fn build_a(field: &FieldConfig, params: &ModelParams, kernel: &dyn LatticeKernel) -> Result<DiscretizedOperator> {
    let layout = field.geometry.layout();
    let f = convolution_operator(kernel, &layout)?;
    Ok(build_a_from_matrix(&f, &field.tau, params.g, layout.cell_weight()))
}

/// A from a precomputed F·w matrix.
pub fn build_a_from_matrix(f_w: &DMatrix<f64>, tau: &[f64], g: f64, cell_weight: f64) -> DiscretizedOperator {
    let n = f_w.nrows();
    let mut m = CMatrix::zeros(n, n);
    for j in 0..n {
        let s = g * tau[j];
        for i in 0..n {
            m[(i, j)] = Complex64::new(f_w[(i, j)] * s, 0.0);
        }
    }
    DiscretizedOperator::new(m, cell_weight)
}

/// Blocks of A for a small/large split of Λ.
#[derive(Debug, Clone)]
pub struct ABlocks {
    pub a: DiscretizedOperator,
    pub a_s: DiscretizedOperator,
    pub a_l: DiscretizedOperator,
    /// P_s A P_l + P_l A P_s.
    pub a_prime: DiscretizedOperator,
    pub mask_s: Vec<bool>,
    pub mask_l: Vec<bool>,
}

impl ABlocks {
    pub fn split(a: DiscretizedOperator, layout: &SiteLayout, large: &BTreeSet<Square>) -> Self {
        let mask_l = layout.mask_of(large);
        let mask_s: Vec<bool> = mask_l.iter().map(|b| !b).collect();
        let a_s = a.project(&mask_s, &mask_s);
        let a_l = a.project(&mask_l, &mask_l);
        let a_prime = a.project(&mask_s, &mask_l).add(&a.project(&mask_l, &mask_s));
        ABlocks {
            a,
            a_s,
            a_l,
            a_prime,
            mask_s,
            mask_l,
        }
    }

    /// A'' = A − A_s.
    pub fn a_double_prime(&self) -> DiscretizedOperator {
        self.a_prime.add(&self.a_l)
    }
}

// ---------------------------------------------------------------------------
// Spectral helpers

/// Eigenvalues of a general complex matrix via complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), 1e-15, 100_000).ok_or(Error::NoConvergence(100_000))?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

/// Eigenvalues of a Hermitian matrix (ascending).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Largest singular value by power iteration on M*M.
pub fn operator_norm(op: &DiscretizedOperator) -> Result<f64> {
    operator_norm_seeded(op, 0x5eed)
}

pub fn operator_norm_seeded(op: &DiscretizedOperator, seed: u64) -> Result<f64> {
    const MAX_ITER: usize = 50_000;
    let n = op.dim();
    if n == 0 {
        return Ok(0.0);
    }
    let m = &op.matrix;
    let mh = m.adjoint();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v = DVector::from_iterator(n, (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)));
    v /= Complex64::new(v.norm(), 0.0);
    let mut prev = 0.0;
    for it in 0..MAX_ITER {
        let u = m * &v;
        let w = &mh * &u;
        let sigma2 = u.norm_squared();
        let nw = w.norm();
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w / Complex64::new(nw, 0.0);
        if it > 2 && (sigma2 - prev).abs() <= 1e-15 * sigma2 {
            return Ok(sigma2.sqrt());
        }
        prev = sigma2;
    }
    Err(Error::NoConvergence(MAX_ITER))
}

/// Largest singular value from a dense SVD.
pub fn operator_norm_dense(op: &DiscretizedOperator) -> f64 {
    if op.dim() == 0 {
        return 0.0;
    }
    op.matrix.clone().svd(false, false).singular_values.max()
}

/// ln(1 + λ) − Σ_{j=1}^{n−1} (−1)^{j+1} λ^j / j.
fn regularized_log(lambda: Complex64, order: u32) -> Complex64 {
    if lambda.norm() < 0.1 {
        // Tail of the series Σ_{j≥n} (−1)^{j+1} λ^j / j.
        let mut sum = Complex64::new(0.0, 0.0);
        let mut pw = lambda.powu(order.max(1));
        let start = order.max(1);
        for j in start..start + 200 {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            let term = pw * (sign / j as f64);
            sum += term;
            if term.norm() < 1e-18 * sum.norm().max(1e-300) {
                break;
            }
            pw *= lambda;
        }
        sum
    } else {
        let mut s = (Complex64::new(1.0, 0.0) + lambda).ln();
        let mut pw = lambda;
        for j in 1..order {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            s -= pw * (sign / j as f64);
            pw *= lambda;
        }
        s
    }
}

/// ln det_n(1 + K) = Σ_i [ln(1 + λ_i) − Σ_{j<n} (−1)^{j+1} λ_i^j / j] from an eigenvalue list.
pub fn ln_det_reg_from_eigenvalues(eigs: &[Complex64], order: u32) -> Result<Complex64> {
    if order == 0 {
        return Err(Error::param("order", "must be at least 1"));
    }
    let min_gap = eigs.iter().map(|l| (Complex64::new(1.0, 0.0) + l).norm()).fold(f64::INFINITY, f64::min);
    if min_gap < 1e-12 {
        return Err(Error::Singular(min_gap));
    }
    Ok(eigs.iter().map(|&l| regularized_log(l, order)).sum())
}

/// ln det_n(1 + K).
pub fn ln_det_reg(op: &DiscretizedOperator, order: u32) -> Result<Complex64> {
    ln_det_reg_from_eigenvalues(&eigenvalues(&op.matrix)?, order)
}

/// det_n(1 + K) = det(1 + K) exp(Σ_{j=1}^{n−1} (−1)^j Tr K^j / j).
pub fn det_reg(op: &DiscretizedOperator, order: u32) -> Result<Complex64> {
    Ok(ln_det_reg(op, order)?.exp())
}

/// ln det_n(1 + K) from the LU determinant and the subtracted traces.
///
/// The imaginary part is only defined modulo 2π.
pub fn ln_det_reg_lu(op: &DiscretizedOperator, order: u32) -> Result<Complex64> {
    if order == 0 {
        return Err(Error::param("order", "must be at least 1"));
    }
    let k = &op.matrix;
    let mut s = ln_det_lu(k)?;
    for j in 1..order {
        let tr = match j {
            1 => k.trace(),
            2 => k.component_mul(&k.transpose()).sum(),
            _ => (2..j).fold(k * k, |p, _| &p * k).trace(),
        };
        let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
        s += sign * tr / j as f64;
    }
    Ok(s)
}

/// ln det(1 + K) by LU.
pub fn ln_det_lu(k: &CMatrix) -> Result<Complex64> {
    let n = k.nrows();
    let lu = (CMatrix::identity(n, n) + k).lu();
    let u = lu.u();
    let mut s = Complex64::new(0.0, 0.0);
    let mut min = f64::INFINITY;
    for i in 0..n {
        let d = u[(i, i)];
        min = min.min(d.norm());
        s += d.ln();
    }
    if min < 1e-300 {
        return Err(Error::Singular(min));
    }
    if lu.p().determinant::<f64>() < 0.0 {
        s += Complex64::new(0.0, std::f64::consts::PI);
    }
    Ok(s)
}

fn inverse(m: &CMatrix) -> Result<CMatrix> {
    m.clone().lu().try_inverse().ok_or(Error::Singular(0.0))
}

fn rel_residual(ln_lhs: Complex64, ln_rhs: Complex64) -> f64 {
    ((ln_lhs - ln_rhs).exp() - 1.0).norm()
}

/// B = (1 + iA_s)^{-1} iA''.
pub fn b_operator(blocks: &ABlocks) -> Result<DiscretizedOperator> {
    let n = blocks.a.dim();
    let one_plus = CMatrix::identity(n, n) + &blocks.a_s.matrix * I;
    let inv = inverse(&one_plus)?;
    Ok(DiscretizedOperator::new(
        inv * (&blocks.a_double_prime().matrix * I),
        blocks.a.cell_weight,
    ))
}

/// Residuals of the determinant split and its single-determinant rewriting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetSplitReport {
    /// det^{-1}(1+iA) vs det^{-1}(1+iA_s) det^{-1}(1+B).
    pub residual_split: f64,
    /// det₃^{-1}(1+iA_s) det₂^{-1}(1+B) vs det₂^{-1}(1+iA) exp Tr{−½(iA_s)²}.
    pub residual_rewrite: f64,
    /// ln |det₂^{-N/2}(1+B)|.
    pub ln_abs_det2_b: f64,
    /// ln |det₂^{-N/2}(1+B)| / (N^{-4/5} ∫_Λ τ²), zero when ∫τ² = 0.
    pub lemma7_constant: f64,
}

impl DetSplitReport {
    pub fn residual(&self) -> f64 {
        self.residual_split.max(self.residual_rewrite)
    }
}

/// Evaluate both determinant identities for one configuration.
pub fn det_split_identity(blocks: &ABlocks, params: &ModelParams, field_mass: f64) -> Result<DetSplitReport> {
    let ia = blocks.a.scale(I);
    let ia_s = blocks.a_s.scale(I);
    let b = b_operator(blocks)?;
    let e_a = eigenvalues(&ia.matrix)?;
    let e_as = eigenvalues(&ia_s.matrix)?;
    let e_b = eigenvalues(&b.matrix)?;
    let ln_det_a = ln_det_reg_from_eigenvalues(&e_a, 1)?;
    let ln_det_as = ln_det_reg_from_eigenvalues(&e_as, 1)?;
    let ln_det_b = ln_det_reg_from_eigenvalues(&e_b, 1)?;
    let residual_split = rel_residual(-ln_det_a, -ln_det_as - ln_det_b);
    let lhs = -ln_det_reg_from_eigenvalues(&e_as, 3)? - ln_det_reg_from_eigenvalues(&e_b, 2)?;
    let tr_as2 = ia_s.compose(&ia_s).trace();
    let rhs = -ln_det_reg_from_eigenvalues(&e_a, 2)? - 0.5 * tr_as2;
    let residual_rewrite = rel_residual(lhs, rhs);
    let ln_abs = -0.5 * params.n_f64() * ln_det_reg_from_eigenvalues(&e_b, 2)?.re;
    let scale = params.n_f64().powf(-0.8) * field_mass;
    Ok(DetSplitReport {
        residual_split,
        residual_rewrite,
        ln_abs_det2_b: ln_abs,
        lemma7_constant: if scale > 0.0 { ln_abs / scale } else { 0.0 },
    })
}

/// Spectral split of D = B + B* + B*B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DReport {
    pub d_plus_norm: f64,
    pub d_minus_norm: f64,
    pub tr_d_minus_sq: f64,
    /// Tr D_−² / (N^{-4/5} g² ∫_Λ τ²), zero when ∫τ² = 0.
    pub trace_constant: f64,
    /// | |det^{-1}(1+B)| / det^{-1/2}(1+D) − 1 |.
    pub modulus_identity_residual: f64,
}

pub fn d_decomposition(blocks: &ABlocks, params: &ModelParams, field_mass: f64) -> Result<DReport> {
    let b = b_operator(blocks)?;
    let bs = b.adjoint();
    let d = b.add(&bs).add(&bs.compose(&b));
    let mut dh = d.matrix.clone();
    // Symmetrize away round-off before the Hermitian solver.
    dh = (&dh + dh.adjoint()) * Complex64::new(0.5, 0.0);
    let ev = hermitian_eigenvalues(&dh);
    let d_plus_norm = ev.iter().filter(|&&x| x > 0.0).fold(0.0f64, |a, &x| a.max(x));
    let d_minus_norm = ev.iter().filter(|&&x| x < 0.0).fold(0.0f64, |a, &x| a.max(-x));
    let tr_d_minus_sq: f64 = ev.iter().filter(|&&x| x < 0.0).map(|x| x * x).sum();
    let ln_abs_det_b = ln_det_reg_from_eigenvalues(&eigenvalues(&b.matrix)?, 1)?.re;
    let ln_det_d: f64 = ev.iter().map(|x| (1.0 + x).ln()).sum();
    let modulus_identity_residual = ((-ln_abs_det_b + 0.5 * ln_det_d).exp() - 1.0).abs();
    let scale = params.n_f64().powf(-0.8) * params.g * params.g * field_mass;
    Ok(DReport {
        d_plus_norm,
        d_minus_norm,
        tr_d_minus_sq,
        trace_constant: if scale > 0.0 { tr_d_minus_sq / scale } else { 0.0 },
        modulus_identity_residual,
    })
}

/// (Tr (PAP)^r, Tr P A^r P) for Hermitian A and a site mask.
pub fn trace_projection_inequality(a: &DiscretizedOperator, mask: &[bool], r: u32) -> Result<(f64, f64)> {
    if r == 0 {
        return Err(Error::param("r", "must be at least 1"));
    }
    let pap = a.project(mask, mask);
    let mut lhs_m = pap.matrix.clone();
    let mut ar = a.matrix.clone();
    for _ in 1..r {
        lhs_m = &lhs_m * &pap.matrix;
        ar = &ar * &a.matrix;
    }
    let rhs = DiscretizedOperator::new(ar, a.cell_weight).project(mask, mask).trace().re;
    Ok((lhs_m.trace().re, rhs))
}

/// |Tr A_s³| and ‖A_s‖ Tr(A_s* A_s).
pub fn cubic_trace_bound(a_s: &DiscretizedOperator) -> Result<(f64, f64)> {
    let a2 = a_s.compose(a_s);
    let lhs = a2.compose(a_s).trace().norm();
    Ok((lhs, operator_norm(a_s)? * a_s.hilbert_schmidt_sq()))
}

/// Largest |Im λ| relative to the spectral radius of A.
pub fn spectrum_imaginary_defect(a: &DiscretizedOperator) -> Result<f64> {
    let ev = eigenvalues(&a.matrix)?;
    let radius = ev.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if radius == 0.0 {
        return Ok(0.0);
    }
    Ok(ev.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max) / radius)
}

/// ‖P_{Δ'} A P_Δ‖.
pub fn derived_link_norm(a: &DiscretizedOperator, layout: &SiteLayout, pair: (Square, Square)) -> Result<f64> {
    if pair.0 == pair.1 {
        return Err(Error::param("square_pair", "squares must differ"));
    }
    let md = layout.mask(|s| s == pair.0);
    let mdp = layout.mask(|s| s == pair.1);
    operator_norm(&a.project(&mdp, &md))
}

/// ‖Σ_l α_l P_{Δ'_l} A P_{Δ_l}‖ for the given links and coefficients.
pub fn link_sum_norm(
    a: &DiscretizedOperator,
    layout: &SiteLayout,
    links: &[(Square, Square)],
    alphas: &[Complex64],
) -> Result<f64> {
    if links.len() != alphas.len() {
        return Err(Error::Dimension("one coefficient per link required".into()));
    }
    let mut sum = DiscretizedOperator::zeros(a.dim(), a.cell_weight);
    for (&(d, dp), &al) in links.iter().zip(alphas) {
        let md = layout.mask(|s| s == d);
        let mdp = layout.mask(|s| s == dp);
        sum = sum.add(&a.project(&mdp, &md).scale(al));
    }
    operator_norm(&sum)
}

/// Cauchy radius N^{1/6} e^{(9m/10) d}.
pub fn cauchy_radius(params: &ModelParams, distance: f64) -> f64 {
    params.n_f64().powf(1.0 / 6.0) * (0.9 * params.m * distance).exp()
}

/// Geometry helper used by checks: F·w on Λ.
pub fn propagator_matrix(params: &ModelParams, geometry: &LatticeGeometry) -> Result<DMatrix<f64>> {
    let layout = geometry.layout();
    let table = propagator_table(params.m, &layout)?;
    convolution_operator(&table, &layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regularized_log_branches_agree() {
        for &z in &[Complex64::new(0.099, 0.0), Complex64::new(0.0, 0.0999), Complex64::new(-0.07, 0.07)] {
            for order in 1..5 {
                let series = regularized_log(z, order);
                let mut direct = (Complex64::new(1.0, 0.0) + z).ln();
                for j in 1..order {
                    let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                    direct -= z.powu(j) * (sign / j as f64);
                }
                assert!((series - direct).norm() < 1e-15, "{z} {order}");
            }
        }
    }

    #[test]
    fn scalar_det2() {
        let k = DiscretizedOperator::from_real(&DMatrix::from_element(1, 1, 0.5), 1.0);
        let d = det_reg(&k, 2).unwrap();
        assert!((d.re - 1.5 * (-0.5f64).exp()).abs() < 1e-15 && d.im.abs() < 1e-15);
    }
}
