//! Model constants and the mass-gap equation.

use crate::error::{Error, Result};
use crate::quad;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Lower edge of the root bracket for m².
pub const GAP_BRACKET_LO: f64 = 1e-30;
/// Upper edge of the root bracket for m².
pub const GAP_BRACKET_HI: f64 = 1.0;

/// Momentum regulator applied to p².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regulator {
    /// Sharp cutoff at p² = 1.
    Sharp,
    /// p² → p² e^{p²}.
    Exponential,
}

impl FromStr for Regulator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharp" => Ok(Regulator::Sharp),
            "exponential" => Ok(Regulator::Exponential),
            _ => Err(Error::param("regulator", format!("unknown value `{s}`"))),
        }
    }
}

impl fmt::Display for Regulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regulator::Sharp => write!(f, "sharp"),
            Regulator::Exponential => write!(f, "exponential"),
        }
    }
}

/// Physical and regulator constants with derived thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub big_k: f64,
    pub big_n: u64,
    pub g: f64,
    pub m: f64,
    pub epsilon: f64,
    pub corridor_m: f64,
    pub regulator: Regulator,
}

impl ModelParams {
    pub fn m2(&self) -> f64 {
        self.m * self.m
    }

    pub fn lambda_k(&self) -> f64 {
        self.lambda * self.big_k
    }

    pub fn n_f64(&self) -> f64 {
        self.big_n as f64
    }

    /// Replace the corridor width.
    pub fn with_corridor(mut self, corridor_m: f64) -> Result<Self> {
        if !(corridor_m > 0.0) {
            return Err(Error::param("corridor_override", "must be positive"));
        }
        self.corridor_m = corridor_m;
        Ok(self)
    }

    /// Replace the covariance floor.
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::param("epsilon", "must lie in (0, 1)"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Same model with g = 0 (free field).
    pub fn free(&self) -> Self {
        ModelParams { g: 0.0, ..self.clone() }
    }

    /// m² e^{4π/λ}.
    pub fn c_m(&self) -> f64 {
        self.m2() * (4.0 * PI / self.lambda).exp()
    }

    /// Whether 2/π < λ < π.
    pub fn in_coupling_window(&self) -> bool {
        self.lambda > 2.0 / PI && self.lambda < PI
    }

    /// Whether e^{-10} < m < 1/6.
    pub fn in_mass_window(&self) -> bool {
        self.m > (-10.0f64).exp() && self.m < 1.0 / 6.0
    }

    /// Key=value parameter report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("lambda", fmt_real(self.lambda));
        kv("K", fmt_real(self.big_k));
        kv("N", self.big_n.to_string());
        kv("regulator", self.regulator.to_string());
        kv("g", fmt_real(self.g));
        kv("m2", fmt_real(self.m2()));
        kv("m", fmt_real(self.m));
        kv("c_m", fmt_real(self.c_m()));
        kv("epsilon", fmt_real(self.epsilon));
        kv("corridor_M", fmt_real(self.corridor_m));
        kv(
            "gap_residual",
            fmt_real(gap_residual(self.m2(), self.lambda, self.big_k, self.regulator).unwrap_or(f64::NAN)),
        );
        s
    }
}

/// Format a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Leading asymptotic of m²: e^{-4π/λ}.
pub fn leading_mass(lambda: f64) -> f64 {
    (-4.0 * PI / lambda).exp()
}

/// Left side of the gap equation: ½∫d²p/(2π)² 1/(p²_reg + m²).
pub fn gap_integral(m2: f64, regulator: Regulator) -> Result<f64> {
    match regulator {
        Regulator::Sharp => Ok(((1.0 + m2) / m2).ln() / (8.0 * PI)),
        Regulator::Exponential => {
            let (v, _) = exp_radial_integrals(m2, 1)?;
            Ok(v / (8.0 * PI))
        }
    }
}

/// ∫₀^∞ du (u e^u + m²)^{-k} for k = 1 (and its k = 2 companion for the derivative).
///
/// Returns (I_k, I_{k+1}).
fn exp_radial_integrals(m2: f64, k: i32) -> Result<(f64, f64)> {
    const U_MAX: f64 = 40.0;
    let breaks = {
        let mut b = quad::geometric_breaks(m2.min(0.5) / 4.0, 1.0, 4.0);
        b.extend_from_slice(&[2.0, 4.0, 8.0, 16.0, U_MAX]);
        b
    };
    let f1 = |u: f64| (u * u.exp() + m2).powi(-k);
    let f2 = |u: f64| (u * u.exp() + m2).powi(-(k + 1));
    let a = quad::integrate_with_breaks(f1, &breaks, 0.0, 1e-14, 20_000)?;
    let b = quad::integrate_with_breaks(f2, &breaks, 0.0, 1e-13, 20_000)?;
    // Tail beyond U_MAX: (u e^u + m²)^{-1} < e^{-u}/u.
    let tail = if k == 1 { quad::expint_e1(U_MAX) } else { 0.0 };
    Ok((a.value + tail, b.value))
}

/// Residual of the gap equation: LHS − m²/(λK) − 1/(2λ).
pub fn gap_residual(m2: f64, lambda: f64, big_k: f64, regulator: Regulator) -> Result<f64> {
    Ok(gap_integral(m2, regulator)? - m2 / (lambda * big_k) - 0.5 / lambda)
}

fn gap_residual_derivative(m2: f64, lambda: f64, big_k: f64, regulator: Regulator) -> Result<f64> {
    let d = match regulator {
        Regulator::Sharp => -1.0 / (8.0 * PI * m2 * (1.0 + m2)),
        Regulator::Exponential => -exp_radial_integrals(m2, 1)?.1 / (8.0 * PI),
    };
    Ok(d - 1.0 / (lambda * big_k))
}

/// Solve the gap equation for m².
///
/// Bisection on ln m² over the bracket, then Newton polish to relative 1e-12.
pub fn solve_gap_equation(lambda: f64, big_k: f64, regulator: Regulator) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", "must be positive"));
    }
    if !(big_k > 0.0) {
        return Err(Error::param("K", "must be positive"));
    }
    let r = |m2: f64| gap_residual(m2, lambda, big_k, regulator);
    let (mut lo, mut hi) = (GAP_BRACKET_LO.ln(), GAP_BRACKET_HI.ln());
    let (r_lo, r_hi) = (r(GAP_BRACKET_LO)?, r(GAP_BRACKET_HI)?);
    if !(r_lo > 0.0 && r_hi < 0.0) {
        return Err(Error::NoRoot {
            lo: GAP_BRACKET_LO,
            hi: GAP_BRACKET_HI,
            lambda,
            big_k,
        });
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if r(mid.exp())? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut m2 = (0.5 * (lo + hi)).exp();
    for _ in 0..20 {
        let step = r(m2)? / gap_residual_derivative(m2, lambda, big_k, regulator)?;
        let next = m2 - step;
        if !(next > lo.exp() * 0.5 && next < hi.exp() * 2.0) {
            break;
        }
        m2 = next;
        if (step / m2).abs() < 1e-14 {
            break;
        }
    }
    Ok(m2)
}

/// Coupling λ that makes a given mass solve the gap equation (closed form).
pub fn lambda_for_mass(m: f64, big_k: f64, regulator: Regulator) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::param("m", "must lie in (0, 1)"));
    }
    let m2 = m * m;
    let i = gap_integral(m2, regulator)?;
    // i = m²/(λK) + 1/(2λ)  =>  λ = (m²/K + 1/2) / i
    Ok((m2 / big_k + 0.5) / i)
}

fn validate_n(big_n: u64) -> Result<()> {
    if big_n < 2 {
        return Err(Error::param("N", "must be at least 2"));
    }
    if big_n % 2 != 0 {
        return Err(Error::param("N", "must be even"));
    }
    Ok(())
}

/// Fill all derived constants from (λ, K, N, regulator).
pub fn derive_params(lambda: f64, big_k: f64, big_n: u64, regulator: Regulator) -> Result<ModelParams> {
    validate_n(big_n)?;
    let m2 = solve_gap_equation(lambda, big_k, regulator)?;
    Ok(assemble(lambda, big_k, big_n, m2.sqrt(), regulator))
}

/// Parameters for a prescribed mass, with λ chosen so the gap equation holds.
pub fn params_for_mass(m: f64, big_k: f64, big_n: u64, regulator: Regulator) -> Result<ModelParams> {
    validate_n(big_n)?;
    let lambda = lambda_for_mass(m, big_k, regulator)?;
    Ok(assemble(lambda, big_k, big_n, m, regulator))
}

fn assemble(lambda: f64, big_k: f64, big_n: u64, m: f64, regulator: Regulator) -> ModelParams {
    let n = big_n as f64;
    ModelParams {
        lambda,
        big_k,
        big_n,
        g: (lambda * big_k / n).sqrt(),
        m,
        epsilon: n.powf(-0.4),
        corridor_m: 2.0 / m * n.ln(),
        regulator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_mass_values() {
        assert!((leading_mass(4.0 * PI) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((leading_mass(1.0) - 3.487_342_356_209_39e-6).abs() < 1e-17);
    }

    #[test]
    fn odd_n_rejected() {
        assert!(derive_params(1.0, 1.0, 7, Regulator::Exponential).is_err());
        assert!(derive_params(1.0, 1.0, 0, Regulator::Exponential).is_err());
    }

    #[test]
    fn lambda_for_mass_inverts_gap() {
        let lam = lambda_for_mass(0.1, 1.0, Regulator::Exponential).unwrap();
        let m2 = solve_gap_equation(lam, 1.0, Regulator::Exponential).unwrap();
        assert!((m2.sqrt() - 0.1).abs() < 1e-10);
    }

    #[test]
    fn no_root_for_tiny_coupling() {
        assert!(matches!(
            solve_gap_equation(0.05, 1.0, Regulator::Exponential),
            Err(Error::NoRoot { .. })
        ));
    }
}
