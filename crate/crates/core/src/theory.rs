//! Closed-form constants and tracking-error envelopes.
//!
//! Notation follows the code: `alpha = (1 - eta mu)^E` is the per-time-step
//! contraction of the E-fold DGD map, `G = 2 L C sqrt(N kappa)` bounds the
//! weighted gradients at fixed points and minimizers, and
//! `Lambda = 1 / (1 - lambda2)` is the topology factor. The minimizer bound
//! `C` is lifted from the per-coordinate box `[-C_max, C_max]^d` to the
//! Euclidean norm, `C = C_max sqrt(d)`.

use crate::error::{Error, Result};
use crate::weighting::WeightScheme;

/// Inputs needed to build [`TheoryConstants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryInputs {
    pub mu: f64,
    pub l_smooth: f64,
    pub eta: f64,
    pub inner_steps: usize,
    pub c_max: f64,
    pub dim: usize,
    pub n_agents: usize,
    pub lambda2: f64,
    /// `|| w_0 - wtilde_1 ||`, measured per run.
    pub init_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub mu: f64,
    pub l_smooth: f64,
    pub kappa: f64,
    pub eta: f64,
    pub inner_steps: usize,
    pub alpha: f64,
    pub c_bound: f64,
    pub g: f64,
    pub lambda: f64,
    pub n_agents: usize,
    pub init_dist: f64,
}

impl TheoryConstants {
    pub fn new(inp: TheoryInputs) -> Result<Self> {
        crate::network::check_moduli(inp.mu, inp.l_smooth)?;
        if !(inp.eta.is_finite() && inp.eta > 0.0) {
            return Err(Error::param(format!("step size must be positive, got {}", inp.eta)));
        }
        if inp.inner_steps < 1 || inp.dim < 1 || inp.n_agents < 1 {
            return Err(Error::param("E, dim and n_agents must be >= 1"));
        }
        if !(inp.c_max.is_finite() && inp.c_max > 0.0) {
            return Err(Error::param("C_max must be positive"));
        }
        if inp.n_agents >= 2 && !(inp.lambda2 < 1.0 && inp.lambda2 > -1.0) {
            return Err(Error::param(format!("lambda2 must lie in (-1, 1), got {}", inp.lambda2)));
        }
        if !(inp.init_dist.is_finite() && inp.init_dist >= 0.0) {
            return Err(Error::param("initial distance must be finite and >= 0"));
        }
        let kappa = inp.l_smooth / inp.mu;
        let c_bound = inp.c_max * (inp.dim as f64).sqrt();
        let g = 2.0 * inp.l_smooth * c_bound * (inp.n_agents as f64 * kappa).sqrt();
        let lambda = if inp.n_agents >= 2 {
            1.0 / (1.0 - inp.lambda2)
        } else {
            f64::INFINITY
        };
        Ok(TheoryConstants {
            mu: inp.mu,
            l_smooth: inp.l_smooth,
            kappa,
            eta: inp.eta,
            inner_steps: inp.inner_steps,
            alpha: contraction_factor(inp.eta, inp.mu, inp.inner_steps),
            c_bound,
            g,
            lambda,
            n_agents: inp.n_agents,
            init_dist: inp.init_dist,
        })
    }

    /// Same constants with `G` replaced, e.g. by a measured gradient maximum.
    /// Diagnostic only.
    pub fn with_gradient_bound(&self, g: f64) -> Self {
        TheoryConstants { g, ..*self }
    }

    /// `eta kappa Lambda G`; zero for a single agent, whose fixed point is the
    /// minimizer.
    pub fn bias_floor(&self) -> f64 {
        self.bias_bound(self.g)
    }

    /// `eta kappa Lambda ||grad||`, zero for a single agent.
    pub fn bias_bound(&self, grad_norm: f64) -> f64 {
        if self.n_agents == 1 {
            0.0
        } else {
            self.eta * self.kappa * self.lambda * grad_norm
        }
    }

    /// `C sqrt(N kappa)`, the bound on every fixed point's norm.
    pub fn fixed_point_norm_bound(&self) -> f64 {
        self.c_bound * (self.n_agents as f64 * self.kappa).sqrt()
    }

    /// `2 G / mu`.
    pub fn drift_scale(&self) -> f64 {
        2.0 * self.g / self.mu
    }

    fn transient(&self, t: usize) -> f64 {
        self.alpha.powi(t as i32) * self.init_dist
    }
}

/// `(1 - eta mu)^E`.
pub fn contraction_factor(eta: f64, mu: f64, inner_steps: usize) -> f64 {
    (1.0 - eta * mu).powi(inner_steps as i32)
}

// alpha = 0 is admitted: it is the exact value when eta mu = 1 and the
// floating-point value of (1 - eta mu)^E for very large E.
fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::param(format!("contraction factor must lie in [0, 1), got {alpha}")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    WeightScheme::discounted(gamma).map(|_| ())
}

/// `S(t) = sum_{i=1}^{t-1} alpha^(t-i) / (i + 1)`, by direct summation.
pub fn uniform_partial_sum(alpha: f64, t: usize) -> f64 {
    (1..t).map(|i| alpha.powi((t - i) as i32) / (i + 1) as f64).sum()
}

/// `S_gamma(t) = sum_{i=1}^{t-1} (1 - gamma) alpha^(t-i) / (1 - gamma^(i+1))`,
/// by direct summation.
pub fn discounted_partial_sum(alpha: f64, gamma: f64, t: usize) -> f64 {
    (1..t)
        .map(|i| (1.0 - gamma) * alpha.powi((t - i) as i32) / (1.0 - gamma.powi((i + 1) as i32)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformConstants {
    pub t0: usize,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountedConstants {
    pub t0: usize,
    pub a_gamma: f64,
    /// `(1 - gamma) alpha / (1 - alpha)`, the limit of `S_gamma(t)`.
    pub floor: f64,
}

/// `t0 = max(ceil(2 alpha / (1 - alpha)), 1)` and
/// `A = max(t0 S(t0), 2 alpha / (1 - alpha))`, so that `S(t) <= A / t` for
/// `t >= t0`.
pub fn uniform_constants(alpha: f64) -> Result<UniformConstants> {
    check_alpha(alpha)?;
    let ratio = 2.0 * alpha / (1.0 - alpha);
    let t0 = (ratio.ceil() as usize).max(1);
    let a = (t0 as f64 * uniform_partial_sum(alpha, t0)).max(ratio);
    Ok(UniformConstants { t0, a })
}

/// `t0 = max(ceil(ln((1 - alpha) / (1 + alpha - 2 gamma alpha)) / ln gamma), 1)`,
/// `A_gamma = max((1 - gamma^t0) S_gamma(t0) / (1 - gamma), 2 alpha / (1 - alpha))`,
/// so that `S_gamma(t) <= A_gamma (1 - gamma) / (1 - gamma^t)` for `t >= t0`.
///
/// Fails with [`Error::Degenerate`] when the logarithm's argument is not in
/// `(0, 1)`. The argument equals 1 only at `alpha = 0`, where `t0 = 1`.
pub fn discounted_constants(alpha: f64, gamma: f64) -> Result<DiscountedConstants> {
    check_alpha(alpha)?;
    check_gamma(gamma)?;
    let denom = 1.0 + alpha - 2.0 * gamma * alpha;
    let arg = (1.0 - alpha) / denom;
    if alpha == 0.0 {
        return Ok(DiscountedConstants { t0: 1, a_gamma: 0.0, floor: 0.0 });
    }
    if !(denom > 0.0 && arg > 0.0 && arg < 1.0) {
        return Err(Error::Degenerate(format!(
            "(alpha={alpha}, gamma={gamma}): ln((1-alpha)/(1+alpha-2*gamma*alpha)) needs an argument in (0,1), got {arg}"
        )));
    }
    let raw = (arg.ln() / gamma.ln()).ceil();
    if !raw.is_finite() {
        return Err(Error::Degenerate(format!(
            "(alpha={alpha}, gamma={gamma}): t0 is not finite"
        )));
    }
    let t0 = (raw as usize).max(1);
    let s = discounted_partial_sum(alpha, gamma, t0);
    let a_gamma = ((1.0 - gamma.powi(t0 as i32)) * s / (1.0 - gamma)).max(2.0 * alpha / (1.0 - alpha));
    Ok(DiscountedConstants {
        t0,
        a_gamma,
        floor: (1.0 - gamma) * alpha / (1.0 - alpha),
    })
}

fn check_t0(t: usize, t0: usize) -> Result<()> {
    if t < t0 {
        Err(Error::Precondition(format!("bound holds for t >= t0 = {t0}, got t = {t}")))
    } else {
        Ok(())
    }
}

/// `alpha^t ||w_0 - wtilde_1|| + (2G/mu) A / t + eta kappa Lambda G`, `t >= t0`.
pub fn bound_uniform(tc: &TheoryConstants, uc: &UniformConstants, t: usize) -> Result<f64> {
    check_t0(t, uc.t0)?;
    Ok(tc.transient(t) + tc.drift_scale() * uc.a / t as f64 + tc.bias_floor())
}

/// `alpha^t ||w_0 - wtilde_1|| + (2G/mu) A_gamma (1-gamma)/(1-gamma^t) + eta kappa Lambda G`,
/// `t >= t0`.
pub fn bound_discounted(tc: &TheoryConstants, dc: &DiscountedConstants, gamma: f64, t: usize) -> Result<f64> {
    check_t0(t, dc.t0)?;
    Ok(tc.transient(t)
        + tc.drift_scale() * dc.a_gamma * (1.0 - gamma) / (1.0 - gamma.powi(t as i32))
        + tc.bias_floor())
}

/// `limsup TE <= (2G/mu) (1-gamma) alpha / (1-alpha) + eta kappa Lambda G`.
pub fn ate_discounted(tc: &TheoryConstants, dc: &DiscountedConstants) -> f64 {
    tc.drift_scale() * dc.floor + tc.bias_floor()
}

/// `2G / (mu (t + 1))`, the fixed-point drift envelope for `t -> t+1`.
pub fn drift_bound_uniform(g: f64, mu: f64, t: usize) -> f64 {
    2.0 * g / (mu * (t as f64 + 1.0))
}

/// `(2G/mu) (1 - gamma) / (1 - gamma^(t+1))`.
pub fn drift_bound_discounted(g: f64, mu: f64, gamma: f64, t: usize) -> f64 {
    2.0 * g / mu * (1.0 - gamma) / (1.0 - gamma.powi(t as i32 + 1))
}

/// Scheme-specific constants bundled for evaluation along a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeBound {
    Uniform(UniformConstants),
    Discounted { gamma: f64, constants: DiscountedConstants },
}

impl SchemeBound {
    pub fn new(scheme: WeightScheme, alpha: f64) -> Result<Self> {
        Ok(match scheme {
            WeightScheme::Uniform => SchemeBound::Uniform(uniform_constants(alpha)?),
            WeightScheme::Discounted { gamma } => SchemeBound::Discounted {
                gamma,
                constants: discounted_constants(alpha, gamma)?,
            },
        })
    }

    pub fn t0(&self) -> usize {
        match self {
            SchemeBound::Uniform(u) => u.t0,
            SchemeBound::Discounted { constants, .. } => constants.t0,
        }
    }

    /// Tracking-error bound at `t`; `None` before `t0`.
    pub fn te_bound(&self, tc: &TheoryConstants, t: usize) -> Option<f64> {
        match self {
            SchemeBound::Uniform(u) => bound_uniform(tc, u, t).ok(),
            SchemeBound::Discounted { gamma, constants } => bound_discounted(tc, constants, *gamma, t).ok(),
        }
    }

    /// FPTE part of the bound at `t >= t0` (no bias term); `None` before `t0`.
    pub fn fpte_bound(&self, tc: &TheoryConstants, t: usize) -> Option<f64> {
        self.te_bound(tc, t).map(|b| b - tc.bias_floor())
    }

    /// Bound before the summation constants are applied:
    /// `alpha^t d0 + (2G/mu) S(t) + bias`, with `S` the scheme's partial sum
    /// (with the `(1 - gamma)` factor for discounted weights). Valid for all
    /// `t >= 1`.
    pub fn unrolled_bound(&self, tc: &TheoryConstants, t: usize) -> f64 {
        let s = match self {
            SchemeBound::Uniform(_) => uniform_partial_sum(tc.alpha, t),
            SchemeBound::Discounted { gamma, .. } => discounted_partial_sum(tc.alpha, *gamma, t),
        };
        tc.transient(t) + tc.drift_scale() * s + tc.bias_floor()
    }

    /// Envelope on `|| wtilde_{t+1} - wtilde_t ||`.
    pub fn drift_envelope(&self, tc: &TheoryConstants, t: usize) -> f64 {
        match self {
            SchemeBound::Uniform(_) => drift_bound_uniform(tc.g, tc.mu, t),
            SchemeBound::Discounted { gamma, .. } => drift_bound_discounted(tc.g, tc.mu, *gamma, t),
        }
    }

    /// `limsup` of the FPTE envelope.
    pub fn fpte_limsup(&self, tc: &TheoryConstants) -> f64 {
        match self {
            SchemeBound::Uniform(_) => 0.0,
            SchemeBound::Discounted { constants, .. } => tc.drift_scale() * constants.floor,
        }
    }

    /// `limsup` of the TE envelope.
    pub fn te_limsup(&self, tc: &TheoryConstants) -> f64 {
        self.fpte_limsup(tc) + tc.bias_floor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_constants(e: usize) -> TheoryConstants {
        TheoryConstants::new(TheoryInputs {
            mu: 0.01,
            l_smooth: 0.1,
            eta: 0.05,
            inner_steps: e,
            c_max: 10.0,
            dim: 50,
            n_agents: 30,
            lambda2: 0.9,
            init_dist: 100.0,
        })
        .unwrap()
    }

    #[test]
    fn uniform_constants_alpha_third() {
        let u = uniform_constants(1.0 / 3.0).unwrap();
        assert_eq!(u.t0, 1);
        assert_eq!(uniform_partial_sum(1.0 / 3.0, 1), 0.0);
        assert!((u.a - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_constants_tiny_alpha() {
        let alpha = 1e-9;
        let u = uniform_constants(alpha).unwrap();
        assert_eq!(u.t0, 1);
        assert!((u.a - 2.0 * alpha / (1.0 - alpha)).abs() < 1e-24);
    }

    #[test]
    fn alpha_out_of_range() {
        for a in [1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(uniform_constants(a), Err(Error::Parameter(_))));
            assert!(discounted_constants(a, 0.5).is_err());
        }
        assert!(discounted_constants(0.5, 1.0).is_err());
    }

    #[test]
    fn paper_discounted_floor() {
        let alpha = 0.9995f64.powi(5);
        assert!((alpha - 0.997503).abs() < 1e-6);
        let dc = discounted_constants(alpha, 0.7).unwrap();
        // 0.3 * alpha / (1 - alpha) with 1 - alpha = 0.0025 - 0.0000025 + ...
        assert!((dc.floor - 119.82006).abs() < 1e-4, "{}", dc.floor);
        assert_eq!(dc.t0, 16);
    }

    #[test]
    fn zero_alpha_is_admitted() {
        let u = uniform_constants(0.0).unwrap();
        assert_eq!((u.t0, u.a), (1, 0.0));
        let dc = discounted_constants(0.0, 0.7).unwrap();
        assert_eq!((dc.t0, dc.a_gamma, dc.floor), (1, 0.0, 0.0));
        assert_eq!(contraction_factor(0.1, 0.1, 100_000), 0.0);
    }

    #[test]
    fn tiny_alpha_floor_vanishes() {
        let dc = discounted_constants(1e-12, 0.7).unwrap();
        assert!(dc.floor < 1e-11);
        assert_eq!(dc.t0, 1);
    }

    #[test]
    fn constants_from_raw_parameters() {
        let tc = paper_constants(5);
        assert!((tc.kappa - 10.0).abs() < 1e-12);
        assert!((tc.alpha - 0.9995f64.powi(5)).abs() < 1e-15);
        let c = 10.0 * 50f64.sqrt();
        assert!((tc.g - 2.0 * 0.1 * c * 300f64.sqrt()).abs() < 1e-9);
        assert!((tc.lambda - 10.0).abs() < 1e-9);
        assert!((tc.bias_floor() - 0.05 * 10.0 * 10.0 * tc.g).abs() < 1e-9);
    }

    #[test]
    fn uniform_bound_structure() {
        let tc = paper_constants(10);
        let uc = uniform_constants(tc.alpha).unwrap();
        assert!(bound_uniform(&tc, &uc, uc.t0 - 1).is_err());
        let far = bound_uniform(&tc, &uc, 1 << 30).unwrap();
        assert!((far - tc.bias_floor()).abs() / tc.bias_floor() < 1e-3);
        let t = 1 << 20;
        let m1 = bound_uniform(&tc, &uc, t).unwrap() - tc.bias_floor();
        let m2 = bound_uniform(&tc, &uc, 2 * t).unwrap() - tc.bias_floor();
        assert!((m1 / m2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn discounted_bound_limit_and_monotonicity() {
        let tc = paper_constants(5);
        let dc = discounted_constants(tc.alpha, 0.7).unwrap();
        let far = bound_discounted(&tc, &dc, 0.7, 100_000).unwrap();
        let limit = tc.drift_scale() * dc.a_gamma * 0.3 + tc.bias_floor();
        assert!((far - limit).abs() / limit < 1e-12);
        let mut prev = f64::INFINITY;
        for t in dc.t0..2000 {
            let b = bound_discounted(&tc, &dc, 0.7, t).unwrap();
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn drift_envelopes() {
        assert!(drift_bound_uniform(10.0, 0.1, 1 << 40) < 1e-9);
        let lim = drift_bound_discounted(10.0, 0.1, 0.7, 10_000);
        assert!((lim - 200.0 * 0.3).abs() < 1e-9);
        assert!((drift_bound_uniform(10.0, 0.1, 1) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_decreases_in_e_and_eta() {
        let mut prev = 1.0;
        for e in 1..20 {
            let a = contraction_factor(0.05, 0.01, e);
            assert!(a < prev);
            prev = a;
        }
        let mut prev = 1.0;
        for k in 1..20 {
            let a = contraction_factor(0.01 * k as f64, 0.01, 5);
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn single_agent_bias_is_zero() {
        let tc = TheoryConstants::new(TheoryInputs {
            n_agents: 1,
            lambda2: 1.0,
            ..TheoryInputs {
                mu: 0.01,
                l_smooth: 0.1,
                eta: 0.05,
                inner_steps: 1,
                c_max: 10.0,
                dim: 2,
                n_agents: 1,
                lambda2: 1.0,
                init_dist: 0.0,
            }
        })
        .unwrap();
        assert!(tc.lambda.is_infinite());
        assert_eq!(tc.bias_floor(), 0.0);
    }

    #[test]
    fn unrolled_bound_dominates_closed_form_from_t0() {
        let tc = paper_constants(10);
        for scheme in [WeightScheme::Uniform, WeightScheme::discounted(0.7).unwrap()] {
            let sb = SchemeBound::new(scheme, tc.alpha).unwrap();
            for t in sb.t0()..sb.t0() + 500 {
                assert!(sb.unrolled_bound(&tc, t) <= sb.te_bound(&tc, t).unwrap() * (1.0 + 1e-12));
            }
        }
    }
}
