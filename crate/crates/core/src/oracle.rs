//! Exact reference quantities for the quadratic stream: the weighted global
//! minimizer, the DGD fixed point, and the error metrics built on them.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dgd::{mix_blocks, StackedIterate};
use crate::error::{Error, Result};
use crate::network::MixingMatrix;
use crate::streaming::{Accumulators, WeightedObjective};

/// Residual gate for the fixed-point solve.
pub const FP_RESIDUAL_TOL: f64 = 1e-8;

/// Errors of one iterate against the objective at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub t: usize,
    /// `|| w_t - 1 (x) wbar*_t ||`
    pub te: f64,
    /// `|| w_t - wtilde_t ||`
    pub fpte: f64,
    /// `|| wtilde_t - 1 (x) wbar*_t ||`
    pub bias: f64,
    /// `|| phi_t(wtilde_t) - wtilde_t ||`
    pub fp_residual: f64,
}

/// An [`ErrorRecord`] plus the reference points it was computed from.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub record: ErrorRecord,
    pub minimizer: Vec<f64>,
    pub fixed_point: StackedIterate,
    /// `|| grad fbar_t(1 (x) wbar*_t) ||`, the data-heterogeneity term of the
    /// bias bound.
    pub bias_gradient_norm: f64,
}

/// `wbar*_t = (sum_n Hbar_n)^-1 (sum_n bbar_n)`, coordinatewise.
pub fn global_minimizer(acc: &Accumulators) -> Result<Vec<f64>> {
    let h = acc.global_h();
    let b = acc.global_b();
    let mut out = Vec::with_capacity(h.len());
    for (j, (&hj, &bj)) in h.iter().zip(b).enumerate() {
        if !(hj > 0.0) || !hj.is_finite() {
            return Err(Error::Numerical(format!(
                "global curvature {hj} at coordinate {j} is not positive; accumulators are corrupted"
            )));
        }
        out.push(bj / hj);
    }
    Ok(out)
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("step size must be positive, got {eta}")))
    }
}

fn check_agents(mix: &MixingMatrix, acc: &Accumulators) -> Result<()> {
    if mix.n_agents() != acc.n_agents() {
        return Err(Error::logic(format!(
            "mixing matrix has {} agents, stream has {}",
            mix.n_agents(),
            acc.n_agents()
        )));
    }
    Ok(())
}

/// `|| phi(w) - w || = || (I - M) w + eta grad fbar(w) ||`.
pub fn fp_residual(mix: &MixingMatrix, acc: &Accumulators, eta: f64, w: &StackedIterate) -> f64 {
    let d = acc.dim();
    let x = w.as_slice();
    let mut mixed = vec![0.0; x.len()];
    let mut grad = vec![0.0; x.len()];
    mix_blocks(mix, x, d, &mut mixed);
    acc.gradient_into(x, &mut grad);
    x.iter()
        .zip(&mixed)
        .zip(&grad)
        .map(|((xi, mi), gi)| {
            let r = xi - mi + eta * gi;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// The unique fixed point of `phi(w) = (M (x) I_d) w - eta grad fbar(w)`.
///
/// It solves `((I - M) (x) I_d + eta blockdiag(Hbar_n)) w = eta bbar`. With
/// diagonal Hessians the system splits into one `N x N` symmetric positive
/// definite system per coordinate `j`:
/// `((I - M) + eta diag_n(Hbar_{n,j})) x_j = eta bbar_{., j}`,
/// each solved by Cholesky.
pub fn fixed_point(mix: &MixingMatrix, acc: &Accumulators, eta: f64) -> Result<StackedIterate> {
    check_eta(eta)?;
    check_agents(mix, acc)?;
    let n = acc.n_agents();
    let d = acc.dim();
    let h = acc.per_agent_h();
    let b = acc.per_agent_b();
    let laplacian = DMatrix::<f64>::identity(n, n) - mix.entries();
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        let mut k = laplacian.clone();
        for a in 0..n {
            k[(a, a)] += eta * h[a * d + j];
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|a| eta * b[a * d + j]));
        let chol = Cholesky::new(k).ok_or_else(|| {
            Error::Numerical(format!("fixed-point system for coordinate {j} is not positive definite"))
        })?;
        let x = chol.solve(&rhs);
        for a in 0..n {
            out[a * d + j] = x[a];
        }
    }
    let w = StackedIterate::from_vec(n, d, out)?;
    let r = fp_residual(mix, acc, eta, &w);
    if !(r <= FP_RESIDUAL_TOL) {
        return Err(Error::Numerical(format!(
            "fixed-point residual {r:e} exceeds {FP_RESIDUAL_TOL:e}"
        )));
    }
    Ok(w)
}

/// Explicit `M (x) I_d`.
pub fn kronecker_mixing(mix: &MixingMatrix, dim: usize) -> DMatrix<f64> {
    mix.entries().kronecker(&DMatrix::<f64>::identity(dim, dim))
}

/// Fixed point from the full `(N d) x (N d)` Kronecker system, solved by LU.
/// Reference path for cross-checking [`fixed_point`] on small instances.
pub fn fixed_point_kronecker(mix: &MixingMatrix, acc: &Accumulators, eta: f64) -> Result<StackedIterate> {
    check_eta(eta)?;
    check_agents(mix, acc)?;
    let n = acc.n_agents();
    let d = acc.dim();
    let len = n * d;
    let mut k = DMatrix::<f64>::identity(len, len) - kronecker_mixing(mix, d);
    for (idx, hk) in acc.per_agent_h().iter().enumerate() {
        k[(idx, idx)] += eta * hk;
    }
    let rhs = DVector::from_iterator(len, acc.per_agent_b().iter().map(|bk| eta * bk));
    let x = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Kronecker fixed-point system is singular".into()))?;
    StackedIterate::from_vec(n, d, x.iter().copied().collect())
}

/// Plain Banach iteration `w <- phi(w)` from zero. Reference only; production
/// paths use the direct solve.
pub fn banach_fixed_point(
    mix: &MixingMatrix,
    acc: &Accumulators,
    eta: f64,
    iterations: usize,
) -> Result<StackedIterate> {
    check_eta(eta)?;
    check_agents(mix, acc)?;
    let n = acc.n_agents();
    let d = acc.dim();
    let mut w = vec![0.0; n * d];
    let mut mixed = vec![0.0; n * d];
    let mut grad = vec![0.0; n * d];
    for _ in 0..iterations {
        mix_blocks(mix, &w, d, &mut mixed);
        acc.gradient_into(&w, &mut grad);
        for k in 0..w.len() {
            w[k] = mixed[k] - eta * grad[k];
        }
    }
    StackedIterate::from_vec(n, d, w)
}

/// `|| grad fbar_next(w) - grad fbar_prev(w) ||`, the right-hand side of the
/// fixed-point drift bound (before the `1/mu` factor).
pub fn gradient_gap(prev: &Accumulators, next: &Accumulators, w: &StackedIterate) -> Result<f64> {
    let a = prev.weighted_gradient(w.as_slice())?;
    let b = next.weighted_gradient(w.as_slice())?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Full error decomposition of `w` against the objective held in `acc`.
pub fn measure(
    t: usize,
    w: &StackedIterate,
    mix: &MixingMatrix,
    acc: &Accumulators,
    eta: f64,
) -> Result<Measurement> {
    let fp = fixed_point(mix, acc, eta)?;
    measure_with_fixed_point(t, w, mix, acc, eta, fp)
}

/// [`measure`] with a fixed point already solved for the same objective.
pub fn measure_with_fixed_point(
    t: usize,
    w: &StackedIterate,
    mix: &MixingMatrix,
    acc: &Accumulators,
    eta: f64,
    fixed_point: StackedIterate,
) -> Result<Measurement> {
    if w.n_agents() != acc.n_agents() || w.dim() != acc.dim() || fixed_point.as_slice().len() != w.as_slice().len() {
        return Err(Error::logic("iterate shape does not match the stream"));
    }
    let minimizer = global_minimizer(acc)?;
    let stacked_min = StackedIterate::consensus(acc.n_agents(), &minimizer);
    let grad = acc.weighted_gradient(stacked_min.as_slice())?;
    let bias_gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let record = ErrorRecord {
        t,
        te: w.distance(&stacked_min),
        fpte: w.distance(&fixed_point),
        bias: fixed_point.distance(&stacked_min),
        fp_residual: fp_residual(mix, acc, eta, &fixed_point),
    };
    Ok(Measurement {
        record,
        minimizer,
        fixed_point,
        bias_gradient_norm,
    })
}
