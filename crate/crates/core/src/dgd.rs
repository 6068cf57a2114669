//! The DGD operator `phi(w) = (M (x) I_d) w - eta * grad fbar(w)` and its
//! E-fold composition.

use crate::error::{Error, Result};
use crate::network::MixingMatrix;
use crate::streaming::WeightedObjective;

/// Stacked network iterate of length `n_agents * dim`, agent-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedIterate {
    data: Vec<f64>,
    n_agents: usize,
    dim: usize,
}

impl StackedIterate {
    pub fn zeros(n_agents: usize, dim: usize) -> Self {
        StackedIterate {
            data: vec![0.0; n_agents * dim],
            n_agents,
            dim,
        }
    }

    pub fn from_vec(n_agents: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_agents * dim {
            return Err(Error::logic(format!(
                "stacked iterate needs {} entries, got {}",
                n_agents * dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("stacked iterate has non-finite entries".into()));
        }
        Ok(StackedIterate { data, n_agents, dim })
    }

    /// `1 (x) v`: every agent holds `v`.
    pub fn consensus(n_agents: usize, v: &[f64]) -> Self {
        StackedIterate {
            data: v.repeat(n_agents),
            n_agents,
            dim: v.len(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Euclidean distance to another iterate of the same shape.
    pub fn distance(&self, other: &StackedIterate) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Step size together with whether it passed the contraction guard
/// `0 < eta <= (1 + lambda_N) / (L + mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    eta: f64,
    within_guard: bool,
}

impl StepSize {
    /// Accepts `eta` only inside the contraction range.
    pub fn checked(eta: f64, mix: &MixingMatrix, mu: f64, l_smooth: f64) -> Result<Self> {
        let max = mix.max_stable_step(mu, l_smooth)?;
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::param(format!("step size must be positive, got {eta}")));
        }
        if eta > max {
            return Err(Error::param(format!(
                "step size {eta} exceeds the stable bound {max}"
            )));
        }
        Ok(StepSize {
            eta,
            within_guard: true,
        })
    }

    /// Accepts any positive `eta`. Outside the contraction range a warning is
    /// logged and the contraction guarantees no longer apply.
    pub fn with_override(eta: f64, mix: &MixingMatrix, mu: f64, l_smooth: f64) -> Result<Self> {
        match Self::checked(eta, mix, mu, l_smooth) {
            Ok(s) => Ok(s),
            Err(Error::Parameter(_)) if eta.is_finite() && eta > 0.0 => {
                log::warn!(
                    "step size {eta} is above (1 + lambda_N)/(L + mu) = {}; DGD map is not guaranteed to contract",
                    mix.max_stable_step(mu, l_smooth)?
                );
                Ok(StepSize {
                    eta,
                    within_guard: false,
                })
            }
            Err(e) => Err(e),
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn within_guard(&self) -> bool {
        self.within_guard
    }
}

/// Blockwise mixing `out_n = sum_m M[n, m] w_m`.
pub fn mix_blocks(mix: &MixingMatrix, w: &[f64], dim: usize, out: &mut [f64]) {
    let n = mix.n_agents();
    let m = mix.entries();
    for a in 0..n {
        let dst = &mut out[a * dim..(a + 1) * dim];
        dst.iter_mut().for_each(|x| *x = 0.0);
        for b in 0..n {
            let weight = m[(a, b)];
            if weight == 0.0 {
                continue;
            }
            let src = &w[b * dim..(b + 1) * dim];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += weight * s;
            }
        }
    }
}

/// DGD engine with reusable scratch buffers; the inner loop allocates nothing.
#[derive(Debug, Clone)]
pub struct Dgd {
    step: StepSize,
    mixed: Vec<f64>,
    grad: Vec<f64>,
}

impl Dgd {
    pub fn new(step: StepSize) -> Self {
        Dgd {
            step,
            mixed: Vec::new(),
            grad: Vec::new(),
        }
    }

    pub fn step(&self) -> StepSize {
        self.step
    }

    fn check_shapes<O: WeightedObjective + ?Sized>(
        mix: &MixingMatrix,
        obj: &O,
        w: &StackedIterate,
    ) -> Result<()> {
        if mix.n_agents() != obj.n_agents()
            || w.n_agents() != obj.n_agents()
            || w.dim() != obj.dim()
        {
            return Err(Error::logic(format!(
                "shape mismatch: mixing {} agents, objective {}x{}, iterate {}x{}",
                mix.n_agents(),
                obj.n_agents(),
                obj.dim(),
                w.n_agents(),
                w.dim()
            )));
        }
        Ok(())
    }

    /// One application of `phi`, in place.
    pub fn phi_in_place<O: WeightedObjective + ?Sized>(
        &mut self,
        mix: &MixingMatrix,
        obj: &O,
        w: &mut StackedIterate,
    ) -> Result<()> {
        Self::check_shapes(mix, obj, w)?;
        self.apply(mix, obj, w);
        Ok(())
    }

    fn apply<O: WeightedObjective + ?Sized>(&mut self, mix: &MixingMatrix, obj: &O, w: &mut StackedIterate) {
        let len = w.data.len();
        self.mixed.resize(len, 0.0);
        self.grad.resize(len, 0.0);
        mix_blocks(mix, &w.data, w.dim, &mut self.mixed);
        obj.gradient_into(&w.data, &mut self.grad);
        let eta = self.step.eta;
        for ((x, m), g) in w.data.iter_mut().zip(&self.mixed).zip(&self.grad) {
            *x = m - eta * g;
        }
    }

    /// `E` applications of `phi`, in place.
    pub fn run_inner<O: WeightedObjective + ?Sized>(
        &mut self,
        mix: &MixingMatrix,
        obj: &O,
        inner_steps: usize,
        w: &mut StackedIterate,
    ) -> Result<()> {
        if inner_steps < 1 {
            return Err(Error::param("number of inner steps E must be >= 1"));
        }
        Self::check_shapes(mix, obj, w)?;
        for _ in 0..inner_steps {
            self.apply(mix, obj, w);
        }
        if w.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("DGD iterate diverged to non-finite values".into()));
        }
        Ok(())
    }
}

/// `phi(w)` as a new iterate.
pub fn phi_step<O: WeightedObjective + ?Sized>(
    mix: &MixingMatrix,
    obj: &O,
    step: StepSize,
    w: &StackedIterate,
) -> Result<StackedIterate> {
    let mut out = w.clone();
    Dgd::new(step).phi_in_place(mix, obj, &mut out)?;
    Ok(out)
}

/// `Phi(w) = phi^E(w)` as a new iterate.
pub fn run_inner<O: WeightedObjective + ?Sized>(
    mix: &MixingMatrix,
    obj: &O,
    step: StepSize,
    inner_steps: usize,
    w: &StackedIterate,
) -> Result<StackedIterate> {
    let mut out = w.clone();
    Dgd::new(step).run_inner(mix, obj, inner_steps, &mut out)?;
    Ok(out)
}
