//! Stable semigroup `T_s` and resolvent `K = (Γ∂_x + Id)^{-1}` on grid functions.
//!
//! Per mode the resolvent is a convolution with a nonnegative unit-mass
//! exponential kernel: causal `(1/γ) e^{-(x-y)/γ}` on `x > y` for `γ > 0`,
//! anticausal `(1/|γ|) e^{-(y-x)/|γ|}` on `y > x` for `γ < 0`. Both are
//! evaluated by an exponential-integrator recurrence that is exact for
//! piecewise-linear right-hand sides, so stiff modes (`|γ| ≪ Δx`) need no
//! step restriction.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_len, Result};
use crate::function_space::{GridFunction, XGrid};
use crate::spectral::SpectralModel;

/// Direction in which a mode's recurrence runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// `γ > 0`: forward from `u(0) = 0`.
    Causal,
    /// `γ < 0`: backward from `u(x_max) = 0`.
    Anticausal,
}

/// Per-cell weights of the exact recurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellWeights {
    /// `e^{-Δx/|γ|}`
    pub decay: f64,
    /// weight of `f` at the node the sweep comes from
    pub far: f64,
    /// weight of `f` at the node being written
    pub near: f64,
}

impl CellWeights {
    /// Weights for a cell of length `dx` and time constant `tau = |γ|`.
    ///
    /// `u_new = decay·u_old + far·f_old + near·f_new`, from the closed-form
    /// moments of `e^{-s/τ}(a + b s)` over the cell.
    pub fn new(dx: f64, tau: f64) -> Self {
        let z = dx / tau;
        let decay = (-z).exp();
        let (far, near) = if z < 1e-3 {
            let z2 = z * z;
            (
                z * (0.5 - z / 3.0 + z2 / 8.0 - z2 * z / 30.0),
                z * (0.5 - z / 6.0 + z2 / 24.0 - z2 * z / 120.0),
            )
        } else {
            let p = -(-z).exp_m1() / z;
            (p - decay, 1.0 - p)
        };
        Self { decay, far, near }
    }
}

/// Precomputed recurrence weights for one model on one grid.
#[derive(Debug, Clone)]
pub struct ResolventPlan {
    grid: Arc<XGrid>,
    sweeps: Vec<Sweep>,
    cells: Vec<Vec<CellWeights>>,
}

impl ResolventPlan {
    pub fn new(model: &SpectralModel, grid: Arc<XGrid>) -> Self {
        let dxs: Vec<f64> = grid.points().windows(2).map(|w| w[1] - w[0]).collect();
        let sweeps = model
            .gammas()
            .map(|g| if g > 0.0 { Sweep::Causal } else { Sweep::Anticausal })
            .collect();
        let cells = model
            .gammas()
            .map(|g| dxs.iter().map(|&dx| CellWeights::new(dx, g.abs())).collect())
            .collect();
        Self { grid, sweeps, cells }
    }

    pub fn grid(&self) -> &Arc<XGrid> {
        &self.grid
    }

    pub fn sweep(&self, mode: usize) -> Sweep {
        self.sweeps[mode]
    }

    pub fn cells(&self, mode: usize) -> &[CellWeights] {
        &self.cells[mode]
    }

    /// Applies `K` to `f`, treating `f` as zero beyond `x_max`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        check_len(self.sweeps.len(), f.n_modes())?;
        if f.grid().points() != self.grid.points() {
            return Err(crate::Error::GridMismatch);
        }
        let mut out = GridFunction::zeros(f.grid().clone(), f.n_modes());
        out.rows_mut()
            .collect::<Vec<_>>()
            .into_par_iter()
            .zip(f.rows().collect::<Vec<_>>())
            .zip(self.sweeps.par_iter().zip(&self.cells))
            .for_each(|((u, f), (sweep, cells))| sweep_row(*sweep, cells, f, u));
        Ok(out)
    }
}

fn sweep_row(sweep: Sweep, cells: &[CellWeights], f: &[f64], u: &mut [f64]) {
    let n = u.len();
    match sweep {
        Sweep::Causal => {
            u[0] = 0.0;
            for k in 0..n - 1 {
                let c = cells[k];
                u[k + 1] = c.decay * u[k] + c.far * f[k] + c.near * f[k + 1];
            }
        }
        Sweep::Anticausal => {
            u[n - 1] = 0.0;
            for k in (0..n - 1).rev() {
                let c = cells[k];
                u[k] = c.decay * u[k + 1] + c.far * f[k + 1] + c.near * f[k];
            }
        }
    }
}

/// Trajectory `(T_s(x) h)_i = h_i e^{-x/γ_i}` of stable data `h`.
pub fn semigroup_apply(model: &SpectralModel, h: &[f64], grid: Arc<XGrid>) -> Result<GridFunction> {
    model.check_stable_support(h)?;
    let gammas: Vec<f64> = model.gammas().collect();
    Ok(GridFunction::from_fn(grid, model.len(), |i, x| {
        if gammas[i] > 0.0 && h[i] != 0.0 {
            h[i] * (-x / gammas[i]).exp()
        } else {
            0.0
        }
    }))
}

/// `K f` via a freshly built [`ResolventPlan`].
pub fn resolvent_apply(model: &SpectralModel, f: &GridFunction) -> Result<GridFunction> {
    check_len(model.len(), f.n_modes())?;
    ResolventPlan::new(model, f.grid().clone()).apply(f)
}

/// Second-order finite-difference derivative on a nonuniform grid.
pub fn derivative(points: &[f64], u: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n == 2 {
        let d = (u[1] - u[0]) / (points[1] - points[0]);
        return vec![d, d];
    }
    let mut du = vec![0.0; n];
    for k in 1..n - 1 {
        let h1 = points[k] - points[k - 1];
        let h2 = points[k + 1] - points[k];
        du[k] = -h2 / (h1 * (h1 + h2)) * u[k - 1]
            + (h2 - h1) / (h1 * h2) * u[k]
            + h1 / (h2 * (h1 + h2)) * u[k + 1];
    }
    let (h1, h2) = (points[1] - points[0], points[2] - points[1]);
    du[0] = -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * u[0] + (h1 + h2) / (h1 * h2) * u[1]
        - h1 / (h2 * (h1 + h2)) * u[2];
    let (h1, h2) = (points[n - 2] - points[n - 3], points[n - 1] - points[n - 2]);
    du[n - 1] = h2 / (h1 * (h1 + h2)) * u[n - 3] - (h1 + h2) / (h1 * h2) * u[n - 2]
        + (2.0 * h2 + h1) / (h2 * (h1 + h2)) * u[n - 1];
    du
}

/// `γ_i u_i' + u_i − f_i` with `u'` by second-order differences.
pub fn ode_residual(model: &SpectralModel, u: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    check_len(model.len(), u.n_modes())?;
    u.check_compatible(f)?;
    let pts = u.grid().points();
    let mut out = GridFunction::zeros(u.grid().clone(), u.n_modes());
    for (i, gamma) in model.gammas().enumerate() {
        let du = derivative(pts, u.row(i));
        let (ui, fi) = (u.row(i), f.row(i));
        for (k, r) in out.row_mut(i).iter_mut().enumerate() {
            *r = gamma * du[k] + ui[k] - fi[k];
        }
    }
    Ok(out)
}
