//! Fixed-point solve of `u = Φ(h,u) = T_s(·)h + K D_*(u,u)` on `ℝ₊` and the
//! diagnostics of the resulting stable-manifold graph.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bilinear::{BilinearMap, KernelSpec};
use crate::error::{check_len, Error, Result};
use crate::function_space::{check_beta, weighted_norm, GridFunction, GridSpec, XGrid};
use crate::linear_ops::{derivative, ode_residual, semigroup_apply, ResolventPlan};
use crate::spectral::{ModelSpec, Side, SpectralModel, SpectralVector};

/// Update-norm increases in a row that count as divergence.
const DIVERGENCE_STREAK: usize = 5;
const QUAD_NORM_SAMPLES: usize = 24;

/// Optional solver settings; unset fields take model-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub eps1: Option<f64>,
    #[serde(default)]
    pub eps2: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// sampled `sup ‖K D_*(u,u)‖ / ‖u‖²` in the weighted norm, when it was needed
    pub quad_norm_estimate: Option<f64>,
    pub grid_nodes: usize,
    pub x_max: f64,
    pub grid_stretch: f64,
    #[serde(skip)]
    pub grid: Arc<XGrid>,
}

impl SolverConfig {
    /// Fill in defaults: `β = 1/(2γ_max)`, `ε₂ = 1/(8B)`, `ε₁ = ε₂/2`, `tol = 1e-10`,
    /// 200 iterations and [`XGrid::for_model`].
    pub fn resolve(model: &SpectralModel, d: &BilinearMap, opts: &SolverOptions) -> Result<Self> {
        check_len(model.len(), d.dim())?;
        let grid = Arc::new(match &opts.grid {
            Some(spec) => spec.build()?,
            None => XGrid::for_model(model),
        });
        Self::resolve_on(model, d, opts, grid)
    }

    /// As [`resolve`](Self::resolve) with the grid given explicitly.
    pub fn resolve_on(model: &SpectralModel, d: &BilinearMap, opts: &SolverOptions, grid: Arc<XGrid>) -> Result<Self> {
        let beta = opts.beta.unwrap_or(0.5 / model.gamma_max());
        check_beta(model, beta)?;
        let mut quad = None;
        let eps2 = match opts.eps2 {
            Some(e) => e,
            None => {
                let b = quad_norm_estimate(model, d, &grid, beta, 0)?;
                quad = Some(b);
                // any radius works for a vanishing quadratic term
                if b > 0.0 {
                    1.0 / (8.0 * b)
                } else {
                    1.0
                }
            }
        };
        let eps1 = opts.eps1.unwrap_or(eps2 / 2.0);
        let tol = opts.tol.unwrap_or(1e-10);
        let max_iter = opts.max_iter.unwrap_or(200);
        for (name, v) in [("eps1", eps1), ("eps2", eps2), ("tol", tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be positive and finite")));
            }
        }
        if max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(Self {
            beta,
            eps1,
            eps2,
            max_iter,
            tol,
            quad_norm_estimate: quad,
            grid_nodes: grid.len(),
            x_max: grid.x_max(),
            grid_stretch: grid.stretch(),
            grid,
        })
    }

    /// Same settings on another grid.
    pub fn with_grid(&self, grid: Arc<XGrid>) -> Self {
        Self { grid_nodes: grid.len(), x_max: grid.x_max(), grid_stretch: grid.stretch(), grid, ..self.clone() }
    }
}

/// `sup_u ‖K D_*(u,u)‖_{*,β} / ‖u‖²_{*,β}` over a fixed family of decaying test functions.
pub fn quad_norm_estimate(model: &SpectralModel, d: &BilinearMap, grid: &Arc<XGrid>, beta: f64, seed: u64) -> Result<f64> {
    if d.is_zero() {
        return Ok(0.0);
    }
    let plan = ResolventPlan::new(model, grid.clone());
    let gammas: Vec<f64> = model.gammas().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for s in 0..QUAD_NORM_SAMPLES {
        let amp: Vec<f64> = (0..model.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // even samples saturate the weight e^{-βx}, odd ones decay faster
        let rate: Vec<f64> = gammas
            .iter()
            .map(|g| beta + if s % 2 == 0 { 0.0 } else { rng.gen_range(0.0..2.0 / g.abs()) })
            .collect();
        let u = GridFunction::from_fn(grid.clone(), model.len(), |i, x| amp[i] * (-rate[i] * x).exp());
        let n = weighted_norm(model, &u, beta)?;
        if n == 0.0 {
            continue;
        }
        let q = plan.apply(&d.apply_pointwise(&u, &u)?)?;
        best = best.max(weighted_norm(model, &q, beta)? / (n * n));
    }
    Ok(best)
}

/// `Φ(h,·)` with the trajectory and resolvent weights cached.
pub struct Phi<'a> {
    d: &'a BilinearMap,
    plan: ResolventPlan,
    base: GridFunction,
}

impl<'a> Phi<'a> {
    pub fn new(model: &SpectralModel, d: &'a BilinearMap, h: &[f64], grid: Arc<XGrid>) -> Result<Self> {
        check_len(model.len(), d.dim())?;
        check_len(model.len(), h.len())?;
        let base = semigroup_apply(model, h, grid.clone())?;
        Ok(Self { d, plan: ResolventPlan::new(model, grid), base })
    }

    pub fn trajectory(&self) -> &GridFunction {
        &self.base
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.base.check_compatible(u)?;
        let q = self.plan.apply(&self.d.apply_pointwise(u, u)?)?;
        self.base.add_scaled(&q, 1.0)
    }
}

/// One evaluation of `Φ(h,u)` on the grid of `u`.
pub fn phi_apply(model: &SpectralModel, d: &BilinearMap, h: &[f64], u: &GridFunction) -> Result<GridFunction> {
    Phi::new(model, d, h, u.grid().clone())?.apply(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDiagnostic {
    pub x: Vec<f64>,
    /// `(d/dx⟨u,Γu⟩ + 2‖u‖²) / ‖u‖²`
    pub relative_defect: Vec<f64>,
    pub max_relative_defect: f64,
    /// mean of `−(d/dx⟨u,Γu⟩) / ‖u‖²`, which is 2 for the linear flow
    pub proportionality: f64,
}

/// Defect of `⟨u,Γu⟩′ = −2‖u‖²` at the nodes where `‖u‖ > 1e-10`.
pub fn lyapunov_diagnostic(model: &SpectralModel, u: &GridFunction) -> Result<LyapunovDiagnostic> {
    check_len(model.len(), u.n_modes())?;
    let pts = u.grid().points();
    let mut form = vec![0.0; pts.len()];
    let mut norm_sq = vec![0.0; pts.len()];
    for (m, row) in model.modes().iter().zip(u.rows()) {
        for (k, v) in row.iter().enumerate() {
            form[k] += m.mu * m.gamma * v * v;
            norm_sq[k] += m.mu * v * v;
        }
    }
    let dform = derivative(pts, &form);
    let mut out = LyapunovDiagnostic { x: Vec::new(), relative_defect: Vec::new(), max_relative_defect: 0.0, proportionality: 0.0 };
    let mut ratio_sum = 0.0;
    for k in 0..pts.len() {
        if norm_sq[k].sqrt() > 1e-10 {
            let rel = (dform[k] + 2.0 * norm_sq[k]) / norm_sq[k];
            out.x.push(pts[k]);
            out.relative_defect.push(rel);
            out.max_relative_defect = out.max_relative_defect.max(rel.abs());
            ratio_sum += -dform[k] / norm_sq[k];
        }
    }
    if !out.x.is_empty() {
        out.proportionality = ratio_sum / out.x.len() as f64;
    }
    Ok(out)
}

/// Least-squares slope of `−log‖u(x)‖` over the nodes in `window`.
pub fn decay_fit(model: &SpectralModel, u: &GridFunction, window: (f64, f64)) -> Result<f64> {
    check_len(model.len(), u.n_modes())?;
    let (a, b) = window;
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::WindowTooShort(format!("window [{a}, {b}] is empty")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &x) in u.grid().points().iter().enumerate() {
        if x < a || x > b {
            continue;
        }
        let n = model.norm_sq_unchecked(&u.column(k)).sqrt();
        if n > 0.0 {
            xs.push(x);
            ys.push(-n.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} usable nodes in [{a}, {b}]", xs.len())));
    }
    Ok(least_squares_slope(&xs, &ys))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Window used by [`solve`] for the reported decay rate.
pub fn default_decay_window(x_max: f64) -> (f64, f64) {
    (0.1 * x_max, 0.5 * x_max)
}

#[derive(Debug, Clone)]
pub struct ManifoldReport {
    pub u: GridFunction,
    pub h: SpectralVector,
    /// `Π_u u(0)`, zero on the stable coordinates
    pub graph_value: SpectralVector,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub update_norms: Vec<f64>,
    /// successive update-norm ratios
    pub contraction_estimates: Vec<f64>,
    pub fitted_beta: Option<f64>,
    pub lyapunov: LyapunovDiagnostic,
    /// sup of `|γu′ + u − D_*(u,u)|` over the nodes
    pub ode_residual_norm: f64,
    /// `max_i |(Π_s u(0))_i − h_i|`
    pub stable_trace_error: f64,
    /// `e^{−x_max/γ_max}`, the neglected tail of the slowest mode
    pub truncation_estimate: f64,
}

/// Serializable view of a [`ManifoldReport`] without the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub h: SpectralVector,
    pub graph_value: SpectralVector,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub update_norms: Vec<f64>,
    pub contraction_estimates: Vec<f64>,
    pub fitted_beta: Option<f64>,
    pub lyapunov_max_relative_defect: f64,
    pub lyapunov_proportionality: f64,
    pub ode_residual_norm: f64,
    pub stable_trace_error: f64,
    pub truncation_estimate: f64,
}

impl ManifoldReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            h: self.h.clone(),
            graph_value: self.graph_value.clone(),
            iterations: self.iterations,
            final_update_norm: self.final_update_norm,
            update_norms: self.update_norms.clone(),
            contraction_estimates: self.contraction_estimates.clone(),
            fitted_beta: self.fitted_beta,
            lyapunov_max_relative_defect: self.lyapunov.max_relative_defect,
            lyapunov_proportionality: self.lyapunov.proportionality,
            ode_residual_norm: self.ode_residual_norm,
            stable_trace_error: self.stable_trace_error,
            truncation_estimate: self.truncation_estimate,
        }
    }
}

/// Picard iteration `u_{k+1} = Φ(h, u_k)` from `u_0 = T_s(·)h`.
pub fn solve(model: &SpectralModel, d: &BilinearMap, h: &[f64], config: &SolverConfig) -> Result<ManifoldReport> {
    check_len(model.len(), h.len())?;
    model.check_stable_support(h)?;
    let hn = model.norm(h)?;
    if hn > config.eps1 {
        return Err(Error::RadiusExceeded { norm: hn, eps1: config.eps1 });
    }
    let phi = Phi::new(model, d, h, config.grid.clone())?;
    let mut u = phi.trajectory().clone();
    let mut update_norms: Vec<f64> = Vec::new();
    let mut streak = 0;
    let mut converged = false;
    for _ in 0..config.max_iter {
        let next = phi.apply(&u)?;
        let upd = weighted_norm(model, &next.sub(&u)?, config.beta)?;
        if let Some(&prev) = update_norms.last() {
            streak = if upd > prev { streak + 1 } else { 0 };
        }
        update_norms.push(upd);
        if !upd.is_finite() || streak >= DIVERGENCE_STREAK || weighted_norm(model, &next, config.beta)? > config.eps2 {
            return Err(Error::Diverged { iterations: update_norms.len(), update_norm: upd });
        }
        u = next;
        if upd < config.tol {
            converged = true;
            break;
        }
    }
    let last = *update_norms.last().expect("max_iter >= 1");
    if !converged {
        return Err(Error::NoConvergence { iterations: update_norms.len(), update_norm: last });
    }

    let u0 = u.column(0);
    let graph_value = model.project(&u0, Side::Unstable)?;
    let trace = model.project(&u0, Side::Stable)?;
    let stable_trace_error = trace.iter().zip(h).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let q = d.apply_pointwise(&u, &u)?;
    let ode_residual_norm = ode_residual(model, &u, &q)?.max_abs();
    let fitted_beta = decay_fit(model, &u, default_decay_window(config.grid.x_max())).ok();
    let lyapunov = lyapunov_diagnostic(model, &u)?;
    let contraction_estimates = update_norms.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
    Ok(ManifoldReport {
        u,
        h: SpectralVector(h.to_vec()),
        graph_value,
        iterations: update_norms.len(),
        final_update_norm: last,
        update_norms,
        contraction_estimates,
        fitted_beta,
        lyapunov,
        ode_residual_norm,
        stable_trace_error,
        truncation_estimate: (-config.grid.x_max() / model.gamma_max()).exp(),
    })
}

/// `‖Φ(h,u) − Φ(h,v)‖ / ‖u − v‖` for random `u, v` in the `ε₂` ball.
pub fn contraction_probe(
    model: &SpectralModel,
    d: &BilinearMap,
    h: &[f64],
    config: &SolverConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let phi = Phi::new(model, d, h, config.grid.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas: Vec<f64> = model.gammas().collect();
    let beta = config.beta;
    let sample = |rng: &mut ChaCha8Rng| -> Result<GridFunction> {
        let amp: Vec<f64> = (0..model.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rate: Vec<f64> = gammas.iter().map(|g| beta + rng.gen_range(0.0..1.0 / g.abs())).collect();
        let freq: Vec<f64> = (0..model.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let u = GridFunction::from_fn(config.grid.clone(), model.len(), |i, x| {
            amp[i] * (-rate[i] * x).exp() * (freq[i] * x).cos()
        });
        let n = weighted_norm(model, &u, beta)?;
        let r = config.eps2 * rng.gen_range(0.0..1.0f64).sqrt();
        Ok(if n > 0.0 { u.scaled(r / n) } else { u })
    };
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let u = sample(&mut rng)?;
        let v = sample(&mut rng)?;
        let den = weighted_norm(model, &u.sub(&v)?, beta)?;
        if den == 0.0 {
            continue;
        }
        let num = weighted_norm(model, &phi.apply(&u)?.sub(&phi.apply(&v)?)?, beta)?;
        ratios.push(num / den);
    }
    Ok(ratios)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangencyFit {
    pub slope: f64,
    pub scales: Vec<f64>,
    pub graph_norms: Vec<f64>,
}

/// Log–log slope of `‖𝒥_s(t·direction)‖` against `t`.
pub fn tangency_probe(
    model: &SpectralModel,
    d: &BilinearMap,
    direction: &[f64],
    scales: &[f64],
    config: &SolverConfig,
) -> Result<TangencyFit> {
    model.check_stable_support(direction)?;
    let mut norms = Vec::with_capacity(scales.len());
    for &t in scales {
        let h: Vec<f64> = direction.iter().map(|x| t * x).collect();
        let r = solve(model, d, &h, config)?;
        norms.push(model.norm(&r.graph_value)?);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        scales.iter().zip(&norms).filter(|(_, n)| **n >= 1e-14).map(|(t, n)| (t.ln(), n.ln())).unzip();
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("graph values vanish at the probed scales".into()));
    }
    Ok(TangencyFit { slope: least_squares_slope(&xs, &ys), scales: scales.to_vec(), graph_norms: norms })
}

/// Re-solve from `h′ = Π_s u(x₀)` on the shifted tail grid and compare with the
/// shifted original in the weighted norm. `x₀` snaps to the nearest node.
pub fn invariance_check(
    model: &SpectralModel,
    d: &BilinearMap,
    report: &ManifoldReport,
    config: &SolverConfig,
    x0: f64,
) -> Result<f64> {
    let grid = report.u.grid();
    let k0 = grid.nearest(x0);
    if x0.is_nan() || x0 <= 0.0 || k0 == 0 || grid.len() - k0 < 3 {
        return Err(Error::WindowTooShort(format!("x0 = {x0} leaves no usable tail on [0, {}]", grid.x_max())));
    }
    let tail = report.u.shifted_tail(k0)?;
    let h1 = model.project(&report.u.column(k0), Side::Stable)?;
    let again = solve(model, d, &h1, &config.with_grid(tail.grid().clone()))?;
    weighted_norm(model, &again.u.sub(&tail)?, config.beta)
}

/// Solve request as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRequest {
    pub model: ModelSpec,
    pub kernel: KernelSpec,
    pub h: Vec<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub eps1: Option<f64>,
    #[serde(default)]
    pub eps2: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl SolveRequest {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            beta: self.beta,
            eps1: self.eps1,
            eps2: self.eps2,
            tol: self.tol,
            max_iter: self.max_iter,
            grid: self.grid,
        }
    }
}
