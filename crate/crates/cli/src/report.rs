//! Report schemas. Every report is `{tool, version, command, seed, config, result}`.

use serde::{Deserialize, Serialize};
use stablelab_core::bilinear::KernelSpec;
use stablelab_core::manifold::ReportSummary;
use stablelab_core::{GridSpec, ModelSpec, SearchBudget, SolveRequest, SolverConfig};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<C, R> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: C,
    pub result: R,
}

impl<C, R> Envelope<C, R> {
    pub fn new(command: &str, seed: u64, config: C, result: R) -> Self {
        Self {
            tool: "stablelab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            result,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ce1Config {
    pub theta: f64,
    pub j_max: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Ce1Row {
    pub j: usize,
    pub ratio: f64,
    pub rho_pow: f64,
    pub closed_form: f64,
    pub exceeds: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ce1Result {
    pub rho: f64,
    pub q: [f64; 2],
    pub rayleigh: f64,
    pub rows: Vec<Ce1Row>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ce2Config {
    pub j_max: usize,
    pub lattice_max: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Ce2Row {
    pub j: usize,
    pub s_first: f64,
    pub s_rest: f64,
    pub norm_sq: f64,
    pub cumulative: f64,
    pub hs_norm_sq: f64,
    pub lattice_first: Option<f64>,
    pub lattice_rest: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ce2Result {
    pub alpha_norm_sq: f64,
    pub s_norm_sq: f64,
    pub rows: Vec<Ce2Row>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub model: ModelSpec,
    pub kernel: KernelSpec,
    pub alpha: Vec<f64>,
    pub budget: SearchBudget,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckRow {
    pub lambda: usize,
    pub lower: f64,
    pub upper: f64,
    pub exhaustive: bool,
    pub hs_bound: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckResult {
    pub hs_norm_sq: f64,
    pub lower_norm: f64,
    pub upper_norm: f64,
    pub hs_total_bound: f64,
    pub violations: Vec<usize>,
    pub rows: Vec<CheckRow>,
    pub witnesses: Vec<Vec<f64>>,
}

/// The request with every default filled in.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub model: ModelSpec,
    pub kernel: KernelSpec,
    pub h: Vec<f64>,
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// as requested; `None` is the model-derived default grid
    pub grid: Option<GridSpec>,
    pub grid_nodes: usize,
    pub x_max: f64,
    pub quad_norm_estimate: Option<f64>,
}

impl SolveConfig {
    pub fn new(req: &SolveRequest, cfg: &SolverConfig) -> Self {
        Self {
            model: req.model.clone(),
            kernel: req.kernel.clone(),
            h: req.h.clone(),
            beta: cfg.beta,
            eps1: cfg.eps1,
            eps2: cfg.eps2,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            grid: req.grid,
            grid_nodes: cfg.grid_nodes,
            x_max: cfg.x_max,
            quad_norm_estimate: cfg.quad_norm_estimate,
        }
    }
}

pub type SolveResult = ReportSummary;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub trajectory: String,
    pub model: ModelSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecayResult {
    pub window_start: f64,
    pub window_end: f64,
    pub fitted_beta: f64,
    pub nodes: usize,
}
