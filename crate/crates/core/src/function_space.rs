//! Mode-indexed functions of `x ≥ 0` and the reverse / weighted norms.
//!
//! Samples are piecewise linear between grid nodes, so every sup over `x`
//! of the stored representation is attained at a node.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::spectral::{SpectralModel, SpectralVector};

const DEFAULT_STRETCH: f64 = 1.05;
const DEFAULT_NODES_PER_FASTEST: f64 = 64.0;
const DEFAULT_NODES_PER_SLOWEST: f64 = 16.0;
const DEFAULT_EXTENT: f64 = 20.0;

/// Strictly increasing nodes on `[0, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct XGrid {
    points: Vec<f64>,
    stretch: f64,
}

impl XGrid {
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("need at least 2 nodes".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidGrid("first node must be 0".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("grid nodes".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("nodes must be strictly increasing".into()));
        }
        let stretch = points
            .windows(3)
            .map(|w| (w[2] - w[1]) / (w[1] - w[0]))
            .fold(1.0, f64::max);
        Ok(Self { points, stretch })
    }

    pub fn uniform(x_max: f64, n: usize) -> Result<Self> {
        Self::stretched(x_max, n, 1.0)
    }

    /// `n` nodes whose spacings grow geometrically by `stretch`.
    pub fn stretched(x_max: f64, n: usize, stretch: f64) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::InvalidGrid(format!("x_max = {x_max} must be positive")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid("need at least 2 nodes".into()));
        }
        if !(stretch.is_finite() && stretch >= 1.0) {
            return Err(Error::InvalidGrid(format!("stretch = {stretch} must be >= 1")));
        }
        let last = (n - 1) as f64;
        let mut points: Vec<f64> = if stretch == 1.0 {
            (0..n).map(|k| x_max * k as f64 / last).collect()
        } else {
            let denom = stretch.powf(last) - 1.0;
            (0..n).map(|k| x_max * (stretch.powi(k as i32) - 1.0) / denom).collect()
        };
        points[n - 1] = x_max;
        let mut grid = Self::from_points(points)?;
        grid.stretch = stretch;
        Ok(grid)
    }

    /// Grid resolving the stiffest mode near `x = 0` and extending to
    /// twenty slowest time constants.
    pub fn for_model(model: &SpectralModel) -> Self {
        let x_max = DEFAULT_EXTENT * model.gamma_max();
        let cap = model.gamma_max() / DEFAULT_NODES_PER_SLOWEST;
        let mut dx = (model.gamma_min() / DEFAULT_NODES_PER_FASTEST).min(cap);
        let mut points = vec![0.0];
        let mut x = 0.0;
        while x + dx < x_max {
            x += dx;
            points.push(x);
            dx = (dx * DEFAULT_STRETCH).min(cap);
        }
        // fold a sliver of a last cell into its neighbour
        if points.len() > 1 && x_max - x < 0.5 * dx {
            points.pop();
        }
        points.push(x_max);
        let mut grid = Self::from_points(points).expect("default grid is well formed");
        grid.stretch = DEFAULT_STRETCH;
        grid
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn max_spacing(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        match self.points.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k >= self.points.len() => self.points.len() - 1,
            Err(k) => {
                if x - self.points[k - 1] <= self.points[k] - x {
                    k - 1
                } else {
                    k
                }
            }
        }
    }
}

/// Grid parameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_max: f64,
    pub n: usize,
    #[serde(default = "unit_stretch")]
    pub stretch: f64,
}

fn unit_stretch() -> f64 {
    1.0
}

impl GridSpec {
    pub fn build(&self) -> Result<XGrid> {
        XGrid::stretched(self.x_max, self.n, self.stretch)
    }
}

/// Samples `u_i(x_k)`, one row per mode, one column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<XGrid>,
    n_modes: usize,
    samples: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<XGrid>, n_modes: usize, samples: Vec<f64>) -> Result<Self> {
        check_len(n_modes * grid.len(), samples.len())?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function samples".into()));
        }
        Ok(Self { grid, n_modes, samples })
    }

    pub fn zeros(grid: Arc<XGrid>, n_modes: usize) -> Self {
        let samples = vec![0.0; n_modes * grid.len()];
        Self { grid, n_modes, samples }
    }

    /// Samples `f(mode, x)` at every node.
    pub fn from_fn(grid: Arc<XGrid>, n_modes: usize, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let mut samples = Vec::with_capacity(n_modes * grid.len());
        for i in 0..n_modes {
            samples.extend(grid.points().iter().map(|&x| f(i, x)));
        }
        Self { grid, n_modes, samples }
    }

    /// Same value at every node.
    pub fn constant(grid: Arc<XGrid>, values: &[f64]) -> Self {
        Self::from_fn(grid, values.len(), |i, _| values[i])
    }

    pub fn grid(&self) -> &Arc<XGrid> {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.samples[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.samples[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.samples.chunks(self.grid.len())
    }

    pub(crate) fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        let n = self.grid.len();
        self.samples.chunks_mut(n)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// All mode values at node `k`.
    pub fn column(&self, k: usize) -> SpectralVector {
        let n = self.grid.len();
        SpectralVector((0..self.n_modes).map(|i| self.samples[i * n + k]).collect())
    }

    pub fn set_column(&mut self, k: usize, values: &[f64]) {
        let n = self.grid.len();
        for (i, v) in values.iter().enumerate() {
            self.samples[i * n + k] = *v;
        }
    }

    /// Piecewise-linear evaluation of every mode at `x` (clamped to the grid).
    pub fn eval(&self, x: f64) -> SpectralVector {
        let pts = self.grid.points();
        let x = x.clamp(0.0, self.grid.x_max());
        let k = pts.partition_point(|&p| p <= x).clamp(1, pts.len() - 1);
        let t = (x - pts[k - 1]) / (pts[k] - pts[k - 1]);
        SpectralVector(
            self.rows()
                .map(|r| r[k - 1] + t * (r[k] - r[k - 1]))
                .collect(),
        )
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.points() == other.grid.points()
    }

    pub(crate) fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        check_len(self.n_modes, other.n_modes)?;
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `self + scale · other` on a shared grid.
    pub fn add_scaled(&self, other: &GridFunction, scale: f64) -> Result<GridFunction> {
        self.check_compatible(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Self { grid: self.grid.clone(), n_modes: self.n_modes, samples })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        Self {
            grid: self.grid.clone(),
            n_modes: self.n_modes,
            samples: self.samples.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Restriction to the nodes `x_k ≥ x_k0`, re-based so `x_k0` becomes 0.
    pub fn shifted_tail(&self, k0: usize) -> Result<GridFunction> {
        let pts = self.grid.points();
        let x0 = pts[k0];
        let grid = Arc::new(XGrid::from_points(pts[k0..].iter().map(|x| x - x0).collect())?);
        let samples = self.rows().flat_map(|r| r[k0..].iter().copied()).collect();
        Ok(Self { grid, n_modes: self.n_modes, samples })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x".to_string()];
        header.extend((0..self.n_modes).map(|i| format!("mode{i}")));
        w.write_record(&header)?;
        for (k, x) in self.grid.points().iter().enumerate() {
            let mut rec = vec![x.to_string()];
            rec.extend((0..self.n_modes).map(|i| self.row(i)[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let n_modes = r.headers()?.len().saturating_sub(1);
        let mut xs = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n_modes];
        for rec in r.records() {
            let rec = rec?;
            check_len(n_modes + 1, rec.len())?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad number {s:?}: {e}")))
            };
            xs.push(parse(&rec[0])?);
            for (i, col) in cols.iter_mut().enumerate() {
                col.push(parse(&rec[i + 1])?);
            }
        }
        let grid = Arc::new(XGrid::from_points(xs)?);
        Self::new(grid, n_modes, cols.concat())
    }

    pub fn to_json(&self) -> GridFunctionJson {
        GridFunctionJson {
            x: self.grid.points().to_vec(),
            modes: self.rows().map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn from_json(json: &GridFunctionJson) -> Result<Self> {
        let grid = Arc::new(XGrid::from_points(json.x.clone())?);
        for row in &json.modes {
            check_len(grid.len(), row.len())?;
        }
        Self::new(grid, json.modes.len(), json.modes.concat())
    }
}

/// JSON form: `{"x":[…], "modes":[[…], …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFunctionJson {
    pub x: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
}

/// Per-mode sup over the nodes, `α_i = max_k |u_i(x_k)|`.
pub fn sup_profile(model: &SpectralModel, u: &GridFunction) -> Result<SpectralVector> {
    check_len(model.len(), u.n_modes())?;
    Ok(SpectralVector(
        u.rows().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect(),
    ))
}

/// `(Σ μ_i (sup_x |u_i(x)|)²)^{1/2}`.
pub fn reverse_norm(model: &SpectralModel, u: &GridFunction) -> Result<f64> {
    let alpha = sup_profile(model, u)?;
    model.norm(&alpha)
}

pub fn check_beta(model: &SpectralModel, beta: f64) -> Result<()> {
    let limit = 1.0 / model.gamma_max();
    if !(beta >= 0.0 && beta < limit) {
        return Err(Error::BetaOutOfRange { beta, limit });
    }
    Ok(())
}

/// Reverse norm of `x ↦ e^{βx} u(x)`; the weight is applied before the sup.
pub fn weighted_norm(model: &SpectralModel, u: &GridFunction, beta: f64) -> Result<f64> {
    check_beta(model, beta)?;
    check_len(model.len(), u.n_modes())?;
    let weights: Vec<f64> = u.grid().points().iter().map(|x| (beta * x).exp()).collect();
    let alpha: Vec<f64> = u
        .rows()
        .map(|r| r.iter().zip(&weights).fold(0.0f64, |m, (v, w)| m.max((w * v).abs())))
        .collect();
    model.norm(&alpha)
}
