//! Kernel bilinear maps `D_λ(u,v) = Σ_{ν,σ} 𝒟(λ,ν,σ) u_ν v_σ μ_ν μ_σ`,
//! their pointwise extension `D_*`, and the closure tests built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterexamples::{butterfly_in_place, MatvecMode, PerronPair, RotationFamily};
use crate::error::{check_len, Error, Result};
use crate::function_space::GridFunction;
use crate::lattice::{self, SearchBudget};
use crate::spectral::{SpectralModel, SpectralVector};

/// Largest model size accepted by [`BilinearMap::densify`].
pub const DENSIFY_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Term {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// How the kernel `𝒟(λ,ν,σ)` is stored.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Row-major `n³` tensor indexed `(λ·n + ν)·n + σ`.
    Dense { n: usize, data: Vec<f64> },
    /// `𝒟(λ,ν,σ) = Σ_t a_t[λ] b_t[ν] c_t[σ]`.
    Rank1 { terms: Vec<Rank1Term> },
    /// Block-diagonal `D_j(u,v) = ⟨u,w_j⟩ T_j v` over blocks `j = 1…j_max`.
    Ce2Blocks { j_max: usize },
    /// `D(u,v) = ⟨u, M(θ) v⟩ e_1` with `M = ⊕_j M_j(θ)`.
    Ce1Single { theta: f64, j_max: usize },
}

/// JSON kernel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Dense { data: Vec<Vec<Vec<f64>>> },
    Rank1 { terms: Vec<Rank1Term> },
    Ce1 { theta: f64, j_max: usize },
    Ce2 { j_max: usize },
}

/// Total dimension of `⊕_{j=1}^{j_max} ℝ^{2^j}`.
pub fn block_dimension(j_max: usize) -> usize {
    (1usize << (j_max + 1)) - 2
}

/// Offset of block `j` inside the concatenated coordinates.
pub fn block_offset(j: usize) -> usize {
    (1usize << j) - 2
}

/// `(j, k)` with `k` the position inside block `j`.
pub fn block_of(index: usize) -> (usize, usize) {
    let j = (usize::BITS - 1 - (index + 2).leading_zeros()) as usize;
    (j, index + 2 - (1 << j))
}

/// Entry of `M_1(θ)^{⊗j}` with `cos`/`sin` given, from the bit pattern of the indices.
fn rotation_entry(c: f64, s: f64, j: usize, row: usize, col: usize) -> f64 {
    (0..j).fold(1.0, |acc, b| {
        acc * match ((row >> b) & 1, (col >> b) & 1) {
            (0, 0) => c,
            (1, 1) => -c,
            _ => s,
        }
    })
}

impl KernelSpec {
    pub fn into_kernel(self) -> Result<Kernel> {
        Ok(match self {
            KernelSpec::Dense { data } => {
                let n = data.len();
                let mut flat = Vec::with_capacity(n * n * n);
                for (l, plane) in data.into_iter().enumerate() {
                    if plane.len() != n {
                        return Err(Error::InvalidKernel(format!("slice {l} has {} rows, expected {n}", plane.len())));
                    }
                    for row in plane {
                        check_len(n, row.len())?;
                        flat.extend(row);
                    }
                }
                Kernel::Dense { n, data: flat }
            }
            KernelSpec::Rank1 { terms } => Kernel::Rank1 { terms },
            KernelSpec::Ce1 { theta, j_max } => Kernel::Ce1Single { theta, j_max },
            KernelSpec::Ce2 { j_max } => Kernel::Ce2Blocks { j_max },
        })
    }
}

impl Kernel {
    /// Mode count the kernel is defined on, when it determines one.
    pub fn natural_dimension(&self) -> Option<usize> {
        match self {
            Kernel::Dense { n, .. } => Some(*n),
            Kernel::Rank1 { terms } => terms.first().map(|t| t.a.len()),
            Kernel::Ce2Blocks { j_max } | Kernel::Ce1Single { j_max, .. } => Some(block_dimension(*j_max)),
        }
    }

    pub fn to_spec(&self) -> KernelSpec {
        match self {
            Kernel::Dense { n, data } => KernelSpec::Dense {
                data: data.chunks(n * n).map(|p| p.chunks(*n).map(<[f64]>::to_vec).collect()).collect(),
            },
            Kernel::Rank1 { terms } => KernelSpec::Rank1 { terms: terms.clone() },
            Kernel::Ce2Blocks { j_max } => KernelSpec::Ce2 { j_max: *j_max },
            Kernel::Ce1Single { theta, j_max } => KernelSpec::Ce1 { theta: *theta, j_max: *j_max },
        }
    }
}

/// A kernel bound to the spectral weights of a model.
#[derive(Debug, Clone)]
pub struct BilinearMap {
    kernel: Kernel,
    mu: Vec<f64>,
    rotation: Option<RotationFamily>,
}

impl BilinearMap {
    pub fn new(model: &SpectralModel, kernel: Kernel) -> Result<Self> {
        let n = model.len();
        let mut rotation = None;
        match &kernel {
            Kernel::Dense { n: dn, data } => {
                check_len(n, *dn)?;
                check_len(n * n * n, data.len())?;
                if data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("dense kernel".into()));
                }
            }
            Kernel::Rank1 { terms } => {
                for t in terms {
                    for v in [&t.a, &t.b, &t.c] {
                        check_len(n, v.len())?;
                        if v.iter().any(|x| !x.is_finite()) {
                            return Err(Error::NonFinite("rank-1 term".into()));
                        }
                    }
                }
            }
            Kernel::Ce2Blocks { j_max } | Kernel::Ce1Single { j_max, .. } => {
                if *j_max == 0 || *j_max > 24 {
                    return Err(Error::InvalidKernel(format!("j_max = {j_max} must lie in 1..=24")));
                }
                check_len(block_dimension(*j_max), n)?;
                if !model.has_unit_weights() {
                    return Err(Error::InvalidKernel("structured kernels require unit weights".into()));
                }
                let theta = match kernel {
                    Kernel::Ce1Single { theta, .. } => theta,
                    _ => std::f64::consts::FRAC_PI_4,
                };
                rotation = Some(RotationFamily::new(theta, *j_max)?);
            }
        }
        Ok(Self { kernel, mu: model.mus().collect(), rotation })
    }

    /// Convenience: parse a [`KernelSpec`] and bind it.
    pub fn from_spec(model: &SpectralModel, spec: KernelSpec) -> Result<Self> {
        Self::new(model, spec.into_kernel()?)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn is_zero(&self) -> bool {
        match &self.kernel {
            Kernel::Dense { data, .. } => data.iter().all(|x| *x == 0.0),
            Kernel::Rank1 { terms } => terms
                .iter()
                .all(|t| t.a.iter().all(|x| *x == 0.0) || t.b.iter().all(|x| *x == 0.0) || t.c.iter().all(|x| *x == 0.0)),
            _ => false,
        }
    }

    fn rot(&self) -> &RotationFamily {
        self.rotation.as_ref().expect("structured kernel carries its rotation family")
    }

    /// `𝒟(λ,ν,σ)`.
    pub fn entry(&self, l: usize, nu: usize, sigma: usize) -> f64 {
        let n = self.dim();
        match &self.kernel {
            Kernel::Dense { data, .. } => data[(l * n + nu) * n + sigma],
            Kernel::Rank1 { terms } => terms.iter().map(|t| t.a[l] * t.b[nu] * t.c[sigma]).sum(),
            Kernel::Ce2Blocks { .. } => {
                let ((jl, k), (jn, _), (js, m)) = (block_of(l), block_of(nu), block_of(sigma));
                if jl != jn || jl != js {
                    return 0.0;
                }
                let r = self.rot();
                2f64.powf(-(jl as f64) / 2.0) * rotation_entry(r.cos(), r.sin(), jl, k, m)
            }
            Kernel::Ce1Single { .. } => {
                let ((jn, a), (js, b)) = (block_of(nu), block_of(sigma));
                if l != 0 || jn != js {
                    return 0.0;
                }
                let r = self.rot();
                rotation_entry(r.cos(), r.sin(), jn, a, b)
            }
        }
    }

    /// Dense copy of the kernel.
    pub fn densify(&self) -> Result<BilinearMap> {
        let n = self.dim();
        if n > DENSIFY_CAP {
            return Err(Error::TooLarge { j: n, cap: DENSIFY_CAP });
        }
        let mut data = Vec::with_capacity(n * n * n);
        for l in 0..n {
            for nu in 0..n {
                for s in 0..n {
                    data.push(self.entry(l, nu, s));
                }
            }
        }
        Ok(Self { kernel: Kernel::Dense { n, data }, mu: self.mu.clone(), rotation: None })
    }

    /// Coordinates that can carry a nonzero entry of slice `λ`.
    pub fn slice_support(&self, l: usize) -> Vec<usize> {
        match &self.kernel {
            Kernel::Ce2Blocks { .. } => {
                let (j, _) = block_of(l);
                (block_offset(j)..block_offset(j) + (1 << j)).collect()
            }
            Kernel::Ce1Single { .. } if l != 0 => Vec::new(),
            _ => (0..self.dim()).collect(),
        }
    }

    /// Quadratic-form matrix of `v ↦ D_λ(v,v)` on `support`, weights folded in.
    pub fn slice_matrix(&self, l: usize, support: &[usize]) -> Vec<f64> {
        let mut a = Vec::with_capacity(support.len() * support.len());
        for &nu in support {
            for &s in support {
                a.push(self.entry(l, nu, s) * self.mu[nu] * self.mu[s]);
            }
        }
        a
    }

    fn dense_apply(&self, u: &[f64], v: &[f64], absolute: bool) -> Vec<f64> {
        let n = self.dim();
        let Kernel::Dense { data, .. } = &self.kernel else { unreachable!() };
        let mu = &self.mu;
        let uw: Vec<f64> = u.iter().zip(mu).map(|(a, m)| a * m).collect();
        let vw: Vec<f64> = v.iter().zip(mu).map(|(a, m)| a * m).collect();
        (0..n)
            .map(|l| {
                let plane = &data[l * n * n..(l + 1) * n * n];
                let mut acc = 0.0;
                for (nu, row) in plane.chunks(n).enumerate() {
                    for (s, d) in row.iter().enumerate() {
                        let d = if absolute { d.abs() } else { *d };
                        acc += d * uw[nu] * vw[s];
                    }
                }
                acc
            })
            .collect()
    }

    fn generic_apply(&self, u: &[f64], v: &[f64], absolute: bool) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|l| {
                let mut acc = 0.0;
                for (nu, (un, mn)) in u.iter().zip(&self.mu).enumerate() {
                    for (s, (vs, ms)) in v.iter().zip(&self.mu).enumerate() {
                        let d = self.entry(l, nu, s);
                        let d = if absolute { d.abs() } else { d };
                        acc += d * un * mn * vs * ms;
                    }
                }
                acc
            })
            .collect()
    }

    fn structured_apply(&self, u: &[f64], v: &[f64], mode: MatvecMode) -> Vec<f64> {
        let r = self.rot();
        let n = self.dim();
        let mut out = vec![0.0; n];
        let mut scratch = Vec::new();
        for j in 1..=r.j_max() {
            let (off, len) = (block_offset(j), 1usize << j);
            let (uj, vj) = (&u[off..off + len], &v[off..off + len]);
            scratch.clear();
            scratch.extend_from_slice(vj);
            butterfly_in_place(&mut scratch, r.cos(), r.sin(), mode);
            match self.kernel {
                Kernel::Ce2Blocks { .. } => {
                    let w = 2f64.powf(-(j as f64) / 2.0);
                    let s: f64 = uj.iter().map(|x| x * w).sum();
                    for (o, t) in out[off..off + len].iter_mut().zip(&scratch) {
                        *o = s * t;
                    }
                }
                _ => out[0] += uj.iter().zip(&scratch).map(|(a, b)| a * b).sum::<f64>(),
            }
        }
        out
    }

    /// `D(u, v)`.
    pub fn apply(&self, u: &[f64], v: &[f64]) -> Result<SpectralVector> {
        check_len(self.dim(), u.len())?;
        check_len(self.dim(), v.len())?;
        Ok(SpectralVector(match &self.kernel {
            Kernel::Dense { .. } => self.dense_apply(u, v, false),
            Kernel::Rank1 { terms } => {
                let mut out = vec![0.0; self.dim()];
                for t in terms {
                    let bu: f64 = t.b.iter().zip(u).zip(&self.mu).map(|((b, x), m)| b * x * m).sum();
                    let cv: f64 = t.c.iter().zip(v).zip(&self.mu).map(|((c, x), m)| c * x * m).sum();
                    for (o, a) in out.iter_mut().zip(&t.a) {
                        *o += a * bu * cv;
                    }
                }
                out
            }
            _ => self.structured_apply(u, v, MatvecMode::Signed),
        }))
    }

    /// `|D|(u, v)`, the map with kernel `|𝒟|`.
    pub fn abs_apply(&self, u: &[f64], v: &[f64]) -> Result<SpectralVector> {
        check_len(self.dim(), u.len())?;
        check_len(self.dim(), v.len())?;
        Ok(SpectralVector(match &self.kernel {
            Kernel::Dense { .. } => self.dense_apply(u, v, true),
            Kernel::Rank1 { .. } => self.generic_apply(u, v, true),
            _ => self.structured_apply(u, v, MatvecMode::Absolute),
        }))
    }

    /// `D_*(u,v)(x) = D(u(x), v(x))` node by node.
    pub fn apply_pointwise(&self, u: &GridFunction, v: &GridFunction) -> Result<GridFunction> {
        check_len(self.dim(), u.n_modes())?;
        u.check_compatible(v)?;
        let columns: Vec<SpectralVector> = (0..u.n_points())
            .into_par_iter()
            .map(|k| self.apply(&u.column(k), &v.column(k)))
            .collect::<Result<_>>()?;
        let mut out = GridFunction::zeros(u.grid().clone(), u.n_modes());
        for (k, c) in columns.iter().enumerate() {
            out.set_column(k, c);
        }
        Ok(out)
    }

    /// `Σ_{ν,σ} 𝒟(λ,ν,σ)² μ_ν μ_σ`, the squared Hilbert–Schmidt norm of slice `λ`.
    pub fn slice_hs_sq(&self, l: usize) -> f64 {
        let n = self.dim();
        match &self.kernel {
            Kernel::Dense { data, .. } => {
                let plane = &data[l * n * n..(l + 1) * n * n];
                let mut acc = 0.0;
                for (nu, row) in plane.chunks(n).enumerate() {
                    for (s, d) in row.iter().enumerate() {
                        acc += d * d * self.mu[nu] * self.mu[s];
                    }
                }
                acc
            }
            Kernel::Rank1 { terms } => {
                let mut acc = 0.0;
                for t in terms {
                    for r in terms {
                        acc += t.a[l] * r.a[l] * self.weighted_dot(&t.b, &r.b) * self.weighted_dot(&t.c, &r.c);
                    }
                }
                acc
            }
            // every row of T_j has unit length and ‖w_j‖ = 1
            Kernel::Ce2Blocks { .. } => 1.0,
            Kernel::Ce1Single { j_max, .. } => {
                if l == 0 {
                    (block_dimension(*j_max)) as f64
                } else {
                    0.0
                }
            }
        }
    }

    fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.mu).map(|((x, y), m)| x * y * m).sum()
    }

    /// `Σ_{λ,ν,σ} 𝒟² μ_λ μ_ν μ_σ`.
    pub fn hs_norm_sq(&self) -> f64 {
        match &self.kernel {
            Kernel::Ce2Blocks { j_max } | Kernel::Ce1Single { j_max, .. } => block_dimension(*j_max) as f64,
            _ => (0..self.dim()).map(|l| self.mu[l] * self.slice_hs_sq(l)).sum(),
        }
    }

    /// Operator-norm estimate and Hilbert–Schmidt norm of `T_λ`, where
    /// `D_λ(u,v) = ⟨u, T_λ v⟩`.
    pub fn t_lambda_norms(&self, l: usize) -> Result<TLambdaNorms> {
        if !matches!(self.kernel, Kernel::Dense { .. } | Kernel::Rank1 { .. }) {
            return Err(Error::Unsupported("t_lambda_norms on a structured kernel; densify first".into()));
        }
        if l >= self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), found: l });
        }
        let n = self.dim();
        // symmetric weighting √μ_ν √μ_σ turns the weighted operator norm into a spectral norm
        let sq: Vec<f64> = self.mu.iter().map(|m| m.sqrt()).collect();
        let mut s = vec![0.0; n * n];
        for nu in 0..n {
            for sg in 0..n {
                s[nu * n + sg] = self.entry(l, nu, sg) * sq[nu] * sq[sg];
            }
        }
        let (opnorm, iterations) = spectral_norm(&s, n, 1e-12, 200_000);
        Ok(TLambdaNorms { opnorm, hs: self.slice_hs_sq(l).sqrt(), iterations })
    }

    /// Certified bracket `lower ≤ 𝒮(α) ≤ upper` with per-mode witnesses.
    pub fn s_bracket(&self, alpha: &[f64], budget: &SearchBudget) -> Result<SBracket> {
        check_len(self.dim(), alpha.len())?;
        if let Some(i) = alpha.iter().position(|a| a.is_nan() || *a < 0.0) {
            return Err(Error::NegativeAlpha(i));
        }
        let n = self.dim();
        let rows: Vec<lattice::SliceResult> = (0..n)
            .into_par_iter()
            .map(|l| {
                let support: Vec<usize> =
                    self.slice_support(l).into_iter().filter(|&i| alpha[i] > 0.0).collect();
                let a = self.slice_matrix(l, &support);
                let radii: Vec<f64> = support.iter().map(|&i| alpha[i]).collect();
                lattice::bracket_slice(&a, &radii, budget, l as u64)
                    .with_support(support, n)
            })
            .collect();
        let mut out = SBracket {
            lower: SpectralVector(Vec::with_capacity(n)),
            upper: SpectralVector(Vec::with_capacity(n)),
            witnesses: Vec::with_capacity(n),
            exhaustive: Vec::with_capacity(n),
        };
        for r in rows {
            out.lower.0.push(r.lower);
            out.upper.0.push(r.upper);
            out.witnesses.push(SpectralVector(r.witness));
            out.exhaustive.push(r.exhaustive);
        }
        Ok(out)
    }

    /// Per-mode check of `𝒮_λ(α) ≤ ‖T_λ‖_HS ‖α‖²` on the certified lower bounds.
    pub fn check_hs_bound(&self, model: &SpectralModel, alpha: &[f64], budget: &SearchBudget) -> Result<HsBoundReport> {
        let bracket = self.s_bracket(alpha, budget)?;
        self.hs_bound_from_bracket(model, alpha, &bracket)
    }

    pub fn hs_bound_from_bracket(&self, model: &SpectralModel, alpha: &[f64], bracket: &SBracket) -> Result<HsBoundReport> {
        let alpha_sq = model.norm(alpha)?.powi(2);
        let mut rows = Vec::with_capacity(self.dim());
        let mut violations = Vec::new();
        for (l, &lower) in bracket.lower.iter().enumerate() {
            let bound = self.slice_hs_sq(l).sqrt() * alpha_sq;
            if lower > bound * (1.0 + 1e-12) {
                violations.push(l);
            }
            rows.push(HsBoundRow { lambda: l, lower, bound, margin: bound - lower });
        }
        Ok(HsBoundReport {
            alpha_norm_sq: alpha_sq,
            lower_norm: model.norm(&bracket.lower)?,
            total_bound: self.hs_norm_sq().sqrt() * alpha_sq,
            rows,
            violations,
        })
    }

    /// Counterexample (i) as a kernel: `⟨u, |M_j| u⟩` for `u` the test vector on block `j`.
    pub fn ce1_block_growth(&self, pair: &PerronPair, j: usize) -> Result<f64> {
        let Kernel::Ce1Single { j_max, .. } = self.kernel else {
            return Err(Error::Unsupported("ce1_block_growth needs a ce1 kernel".into()));
        };
        if j == 0 || j > j_max {
            return Err(Error::TooLarge { j, cap: j_max });
        }
        let mut u = vec![0.0; self.dim()];
        let tv = crate::counterexamples::test_vector(pair, j);
        u[block_offset(j)..block_offset(j) + tv.len()].copy_from_slice(&tv);
        Ok(self.abs_apply(&u, &u)?[0])
    }
}

/// Block `j` of the second counterexample as a stand-alone dense kernel on `2^j` unit-weight modes,
/// `𝒟(k,m,l) = w_m T_j[k,l]`.
pub fn ce2_block(j: usize) -> Result<(SpectralModel, BilinearMap)> {
    if j == 0 || j > 6 {
        return Err(Error::TooLarge { j, cap: 6 });
    }
    let n = 1usize << j;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let w = 2f64.powf(-(j as f64) / 2.0);
    let mut data = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for _m in 0..n {
            for l in 0..n {
                data.push(w * rotation_entry(r, r, j, k, l));
            }
        }
    }
    let model = SpectralModel::uniform(n, 1.0)?;
    let map = BilinearMap::new(&model, Kernel::Dense { n, data })?;
    Ok((model, map))
}

/// Power iteration on `SᵀS` for the largest singular value of the `n×n` row-major `s`.
pub fn spectral_norm(s: &[f64], n: usize, tol: f64, max_iter: usize) -> (f64, usize) {
    if s.iter().all(|x| *x == 0.0) {
        return (0.0, 0);
    }
    // deterministic start with no special alignment to structured matrices
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut sv = vec![0.0; n];
    let mut prev = 0.0;
    for it in 1..=max_iter {
        for (r, o) in sv.iter_mut().enumerate() {
            *o = s[r * n..(r + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let est: f64 = sv.iter().map(|x| x * x).sum();
        for (c, o) in v.iter_mut().enumerate() {
            *o = (0..n).map(|r| s[r * n + c] * sv[r]).sum();
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 {
            return (est.sqrt(), it);
        }
        v.iter_mut().for_each(|x| *x /= vn);
        if (est - prev).abs() <= tol * est {
            return (est.sqrt(), it);
        }
        prev = est;
    }
    (prev.sqrt(), max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TLambdaNorms {
    pub opnorm: f64,
    pub hs: f64,
    pub iterations: usize,
}

/// `lower ≤ 𝒮(α) ≤ upper`, with `lower_λ = |D_λ(w_λ, w_λ)|` at a recorded witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SBracket {
    pub lower: SpectralVector,
    pub upper: SpectralVector,
    pub witnesses: Vec<SpectralVector>,
    /// whether the full ternary lattice was enumerated for that mode
    pub exhaustive: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsBoundRow {
    pub lambda: usize,
    pub lower: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsBoundReport {
    pub alpha_norm_sq: f64,
    /// `‖𝒮-lower‖`
    pub lower_norm: f64,
    /// `(Σ 𝒟² μμμ)^{1/2} ‖α‖²`
    pub total_bound: f64,
    pub rows: Vec<HsBoundRow>,
    pub violations: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterexamples::{hadamard_family, perron_pair};
    use crate::function_space::{reverse_norm, sup_profile, XGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_dense(rng: &mut ChaCha8Rng, n: usize) -> Kernel {
        Kernel::Dense { n, data: (0..n * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize) -> SpectralModel {
        SpectralModel::from_pairs((0..n).map(|i| {
            let g = rng.gen_range(0.1..2.0);
            (if i % 2 == 0 { g } else { -g }, rng.gen_range(0.2..3.0))
        }))
        .unwrap()
    }

    /// Naive triple loop straight from the kernel formula.
    fn brute_apply(model: &SpectralModel, k: &[f64], u: &[f64], v: &[f64], abs: bool) -> Vec<f64> {
        let n = model.len();
        let mu: Vec<f64> = model.mus().collect();
        (0..n)
            .map(|l| {
                let mut s = 0.0;
                for nu in 0..n {
                    for sg in 0..n {
                        let d = k[l * n * n + nu * n + sg];
                        s += if abs { d.abs() } else { d } * u[nu] * v[sg] * mu[nu] * mu[sg];
                    }
                }
                s
            })
            .collect()
    }

    fn ce2_model(j_max: usize) -> SpectralModel {
        SpectralModel::uniform(block_dimension(j_max), 1.0).unwrap()
    }

    #[test]
    fn block_indexing() {
        assert_eq!(block_dimension(3), 14);
        assert_eq!(block_of(0), (1, 0));
        assert_eq!(block_of(1), (1, 1));
        assert_eq!(block_of(2), (2, 0));
        assert_eq!(block_of(5), (2, 3));
        assert_eq!(block_of(6), (3, 0));
        for j in 1..10 {
            assert_eq!(block_of(block_offset(j)), (j, 0));
        }
    }

    #[test]
    fn ce2_first_block_example() {
        let m = ce2_model(1);
        let d = BilinearMap::new(&m, Kernel::Ce2Blocks { j_max: 1 }).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let out = d.apply(&[r, r], &[r, r]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1].abs() < 1e-15);
        assert_eq!(&*d.apply(&[0.0, 0.0], &[0.3, 0.1]).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn dense_apply_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [3, 4] {
            let m = random_model(&mut rng, n);
            let k = random_dense(&mut rng, n);
            let Kernel::Dense { data, .. } = &k else { unreachable!() };
            let data = data.clone();
            let d = BilinearMap::new(&m, k).unwrap();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for abs in [false, true] {
                let fast = if abs { d.abs_apply(&u, &v) } else { d.apply(&u, &v) }.unwrap();
                let slow = brute_apply(&m, &data, &u, &v, abs);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn abs_apply_equals_apply_for_nonnegative_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 4);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d = BilinearMap::new(&m, Kernel::Dense { n: 4, data }).unwrap();
        let u = [0.1, 0.5, -0.2, 0.7];
        assert_eq!(d.apply(&u, &u).unwrap(), d.abs_apply(&u, &u).unwrap());
    }

    #[test]
    fn rank1_matches_its_densified_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 5);
        let mut vec5 = || (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let terms = vec![
            Rank1Term { a: vec5(), b: vec5(), c: vec5() },
            Rank1Term { a: vec5(), b: vec5(), c: vec5() },
        ];
        let single = BilinearMap::new(&m, Kernel::Rank1 { terms: terms[..1].to_vec() }).unwrap();
        let d = BilinearMap::new(&m, Kernel::Rank1 { terms }).unwrap();
        let dense = d.densify().unwrap();
        let u = vec5();
        let v = vec5();
        for (a, b) in d.apply(&u, &v).unwrap().iter().zip(dense.apply(&u, &v).unwrap().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in d.abs_apply(&u, &v).unwrap().iter().zip(dense.abs_apply(&u, &v).unwrap().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.hs_norm_sq() - dense.hs_norm_sq()).abs() < 1e-12 * dense.hs_norm_sq());

        // single term factorizes into ‖a‖²‖b‖²‖c‖²
        let Kernel::Rank1 { terms } = single.kernel() else { unreachable!() };
        let t = &terms[0];
        let want = m.norm(&t.a).unwrap().powi(2) * m.norm(&t.b).unwrap().powi(2) * m.norm(&t.c).unwrap().powi(2);
        assert!((single.hs_norm_sq() - want).abs() < 1e-12 * want);
        assert!((single.densify().unwrap().hs_norm_sq() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn hs_norm_examples() {
        let m = SpectralModel::uniform(3, 1.0).unwrap();
        let z = BilinearMap::new(&m, Kernel::Dense { n: 3, data: vec![0.0; 27] }).unwrap();
        assert_eq!(z.hs_norm_sq(), 0.0);
        for j_max in 1..=6 {
            let d = BilinearMap::new(&ce2_model(j_max), Kernel::Ce2Blocks { j_max }).unwrap();
            let dense = d.densify().unwrap();
            let want = block_dimension(j_max) as f64;
            assert!((d.hs_norm_sq() - want).abs() < 1e-10);
            assert!((dense.hs_norm_sq() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn structured_kernels_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for j_max in 1..=6 {
            let m = ce2_model(j_max);
            let n = m.len();
            for k in [Kernel::Ce2Blocks { j_max }, Kernel::Ce1Single { theta: std::f64::consts::FRAC_PI_6, j_max }] {
                let d = BilinearMap::new(&m, k).unwrap();
                let dense = d.densify().unwrap();
                let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let pairs = [
                    (d.apply(&u, &v).unwrap(), dense.apply(&u, &v).unwrap()),
                    (d.abs_apply(&u, &v).unwrap(), dense.abs_apply(&u, &v).unwrap()),
                ];
                for (a, b) in pairs {
                    for (x, y) in a.iter().zip(b.iter()) {
                        assert!((x - y).abs() < 1e-10, "j_max {j_max}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn ce1_block_growth_beats_rho_power() {
        let j_max = 10;
        let m = ce2_model(j_max);
        let theta = std::f64::consts::FRAC_PI_6;
        let d = BilinearMap::new(&m, Kernel::Ce1Single { theta, j_max }).unwrap();
        let p = perron_pair(theta).unwrap();
        for j in 1..=j_max {
            let g = d.ce1_block_growth(&p, j).unwrap();
            assert!(g >= p.rho.powi(j as i32));
        }
    }

    #[test]
    fn bilinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(2..7);
            let m = random_model(&mut rng, n);
            let d = BilinearMap::new(&m, random_dense(&mut rng, n)).unwrap();
            let r = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (u, w, v) = (r(&mut rng), r(&mut rng), r(&mut rng));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mix: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let lhs = d.apply(&mix, &v).unwrap();
            let du = d.apply(&u, &v).unwrap();
            let dw = d.apply(&w, &v).unwrap();
            for l in 0..n {
                let rhs = a * du[l] + b * dw[l];
                assert!((lhs[l] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * 10.0);
            }
        }
    }

    #[test]
    fn pointwise_locality_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_model(&mut rng, 3);
        let d = BilinearMap::new(&m, random_dense(&mut rng, 3)).unwrap();
        let g = Arc::new(XGrid::uniform(2.0, 5).unwrap());
        let c = [0.3, -0.4, 0.9];
        let u = GridFunction::constant(g.clone(), &c);
        let out = d.apply_pointwise(&u, &u).unwrap();
        let want = d.apply(&c, &c).unwrap();
        for k in 0..5 {
            assert_eq!(&*out.column(k), &*want);
        }
        let mut spike = GridFunction::zeros(g.clone(), 3);
        spike.set_column(2, &c);
        let out = d.apply_pointwise(&spike, &spike).unwrap();
        for k in 0..5 {
            let nz = out.column(k).iter().any(|x| *x != 0.0);
            assert_eq!(nz, k == 2);
        }
        let other = GridFunction::zeros(Arc::new(XGrid::uniform(3.0, 5).unwrap()), 3);
        assert!(matches!(d.apply_pointwise(&u, &other), Err(Error::GridMismatch)));
    }

    #[test]
    fn pointwise_output_bounded_by_abs_map_of_sup_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Arc::new(XGrid::stretched(5.0, 30, 1.05).unwrap());
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let m = random_model(&mut rng, n);
            let d = BilinearMap::new(&m, random_dense(&mut rng, n)).unwrap();
            let u = GridFunction::from_fn(g.clone(), n, |_, _| rng.gen_range(-1.0..1.0));
            let alpha = sup_profile(&m, &u).unwrap();
            let lhs = reverse_norm(&m, &d.apply_pointwise(&u, &u).unwrap()).unwrap();
            let rhs = m.norm(&d.abs_apply(&alpha, &alpha).unwrap()).unwrap();
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn s_bracket_reproduces_ce2_first_block() {
        let m = ce2_model(1);
        let d = BilinearMap::new(&m, Kernel::Ce2Blocks { j_max: 1 }).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let b = d.s_bracket(&[r, r], &SearchBudget::default()).unwrap();
        assert!((b.lower[0] - 1.0).abs() < 1e-15);
        assert!((b.lower[1] - 0.25).abs() < 1e-15);
        assert_eq!(&*b.witnesses[0], &[r, r]);
        // witness entries lie on the ternary lattice and achieve the value
        for (l, w) in b.witnesses.iter().enumerate() {
            assert!(w.iter().all(|x| *x == 0.0 || x.abs() == r));
            assert!((d.apply(w, w).unwrap()[l].abs() - b.lower[l]).abs() < 1e-15);
        }
        assert!(b.exhaustive.iter().all(|e| *e));
    }

    #[test]
    fn s_bracket_exact_on_densified_blocks() {
        for j in 1..=3 {
            let h = hadamard_family(j).unwrap();
            let m = SpectralModel::uniform(1 << j, 1.0).unwrap();
            let single = BilinearMap::new(&ce2_model(j), Kernel::Ce2Blocks { j_max: j }).unwrap().densify().unwrap();
            // keep only block j as a stand-alone dense kernel
            let n = 1 << j;
            let off = block_offset(j);
            let mut data = Vec::with_capacity(n * n * n);
            for l in 0..n {
                for nu in 0..n {
                    for s in 0..n {
                        data.push(single.entry(off + l, off + nu, off + s));
                    }
                }
            }
            let d = BilinearMap::new(&m, Kernel::Dense { n, data }).unwrap();
            let (_, direct) = ce2_block(j).unwrap();
            let Kernel::Dense { data: a, .. } = direct.kernel() else { unreachable!() };
            let Kernel::Dense { data: b, .. } = d.kernel() else { unreachable!() };
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
            let b = d.s_bracket(&h.alpha, &SearchBudget::default()).unwrap();
            let jf = j as f64;
            assert!((b.lower[0] - 1.0 / (jf * jf)).abs() < 1e-12);
            for k in 1..n {
                assert!((b.lower[k] - 1.0 / (4.0 * jf * jf)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn s_bracket_zero_alpha_and_negative_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng, 4);
        let d = BilinearMap::new(&m, random_dense(&mut rng, 4)).unwrap();
        let b = d.s_bracket(&[0.0; 4], &SearchBudget::default()).unwrap();
        assert!(b.lower.iter().chain(b.upper.iter()).all(|x| *x == 0.0));
        assert!(matches!(d.s_bracket(&[0.1, -0.1, 0.0, 0.0], &SearchBudget::default()), Err(Error::NegativeAlpha(1))));
    }

    /// Oracle: exhaustive 9-level grid per coordinate (contains the ternary lattice).
    fn fine_grid_max(d: &BilinearMap, alpha: &[f64], l: usize) -> f64 {
        let n = alpha.len();
        let levels = 9usize;
        let total = levels.pow(n as u32);
        let mut best = 0.0f64;
        let mut v = vec![0.0; n];
        for idx in 0..total {
            let mut r = idx;
            for i in 0..n {
                let t = (r % levels) as f64 / (levels - 1) as f64;
                v[i] = alpha[i] * (2.0 * t - 1.0);
                r /= levels;
            }
            best = best.max(d.apply(&v, &v).unwrap()[l].abs());
        }
        best
    }

    #[test]
    fn s_bracket_against_fine_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let m = random_model(&mut rng, 4);
            let d = BilinearMap::new(&m, random_dense(&mut rng, 4)).unwrap();
            let alpha: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1.0)).collect();
            let b = d.s_bracket(&alpha, &SearchBudget::default()).unwrap();
            for l in 0..4 {
                let grid = fine_grid_max(&d, &alpha, l);
                assert!(b.lower[l] <= grid + 1e-12);
                assert!(grid <= b.upper[l] + 1e-12);
                assert!(b.lower[l] <= b.upper[l]);
            }
        }
    }

    #[test]
    fn randomized_search_stays_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = random_model(&mut rng, 6);
        let d = BilinearMap::new(&m, random_dense(&mut rng, 6)).unwrap();
        let alpha: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..1.0)).collect();
        let exact = d.s_bracket(&alpha, &SearchBudget::default()).unwrap();
        let budget = SearchBudget { exhaustive_max: 2, samples: 200, seed: 3 };
        let rnd = d.s_bracket(&alpha, &budget).unwrap();
        for l in 0..6 {
            assert!(!rnd.exhaustive[l]);
            assert!(rnd.lower[l] <= rnd.upper[l]);
            // coordinate ascent reaches at least the lattice optimum of random kernels most of the time;
            // soundness is what is required
            assert!(rnd.lower[l] > 0.0);
            assert_eq!(rnd.upper[l], exact.upper[l]);
            let w = &rnd.witnesses[l];
            assert!(w.iter().zip(&alpha).all(|(x, a)| x.abs() <= *a));
        }
        // determinism under a fixed seed
        assert_eq!(rnd, d.s_bracket(&alpha, &budget).unwrap());
    }

    #[test]
    fn hs_bound_holds_on_random_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.gen_range(2..6);
            let m = random_model(&mut rng, n);
            let d = BilinearMap::new(&m, random_dense(&mut rng, n)).unwrap();
            let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let rep = d.check_hs_bound(&m, &alpha, &SearchBudget::default()).unwrap();
            assert!(rep.violations.is_empty());
            assert!(rep.lower_norm <= rep.total_bound);
        }
        let m = SpectralModel::uniform(3, 1.0).unwrap();
        let z = BilinearMap::new(&m, Kernel::Dense { n: 3, data: vec![0.0; 27] }).unwrap();
        let rep = z.check_hs_bound(&m, &[1.0, 0.5, 0.2], &SearchBudget::default()).unwrap();
        assert!(rep.rows.iter().all(|r| r.lower == 0.0 && r.bound == 0.0 && r.margin == 0.0));
    }

    #[test]
    fn hs_bound_on_second_ce2_block() {
        let j = 2;
        let m = ce2_model(j);
        let d = BilinearMap::new(&m, Kernel::Ce2Blocks { j_max: j }).unwrap();
        let mut alpha = vec![0.0; m.len()];
        for jj in 1..=j {
            let h = hadamard_family(jj).unwrap();
            alpha[block_offset(jj)..block_offset(jj) + h.alpha.len()].copy_from_slice(&h.alpha);
        }
        let rep = d.check_hs_bound(&m, &alpha, &SearchBudget::default()).unwrap();
        assert!(rep.violations.is_empty());
        assert!(rep.rows.iter().all(|r| r.margin > 0.0 && r.margin.is_finite()));
    }

    #[test]
    fn t_lambda_norm_examples() {
        let m = SpectralModel::uniform(2, 1.0).unwrap();
        // slice 0 is the 2×2 identity
        let mut data = vec![0.0; 8];
        data[0] = 1.0;
        data[3] = 1.0;
        let d = BilinearMap::new(&m, Kernel::Dense { n: 2, data }).unwrap();
        let t = d.t_lambda_norms(0).unwrap();
        assert!((t.opnorm - 1.0).abs() < 1e-12);
        assert!((t.hs - 2f64.sqrt()).abs() < 1e-15);

        let ce = BilinearMap::new(&ce2_model(2), Kernel::Ce2Blocks { j_max: 2 }).unwrap();
        assert!(matches!(ce.t_lambda_norms(0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn t_lambda_opnorm_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let m = random_model(&mut rng, 5);
            let d = BilinearMap::new(&m, random_dense(&mut rng, 5)).unwrap();
            let mu: Vec<f64> = m.mus().collect();
            for l in 0..5 {
                let s = nalgebra::DMatrix::from_fn(5, 5, |r, c| d.entry(l, r, c) * (mu[r] * mu[c]).sqrt());
                let svd = s.singular_values();
                let top = svd.iter().cloned().fold(0.0, f64::max);
                let t = d.t_lambda_norms(l).unwrap();
                assert!((t.opnorm - top).abs() < 1e-8 * top, "{} vs {top}", t.opnorm);
                assert!(t.opnorm <= t.hs * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn kernel_spec_json() {
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"ce1","theta":0.5235987755982988,"j_max":8}"#).unwrap();
        assert_eq!(spec, KernelSpec::Ce1 { theta: 0.5235987755982988, j_max: 8 });
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"ce2","j_max":3}"#).unwrap();
        assert_eq!(spec.clone().into_kernel().unwrap().natural_dimension(), Some(14));
        let spec: KernelSpec =
            serde_json::from_str(r#"{"type":"dense","data":[[[1,2],[3,4]],[[5,6],[7,8]]]}"#).unwrap();
        let k = spec.clone().into_kernel().unwrap();
        assert_eq!(k, Kernel::Dense { n: 2, data: (1..=8).map(f64::from).collect() });
        assert_eq!(k.to_spec(), spec);
        let bad: KernelSpec = serde_json::from_str(r#"{"type":"dense","data":[[[1,2]],[[5,6]]]}"#).unwrap();
        assert!(bad.into_kernel().is_err());
        let m = SpectralModel::uniform(2, 1.0).unwrap();
        assert!(BilinearMap::new(&m, Kernel::Ce2Blocks { j_max: 2 }).is_err());
        assert!(serde_json::from_str::<KernelSpec>(r#"{"type":"ce2"}"#).is_err());
    }
}
