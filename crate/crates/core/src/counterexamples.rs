//! Rotation-recursion and Hadamard families on `ℓ² = ⊕_j ℝ^{2^j}`.
//!
//! `M_1(θ) = [[c, s], [s, −c]]` and `M_{j+1} = [[c M_j, s M_j], [s M_j, −c M_j]]`,
//! i.e. `M_j = M_1^{⊗j}`. The entrywise absolute value is then
//! `|M_j| = A^{⊗j}` with `A = [[c, s], [s, c]]`, so both products are
//! applied by a radix-2 butterfly in `O(2^j j)`.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Largest level materialized densely.
pub const DENSE_CAP: usize = 12;
/// Largest level accepted by the butterfly routines.
pub const BUTTERFLY_CAP: usize = 24;

const PAR_THRESHOLD: usize = 1 << 15;

/// Whether a butterfly applies `M_j` or `|M_j|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatvecMode {
    Signed,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFamily {
    theta: f64,
    cos: f64,
    sin: f64,
    j_max: usize,
}

impl RotationFamily {
    pub fn new(theta: f64, j_max: usize) -> Result<Self> {
        if !(theta > 0.0 && theta < FRAC_PI_2) {
            return Err(Error::ThetaOutOfRange(theta));
        }
        if j_max == 0 {
            return Err(Error::InvalidConfig("j_max must be >= 1".into()));
        }
        Ok(Self { theta, cos: theta.cos(), sin: theta.sin(), j_max })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn cos(&self) -> f64 {
        self.cos
    }

    pub fn sin(&self) -> f64 {
        self.sin
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    fn check_level(&self, j: usize, cap: usize) -> Result<()> {
        if j == 0 {
            return Err(Error::InvalidConfig("level j must be >= 1".into()));
        }
        if j > self.j_max.min(cap) {
            return Err(Error::TooLarge { j, cap: self.j_max.min(cap) });
        }
        Ok(())
    }

    /// `M_j(θ)` assembled by the block recursion, row-major.
    pub fn dense_matrix(&self, j: usize) -> Result<Vec<Vec<f64>>> {
        self.check_level(j, DENSE_CAP)?;
        let (c, s) = (self.cos, self.sin);
        let mut m = vec![vec![c, s], vec![s, -c]];
        for _ in 1..j {
            let n = m.len();
            let mut next = vec![vec![0.0; 2 * n]; 2 * n];
            for r in 0..n {
                for col in 0..n {
                    let v = m[r][col];
                    next[r][col] = c * v;
                    next[r][col + n] = s * v;
                    next[r + n][col] = s * v;
                    next[r + n][col + n] = -c * v;
                }
            }
            m = next;
        }
        Ok(m)
    }

    /// `M_j v` or `|M_j| v`.
    pub fn butterfly_matvec(&self, j: usize, v: &[f64], mode: MatvecMode) -> Result<Vec<f64>> {
        self.check_level(j, BUTTERFLY_CAP)?;
        check_len(1 << j, v.len())?;
        let mut x = v.to_vec();
        butterfly_in_place(&mut x, self.cos, self.sin, mode);
        Ok(x)
    }
}

/// Applies the 2×2 factor along every bit axis of `x` (length a power of two).
pub(crate) fn butterfly_in_place(x: &mut [f64], c: f64, s: f64, mode: MatvecMode) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let lower = match mode {
        MatvecMode::Signed => -c,
        MatvecMode::Absolute => c,
    };
    let stage = |chunk: &mut [f64], half: usize| {
        let (top, bottom) = chunk.split_at_mut(half);
        for (a, b) in top.iter_mut().zip(bottom.iter_mut()) {
            let (p, q) = (*a, *b);
            *a = c * p + s * q;
            *b = s * p + lower * q;
        }
    };
    let mut half = n / 2;
    while half >= 1 {
        if n >= PAR_THRESHOLD {
            x.par_chunks_mut(2 * half).for_each(|ch| stage(ch, half));
        } else {
            x.chunks_mut(2 * half).for_each(|ch| stage(ch, half));
        }
        half /= 2;
    }
}

/// Dominant eigenpair of the positive part `M_1^+(θ) = [[c, s], [s, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerronPair {
    pub theta: f64,
    pub rho: f64,
    pub q: [f64; 2],
}

pub fn perron_pair(theta: f64) -> Result<PerronPair> {
    if !(theta > 0.0 && theta < FRAC_PI_2) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    let (c, s) = (theta.cos(), theta.sin());
    let rho = 0.5 * (c + (c * c + 4.0 * s * s).sqrt());
    // second row of (M − ρ) q = 0 gives q ∝ (ρ, s)
    let norm = rho.hypot(s);
    Ok(PerronPair { theta, rho, q: [rho / norm, s / norm] })
}

impl PerronPair {
    /// `‖M_1^+ q − ρ q‖`.
    pub fn residual(&self) -> f64 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let [q1, q2] = self.q;
        (c * q1 + s * q2 - self.rho * q1).hypot(s * q1 - self.rho * q2)
    }

    /// `q^T A q = cos θ + 2 sin θ q₁ q₂`, the per-level growth of `⟨u_j, |M_j| u_j⟩`.
    pub fn absolute_rayleigh(&self) -> f64 {
        self.theta.cos() + 2.0 * self.theta.sin() * self.q[0] * self.q[1]
    }
}

/// Test vector `u_1 = q`, `u_{j+1} = (q₁ u_j ; q₂ u_j)`.
pub fn test_vector(pair: &PerronPair, j: usize) -> Vec<f64> {
    let mut u = pair.q.to_vec();
    for _ in 1..j {
        let mut next = Vec::with_capacity(2 * u.len());
        next.extend(u.iter().map(|x| pair.q[0] * x));
        next.extend(u.iter().map(|x| pair.q[1] * x));
        u = next;
    }
    u
}

/// `⟨u_j, |M_j| u_j⟩ / ‖u_j‖²`.
pub fn growth_ratio(family: &RotationFamily, pair: &PerronPair, j: usize) -> Result<f64> {
    let u = test_vector(pair, j);
    let mu = family.butterfly_matvec(j, &u, MatvecMode::Absolute)?;
    let num: f64 = u.iter().zip(&mu).map(|(a, b)| a * b).sum();
    let den: f64 = u.iter().map(|a| a * a).sum();
    Ok(num / den)
}

/// `T_j = M_j(π/4)`, the flat unit vector `w_j` and the box radii `α_j`.
#[derive(Debug, Clone)]
pub struct HadamardFamily {
    pub j: usize,
    pub transform: RotationFamily,
    /// entries `2^{-j/2}`
    pub w: Vec<f64>,
    /// entries `1/(j 2^{j/2})`
    pub alpha: Vec<f64>,
}

pub fn hadamard_family(j: usize) -> Result<HadamardFamily> {
    if j == 0 || j > BUTTERFLY_CAP {
        return Err(Error::TooLarge { j, cap: BUTTERFLY_CAP });
    }
    let n = 1usize << j;
    let entry = 2f64.powf(-(j as f64) / 2.0);
    Ok(HadamardFamily {
        j,
        transform: RotationFamily::new(std::f64::consts::FRAC_PI_4, j)?,
        w: vec![entry; n],
        alpha: vec![entry / j as f64; n],
    })
}

impl HadamardFamily {
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.transform.butterfly_matvec(self.j, v, MatvecMode::Signed)
    }
}

/// Closed-form sup values of the second counterexample on block `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ce2Values {
    pub j: usize,
    /// `sup |D_{j,1}(v,v)| = 1/j²`
    pub s_first: f64,
    /// `sup |D_{j,k}(v,v)| = 1/(4j²)`, `k ≥ 2`
    pub s_rest: f64,
    /// `‖𝒮_j(α)‖² = 1/j⁴ + (2^j − 1)/(16 j⁴)`
    pub norm_sq: f64,
    /// `2^j/(16 j⁴)`
    pub lower_bound: f64,
}

pub fn ce2_s_values(j: usize) -> Ce2Values {
    let jf = j as f64;
    let j2 = jf * jf;
    let j4 = j2 * j2;
    let p = 2f64.powi(j as i32);
    Ce2Values {
        j,
        s_first: 1.0 / j2,
        s_rest: 1.0 / (4.0 * j2),
        norm_sq: 1.0 / j4 + (p - 1.0) / (16.0 * j4),
        lower_bound: p / (16.0 * j4),
    }
}

/// Partial sums `Σ_{j ≤ J} ‖𝒮_j(α)‖²` for `J = 1…j_max`.
pub fn ce2_divergence(j_max: usize) -> Vec<f64> {
    (1..=j_max)
        .scan(0.0, |acc, j| {
            *acc += ce2_s_values(j).norm_sq;
            Some(*acc)
        })
        .collect()
}

/// Partial sums `Σ_{j ≤ J} ‖α_j‖² = Σ 1/j²`.
pub fn alpha_norm_sq_partial(j_max: usize) -> f64 {
    (1..=j_max).map(|j| 1.0 / (j as f64 * j as f64)).sum()
}
