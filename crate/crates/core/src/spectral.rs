//! Finite truncation of the spectral decomposition of Γ.
//!
//! A model is an ordered list of modes `(γ_i, μ_i)`; every vector and grid
//! function in the crate is positionally aligned with that ordering. All
//! spectral integrals `∫ · dμ` become weighted sums `Σ μ_i ·`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub id: usize,
    pub gamma: f64,
    pub mu: f64,
}

/// Which invariant subspace of the linear flow a projection selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Modes with `γ > 0`; trajectories `e^{-x/γ} h` decay forward in `x`.
    Stable,
    /// Modes with `γ < 0`.
    Unstable,
}

impl Side {
    pub fn contains(self, gamma: f64) -> bool {
        match self {
            Side::Stable => gamma > 0.0,
            Side::Unstable => gamma < 0.0,
        }
    }
}

/// Checks the mode-list invariants, reporting the first offending mode.
pub fn validate(modes: &[Mode]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::EmptyModel);
    }
    for (pos, m) in modes.iter().enumerate() {
        if m.id != pos {
            return Err(Error::InvalidConfig(format!(
                "mode ids must be contiguous from 0; position {pos} has id {}",
                m.id
            )));
        }
        if !m.gamma.is_finite() {
            return Err(Error::NonFinite(format!("gamma of mode {pos}")));
        }
        if !m.mu.is_finite() {
            return Err(Error::NonFinite(format!("mu of mode {pos}")));
        }
        if m.gamma == 0.0 {
            return Err(Error::ZeroGamma(pos));
        }
        if m.mu <= 0.0 {
            return Err(Error::NonpositiveMu(pos));
        }
    }
    Ok(())
}

/// Immutable list of spectral modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    modes: Vec<Mode>,
    gamma_max: f64,
}

impl SpectralModel {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        validate(&modes)?;
        let gamma_max = modes.iter().map(|m| m.gamma.abs()).fold(0.0, f64::max);
        Ok(Self { modes, gamma_max })
    }

    /// Builds a model from `(γ, μ)` pairs, assigning ids by position.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let modes = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (gamma, mu))| Mode { id, gamma, mu })
            .collect();
        Self::new(modes)
    }

    /// `n` modes with the same `γ` and unit weights, the ℓ² setting.
    pub fn uniform(n: usize, gamma: f64) -> Result<Self> {
        Self::from_pairs(std::iter::repeat_n((gamma, 1.0), n))
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    /// Smallest `|γ|`, the stiffest time constant.
    pub fn gamma_min(&self) -> f64 {
        self.modes.iter().map(|m| m.gamma.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn gammas(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.gamma)
    }

    pub fn mus(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.mu)
    }

    pub fn has_unit_weights(&self) -> bool {
        self.modes.iter().all(|m| m.mu == 1.0)
    }

    pub fn zeros(&self) -> SpectralVector {
        SpectralVector(vec![0.0; self.len()])
    }

    /// Weighted norm `(Σ μ_i v_i²)^{1/2}`.
    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        check_len(self.len(), v.len())?;
        Ok(self.norm_sq_unchecked(v).sqrt())
    }

    pub(crate) fn norm_sq_unchecked(&self, v: &[f64]) -> f64 {
        self.modes.iter().zip(v).map(|(m, x)| m.mu * x * x).sum()
    }

    /// Weighted inner product `Σ μ_i u_i v_i`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len(self.len(), u.len())?;
        check_len(self.len(), v.len())?;
        Ok(self.modes.iter().zip(u).zip(v).map(|((m, a), b)| m.mu * a * b).sum())
    }

    /// Zeroes every coordinate whose `γ` sign does not belong to `side`.
    pub fn project(&self, v: &[f64], side: Side) -> Result<SpectralVector> {
        check_len(self.len(), v.len())?;
        Ok(SpectralVector(
            self.modes
                .iter()
                .zip(v)
                .map(|(m, &x)| if side.contains(m.gamma) { x } else { 0.0 })
                .collect(),
        ))
    }

    /// Returns the first mode where `h` has support outside the stable side.
    pub(crate) fn check_stable_support(&self, h: &[f64]) -> Result<()> {
        check_len(self.len(), h.len())?;
        match self.modes.iter().zip(h).find(|(m, &x)| m.gamma < 0.0 && x != 0.0) {
            Some((m, _)) => Err(Error::UnstableSupport(m.id)),
            None => Ok(()),
        }
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            modes: self
                .modes
                .iter()
                .map(|m| ModeSpec { gamma: m.gamma, mu: m.mu })
                .collect(),
        }
    }
}

/// One value per mode, aligned with a [`SpectralModel`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralVector(pub Vec<f64>);

impl SpectralVector {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for SpectralVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for SpectralVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for SpectralVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// JSON form: `{"modes":[{"gamma": g, "mu": m}, …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub gamma: f64,
    pub mu: f64,
}

impl ModelSpec {
    pub fn build(&self) -> Result<SpectralModel> {
        SpectralModel::from_pairs(self.modes.iter().map(|m| (m.gamma, m.mu)))
    }
}

impl std::str::FromStr for SpectralModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelSpec>(s)?.build()
    }
}
