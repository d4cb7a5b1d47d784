//! Maximization of `|vᵀAv|` over the box `|v_i| ≤ α_i`.
//!
//! The lower bound is always a value attained at a recorded point of the box,
//! the upper bound is `αᵀ|A|α`. Both are summed in the same order, so rounding
//! can never invert them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Controls the search for the lower bound of each slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// enumerate `{−α,0,α}^m` exactly when the active dimension `m` is at most this
    pub exhaustive_max: usize,
    /// random starts for larger slices
    pub samples: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { exhaustive_max: 16, samples: 512, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SliceResult {
    pub lower: f64,
    pub upper: f64,
    pub witness: Vec<f64>,
    pub exhaustive: bool,
}

impl SliceResult {
    /// Scatter the witness from the active coordinates back into `n` coordinates.
    pub fn with_support(mut self, support: Vec<usize>, n: usize) -> Self {
        let mut full = vec![0.0; n];
        for (v, i) in self.witness.iter().zip(support) {
            full[i] = *v;
        }
        self.witness = full;
        self
    }
}

fn quad_form(a: &[f64], v: &[f64]) -> f64 {
    let m = v.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += a[i * m + j] * v[i] * v[j];
        }
    }
    acc
}

fn abs_quad_form(a: &[f64], v: &[f64]) -> f64 {
    let m = v.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += a[i * m + j].abs() * v[i] * v[j];
        }
    }
    acc
}

pub(crate) fn bracket_slice(a: &[f64], radii: &[f64], budget: &SearchBudget, stream: u64) -> SliceResult {
    let m = radii.len();
    let upper = abs_quad_form(a, radii);
    if m == 0 || upper == 0.0 {
        return SliceResult { lower: 0.0, upper, witness: vec![0.0; m], exhaustive: true };
    }
    let mut b = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            b[i * m + j] = 0.5 * (a[i * m + j] + a[j * m + i]);
        }
    }
    let exhaustive = m <= budget.exhaustive_max;
    let witness = if exhaustive {
        Lattice::new(&b, radii).run()
    } else {
        random_search(&b, radii, budget, stream)
    };
    let lower = quad_form(a, &witness).abs();
    SliceResult { lower, upper, witness, exhaustive }
}

/// Depth-first walk of `{+1,0,−1}^m`, highest coordinate first, carrying the partial
/// products `h_k = Σ_{i fixed} B_{ki} v_i` for the coordinates still free. Points whose
/// first nonzero digit is `−1` are skipped since `q(−v) = q(v)`.
struct Lattice<'a> {
    b: &'a [f64],
    radii: &'a [f64],
    m: usize,
    /// `h` for every level, row `level` holds the products seen by coordinates `< level`
    h: Vec<f64>,
    digits: Vec<i8>,
    best: f64,
    best_digits: Vec<i8>,
}

impl<'a> Lattice<'a> {
    fn new(b: &'a [f64], radii: &'a [f64]) -> Self {
        let m = radii.len();
        Self { b, radii, m, h: vec![0.0; (m + 1) * m], digits: vec![0; m], best: -1.0, best_digits: vec![0; m] }
    }

    fn run(mut self) -> Vec<f64> {
        self.descend(self.m, 0.0, true);
        self.best_digits.iter().zip(self.radii).map(|(d, r)| f64::from(*d) * r).collect()
    }

    fn record(&mut self, q: f64) {
        if q.abs() > self.best {
            self.best = q.abs();
            self.best_digits.copy_from_slice(&self.digits);
        }
    }

    fn descend(&mut self, level: usize, q: f64, canonical: bool) {
        let m = self.m;
        let i = level - 1;
        let hi = self.h[level * m + i];
        let bii = self.b[i * m + i];
        let r = self.radii[i];
        for d in [1i8, 0, -1] {
            if d == -1 && canonical {
                continue;
            }
            let v = f64::from(d) * r;
            let qn = if d == 0 { q } else { q + v * (2.0 * hi + bii * v) };
            self.digits[i] = d;
            if i == 0 {
                self.record(qn);
                continue;
            }
            let (lo, hi_rows) = self.h.split_at_mut(level * m);
            let src = &hi_rows[..i];
            let dst = &mut lo[(level - 1) * m..(level - 1) * m + i];
            if d == 0 {
                dst.copy_from_slice(src);
            } else {
                for (k, (o, s)) in dst.iter_mut().zip(src).enumerate() {
                    *o = s + self.b[k * m + i] * v;
                }
            }
            self.descend(level - 1, qn, canonical && d == 0);
        }
        self.digits[i] = 0;
    }
}

fn random_search(b: &[f64], radii: &[f64], budget: &SearchBudget, stream: u64) -> Vec<f64> {
    let m = radii.len();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    rng.set_stream(stream);
    let mut v = vec![0.0; m];
    // best start for maximizing q and for minimizing q
    let mut starts: [(f64, Vec<f64>); 2] = [(f64::NEG_INFINITY, radii.to_vec()), (f64::INFINITY, radii.to_vec())];
    for s in 0..budget.samples.max(1) {
        for (x, r) in v.iter_mut().zip(radii) {
            *x = if s % 2 == 0 {
                match rng.gen_range(0..5) {
                    0 => 0.0,
                    1 | 2 => *r,
                    _ => -r,
                }
            } else {
                rng.gen_range(-1.0..=1.0) * r
            };
        }
        let q = quad_form(b, &v);
        if q > starts[0].0 {
            starts[0] = (q, v.clone());
        }
        if q < starts[1].0 {
            starts[1] = (q, v.clone());
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for (sign, (_, start)) in [1.0, -1.0].into_iter().zip(starts) {
        let polished = coordinate_ascent(b, radii, start, sign);
        let q = quad_form(b, &polished).abs();
        if q > best.0 {
            best = (q, polished);
        }
    }
    best.1
}

/// Maximize `sign·vᵀBv` one coordinate at a time; each step solves its 1-D quadratic exactly.
fn coordinate_ascent(b: &[f64], radii: &[f64], mut v: Vec<f64>, sign: f64) -> Vec<f64> {
    let m = v.len();
    let mut h: Vec<f64> = (0..m).map(|i| (0..m).map(|k| b[i * m + k] * v[k]).sum()).collect();
    for _ in 0..200 {
        let mut improved = false;
        for i in 0..m {
            let bii = b[i * m + i];
            let g = h[i] - bii * v[i];
            let f = |t: f64| sign * (bii * t * t + 2.0 * g * t);
            let r = radii[i];
            let mut cands = vec![r, -r];
            if sign * bii < 0.0 {
                cands.push((-g / bii).clamp(-r, r));
            }
            let now = f(v[i]);
            let (t, val) = cands.into_iter().map(|t| (t, f(t))).fold((v[i], now), |acc, c| if c.1 > acc.1 { c } else { acc });
            if val > now + 1e-15 * now.abs().max(1e-300) {
                let delta = t - v[i];
                v[i] = t;
                for k in 0..m {
                    h[k] += b[k * m + i] * delta;
                }
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    v
}
