//! Constraint-cone mathematics.
//!
//! A buffer of gradients defines the cone `{v : <v, g_i> >= 0 for all i}`.
//! The normalized spherical measure of that cone inside the span of the set
//! is estimated by Monte-Carlo sampling, and the pairwise-cosine surrogate
//! provides the cheap stand-in objective that selection strategies minimize.
//! `direction_variance` ties the two together: minimizing the surrogate is
//! maximizing the variance of the normalized gradient directions.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale};
use crate::model::GradientVector;

/// Vectors with norm at or below this are rejected as degenerate.
pub const EPSILON_NORM: f64 = 1e-12;

/// Orthonormalization drops directions whose residual falls below this
/// (relative to unit-normalized inputs).
pub const RANK_TOL: f64 = 1e-10;

/// A nonempty collection of same-dimension, non-degenerate gradients.
#[derive(Debug, Clone)]
pub struct GradientSet {
    vectors: Vec<GradientVector>,
    units: Vec<Vec<f64>>,
    dim: usize,
}

impl GradientSet {
    pub fn new(vectors: Vec<GradientVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyInput("gradient set"));
        }
        let dim = vectors[0].len();
        let mut units = Vec::with_capacity(vectors.len());
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let n = norm(&v.values);
            if n <= EPSILON_NORM {
                return Err(Error::DegenerateVector { norm: n });
            }
            units.push(v.values.iter().map(|x| x / n).collect());
        }
        Ok(GradientSet { vectors, units, dim })
    }

    pub fn from_raw(vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vectors.into_iter().map(GradientVector::new).collect())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[GradientVector] {
        &self.vectors
    }

    /// Unit-normalized members.
    pub fn units(&self) -> &[Vec<f64>] {
        &self.units
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &GradientVector, v: &GradientVector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(&u.values);
    let nv = norm(&v.values);
    if nu <= EPSILON_NORM {
        return Err(Error::DegenerateVector { norm: nu });
    }
    if nv <= EPSILON_NORM {
        return Err(Error::DegenerateVector { norm: nv });
    }
    Ok((dot(&u.values, &v.values) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Sum of pairwise cosines over all ordered pairs, including `i = j`:
/// the diagonal contributes exactly `M`.
pub fn surrogate(set: &GradientSet) -> f64 {
    let m = set.len();
    let mut off_diag = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            off_diag += dot(&set.units[i], &set.units[j]).clamp(-1.0, 1.0);
        }
    }
    m as f64 + 2.0 * off_diag
}

/// `1 - surrogate / M^2`: the empirical variance of the normalized vectors.
pub fn direction_variance(set: &GradientSet) -> f64 {
    let m = set.len() as f64;
    1.0 - surrogate(set) / (m * m)
}

/// Monte-Carlo estimate of the cone's share of the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleEstimate {
    /// Estimated normalized spherical measure within the span of the set.
    pub fraction: f64,
    pub samples_used: usize,
    /// Binomial standard error `sqrt(f (1-f) / n)`.
    pub std_error: f64,
}

/// Orthonormal basis of the span of `units`, dropping directions whose
/// residual norm falls below `tol`. Two orthogonalization passes.
fn orthonormal_basis(units: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for u in units {
        let mut v = u.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                axpy(-c, b, &mut v);
            }
        }
        let n = norm(&v);
        if n >= tol {
            scale(1.0 / n, &mut v);
            basis.push(v);
        }
    }
    basis
}

/// Estimates the fraction of the unit sphere of `span(set)` that satisfies
/// every constraint `<p, g_i> >= 0`.
///
/// Directions are drawn uniformly by normalizing standard normal samples in
/// the basis coordinates of the span; each mapped-back point is tested
/// against all members.
pub fn solid_angle_mc(
    set: &GradientSet,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AngleEstimate> {
    let basis = orthonormal_basis(&set.units, RANK_TOL);
    let r = basis.len();
    if r == 0 {
        return Err(Error::DegenerateSet);
    }
    // Member coordinates in the basis: <p, u_i> = <z, coords_i> for
    // p = sum_k z_k b_k, so the feasibility test never leaves the span.
    let coords: Vec<Vec<f64>> = set
        .units
        .iter()
        .map(|u| basis.iter().map(|b| dot(u, b)).collect())
        .collect();

    let mut hits = 0usize;
    let mut z = vec![0.0; r];
    for _ in 0..n_samples {
        loop {
            for zk in z.iter_mut() {
                *zk = rng.sample(StandardNormal);
            }
            let nz = norm(&z);
            if nz > 1e-300 {
                scale(1.0 / nz, &mut z);
                break;
            }
        }
        if coords.iter().all(|c| dot(&z, c) >= 0.0) {
            hits += 1;
        }
    }
    let fraction = hits as f64 / n_samples as f64;
    Ok(AngleEstimate {
        fraction,
        samples_used: n_samples,
        std_error: (fraction * (1.0 - fraction) / n_samples as f64).sqrt(),
    })
}

/// Draws `count` uniformly random unit vectors in dimension `dim`.
pub fn random_unit_set(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> GradientSet {
    let vectors = (0..count)
        .map(|_| {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&v);
                if n > EPSILON_NORM {
                    return v.iter().map(|x| x / n).collect::<Vec<f64>>();
                }
            }
        })
        .collect();
    GradientSet::from_raw(vectors).expect("unit vectors are non-degenerate")
}

/// One (surrogate, estimated angle fraction) observation per trial, plus the
/// Spearman rank correlation between the two columns.
#[derive(Debug, Clone)]
pub struct CorrelationResult {
    pub pairs: Vec<(f64, f64)>,
    /// Absent when fewer than two trials or a column is constant.
    pub spearman: Option<f64>,
    pub mc_samples: usize,
}

impl CorrelationResult {
    /// Two-column CSV plus a one-line summary footer.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "surrogate,angle_fraction")?;
        for (s, a) in &self.pairs {
            writeln!(w, "{s},{a}")?;
        }
        let rho = match self.spearman {
            Some(r) => format!("{r}"),
            None => "nan".to_string(),
        };
        writeln!(
            w,
            "# rho={rho},trials={},samples={}",
            self.pairs.len(),
            self.mc_samples
        )?;
        Ok(())
    }
}

/// Per trial: draws `set_size` random unit vectors in dimension `d`, records
/// the surrogate and the Monte-Carlo angle fraction.
pub fn correlation_experiment(
    d: usize,
    set_size: usize,
    trials: usize,
    mc_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CorrelationResult> {
    if trials == 0 {
        return Err(Error::EmptyInput("correlation experiment with zero trials"));
    }
    let mut pairs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let set = random_unit_set(d, set_size, rng);
        let s = surrogate(&set);
        let est = solid_angle_mc(&set, mc_samples, rng)?;
        pairs.push((s, est.fraction));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(CorrelationResult {
        spearman: spearman(&xs, &ys),
        pairs,
        mc_samples,
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average rank for ties, 1-based
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[order[k]] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two observations or a column has no variation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
