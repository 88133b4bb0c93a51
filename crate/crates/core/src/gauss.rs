//! Multivariate Gaussian algebra: density evaluation, affine transformation and
//! products of Gaussians. Everything downstream (mixtures, skill models, network
//! constraints) is built on these three operations.
//!
//! Densities are carried in log space internally; linear-space values only
//! appear at API boundaries. All types are immutable after construction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const MIN_EIGENVALUE: f64 = 1e-9;
const FRAME_DET_TOL: f64 = 1e-12;

/// Multivariate normal with cached Cholesky factorization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

/// Serialized form: plain mean vector and covariance rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRepr> for Gaussian {
    type Error = Error;

    fn try_from(repr: GaussianRepr) -> Result<Self> {
        let d = repr.mean.len();
        for row in &repr.cov {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        }
        if repr.cov.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: repr.cov.len(),
            });
        }
        let mean = DVector::from_vec(repr.mean);
        let cov = DMatrix::from_fn(d, d, |i, j| repr.cov[i][j]);
        Gaussian::new(mean, cov)
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        let d = g.dim();
        GaussianRepr {
            mean: g.mean.iter().copied().collect(),
            cov: (0..d)
                .map(|i| (0..d).map(|j| g.cov[(i, j)]).collect())
                .collect(),
        }
    }
}

impl Gaussian {
    /// Validates symmetry and positive definiteness, then caches the factorization.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        let mut max_asym = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                max_asym = max_asym.max((cov[(i, j)] - cov[(j, i)]).abs());
            }
        }
        if max_asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { max_asym });
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        Ok(Self {
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    /// Isotropic Gaussian, mostly used in tests and small-sample guards.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let delta = x - &self.mean;
        let solved = self.chol.solve(&delta);
        Ok(self.log_norm - 0.5 * delta.dot(&solved))
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Pushes the distribution through `x -> A x + b`.
    pub fn transform(&self, frame: &Frame) -> Result<Gaussian> {
        if frame.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: frame.dim(),
            });
        }
        let mean = frame.a() * &self.mean + frame.b();
        let cov = frame.a() * &self.cov * frame.a().transpose();
        Gaussian::new(mean, symmetrize(cov))
    }

    /// Draws one sample using the cached Cholesky factor.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        use rand::distributions::Distribution;
        let normal = rand::distributions::Standard;
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| {
                // Box-Muller over uniform draws keeps us off distribution-crate internals.
                let u1: f64 = normal.sample(rng);
                let u2: f64 = normal.sample(rng);
                (-2.0 * (1.0 - u1).max(f64::MIN_POSITIVE).ln()).sqrt()
                    * (2.0 * std::f64::consts::PI * u2).cos()
            }),
        );
        &self.mean + self.chol.l() * z
    }
}

/// Affine observation frame `x_global = A x_local + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FrameRepr", into = "FrameRepr")]
pub struct Frame {
    a: DMatrix<f64>,
    b: DVector<f64>,
    a_inv: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRepr {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<FrameRepr> for Frame {
    type Error = Error;

    fn try_from(repr: FrameRepr) -> Result<Self> {
        let d = repr.b.len();
        if repr.a.len() != d || repr.a.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: repr.a.len(),
            });
        }
        let a = DMatrix::from_fn(d, d, |i, j| repr.a[i][j]);
        Frame::new(a, DVector::from_vec(repr.b))
    }
}

impl From<Frame> for FrameRepr {
    fn from(f: Frame) -> Self {
        let d = f.dim();
        FrameRepr {
            a: (0..d)
                .map(|i| (0..d).map(|j| f.a[(i, j)]).collect())
                .collect(),
            b: f.b.iter().copied().collect(),
        }
    }
}

impl Frame {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = b.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: a.nrows().max(a.ncols()),
            });
        }
        let det = a.determinant();
        if det.abs() <= FRAME_DET_TOL {
            return Err(Error::SingularFrame { det });
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or(Error::SingularFrame { det })?;
        Ok(Self { a, b, a_inv })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
            a_inv: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Global coordinates of a local point.
    pub fn apply(&self, local: &DVector<f64>) -> DVector<f64> {
        &self.a * local + &self.b
    }

    /// Local coordinates of a global point.
    pub fn observe(&self, global: &DVector<f64>) -> DVector<f64> {
        &self.a_inv * (global - &self.b)
    }

    pub fn inverse(&self) -> Frame {
        Frame {
            a: self.a_inv.clone(),
            b: -(&self.a_inv * &self.b),
            a_inv: self.a.clone(),
        }
    }
}

/// Product of Gaussians in precision form.
///
/// Returns the normalized Gaussian and `log_scale` such that
/// `prod_p pdf_p(x) = exp(log_scale) * pdf_result(x)` for all `x`.
pub fn product(gs: &[Gaussian]) -> Result<(Gaussian, f64)> {
    let first = gs.first().ok_or(Error::EmptyInput("product of Gaussians"))?;
    let d = first.dim();
    let mut precision_sum = DMatrix::<f64>::zeros(d, d);
    let mut information = DVector::<f64>::zeros(d);
    for g in gs {
        if g.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: g.dim(),
            });
        }
        let precision = g.precision();
        information += &precision * g.mean();
        precision_sum += precision;
    }
    let chol = Cholesky::new(symmetrize(precision_sum)).ok_or(Error::SingularPrecision)?;
    let cov = symmetrize(chol.inverse());
    let mean = chol.solve(&information);
    let result = Gaussian::new(mean, cov)?;
    let at = result.mean().clone();
    let mut log_scale = -result.log_pdf(&at)?;
    for g in gs {
        log_scale += g.log_pdf(&at)?;
    }
    Ok((result, log_scale))
}

/// Covariance regularization applied after every estimation step.
///
/// Adds `eps I` with `eps = 1e-6 * trace / d` whenever the smallest eigenvalue
/// drops below 1e-9; a floor of 1e-9 covers all-zero covariances from
/// noiseless data, where the trace rule alone would leave the matrix singular.
pub fn regularize(cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let mut cov = symmetrize(cov);
    let min_eig = cov
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < MIN_EIGENVALUE {
        let eps = (1e-6 * cov.trace() / d as f64)
            .max(MIN_EIGENVALUE - min_eig.min(0.0))
            .max(MIN_EIGENVALUE);
        for i in 0..d {
            cov[(i, i)] += eps;
        }
    }
    cov
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Numerically stable `log(sum(exp(xs)))`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
