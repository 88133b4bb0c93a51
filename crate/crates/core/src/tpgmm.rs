//! Task-parameterized Gaussian mixture models.
//!
//! A TP-GMM holds, for each of K components, one Gaussian per observation
//! frame. The frames cannot be learned independently: EM responsibilities come
//! from the product of per-frame likelihoods, and the M-step re-estimates each
//! frame with the shared responsibilities. Given concrete frames the model
//! collapses into a single GMM by multiplying the affine-transformed
//! per-frame components.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{log_sum_exp, product, regularize, Frame, Gaussian};

/// One datum observed from every frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameObservation {
    pub per_frame: Vec<DVector<f64>>,
}

impl FrameObservation {
    pub fn new(per_frame: Vec<DVector<f64>>) -> Self {
        Self { per_frame }
    }

    /// Observes one global datum through each of the given frames.
    pub fn observe(global: &DVector<f64>, frames: &[Frame]) -> Self {
        Self {
            per_frame: frames.iter().map(|f| f.observe(global)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop when the log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Variance added to every per-frame covariance diagonal after the
    /// M-step. Zero for exact models; constraint models use a desk-scale floor.
    pub cov_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            seed: 0,
            cov_floor: 0.0,
        }
    }
}

/// Task-parameterized GMM: priors over K components, each with P per-frame Gaussians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tpgmm {
    pub priors: Vec<f64>,
    /// `comps[k][p]` is component k seen from frame p.
    pub comps: Vec<Vec<Gaussian>>,
}

impl Tpgmm {
    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    pub fn n_frames(&self) -> usize {
        self.comps.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.comps
            .first()
            .and_then(|c| c.first())
            .map_or(0, Gaussian::dim)
    }

    /// Collapses the model into a single GMM given one concrete frame per slot.
    ///
    /// Component k is the product over frames of the affine-transformed
    /// per-frame Gaussians; weights are `pi_k * exp(log_scale_k)`, renormalized.
    pub fn instantiate(&self, frames: &[Frame]) -> Result<Gmm> {
        if frames.len() != self.n_frames() {
            return Err(Error::FrameCountMismatch {
                expected: self.n_frames(),
                got: frames.len(),
            });
        }
        let mut comps = Vec::with_capacity(self.n_components());
        let mut log_weights = Vec::with_capacity(self.n_components());
        for (k, per_frame) in self.comps.iter().enumerate() {
            let transformed = per_frame
                .iter()
                .zip(frames)
                .map(|(g, f)| g.transform(f))
                .collect::<Result<Vec<_>>>()?;
            let (merged, log_scale) = product(&transformed)?;
            comps.push(merged);
            log_weights.push(self.priors[k].max(f64::MIN_POSITIVE).ln() + log_scale);
        }
        let norm = log_sum_exp(&log_weights);
        let weights = log_weights.iter().map(|lw| (lw - norm).exp()).collect();
        Ok(Gmm { weights, comps })
    }

    fn joint_log_pdf(&self, obs: &FrameObservation) -> Result<Vec<f64>> {
        (0..self.n_components())
            .map(|k| {
                let mut lp = self.priors[k].max(f64::MIN_POSITIVE).ln();
                for (p, x) in obs.per_frame.iter().enumerate() {
                    lp += self.comps[k][p].log_pdf(x)?;
                }
                Ok(lp)
            })
            .collect()
    }
}

/// Result of an EM fit; `model` is the learned TP-GMM, the trace records the
/// per-iteration joint log-likelihood.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: Tpgmm,
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// Learns a TP-GMM on multi-frame observations.
///
/// Initialization is deterministic k-means++ style seeding on the
/// concatenated per-frame coordinates, driven by `config.seed`.
pub fn fit_em(data: &[FrameObservation], k: usize, config: &EmConfig) -> Result<EmFit> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyInput("fit_em observations"));
    }
    if k == 0 || k > n {
        return Err(Error::TooFewObservations { k, n });
    }
    let n_frames = data[0].per_frame.len();
    let dim = data[0].per_frame[0].len();
    for obs in data {
        if obs.per_frame.len() != n_frames {
            return Err(Error::FrameCountMismatch {
                expected: n_frames,
                got: obs.per_frame.len(),
            });
        }
        for x in &obs.per_frame {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
        }
    }

    // Responsibilities start from hard k-means++ assignments.
    let concat: Vec<DVector<f64>> = data
        .iter()
        .map(|obs| {
            DVector::from_iterator(
                n_frames * dim,
                obs.per_frame.iter().flat_map(|x| x.iter().copied()),
            )
        })
        .collect();
    let centers = kmeans_pp_centers(&concat, k, config.seed);
    let mut resp = vec![vec![0.0f64; k]; n];
    for (i, x) in concat.iter().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| {
                let da = (x - &concat[centers[a]]).norm_squared();
                let db = (x - &concat[centers[b]]).norm_squared();
                da.total_cmp(&db)
            })
            .unwrap();
        resp[i][best] = 1.0;
    }

    let mut model = m_step(data, &resp, n_frames, dim, config.cov_floor)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        // E-step
        let mut ll = 0.0f64;
        for (i, obs) in data.iter().enumerate() {
            let joint = model.joint_log_pdf(obs)?;
            let norm = log_sum_exp(&joint);
            ll += norm;
            for k_i in 0..k {
                resp[i][k_i] = (joint[k_i] - norm).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            if (ll - prev).abs() < config.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        model = m_step(data, &resp, n_frames, dim, config.cov_floor)?;
    }
    Ok(EmFit {
        model,
        log_likelihood_trace: trace,
        converged,
    })
}

fn m_step(
    data: &[FrameObservation],
    resp: &[Vec<f64>],
    n_frames: usize,
    dim: usize,
    cov_floor: f64,
) -> Result<Tpgmm> {
    let n = data.len();
    let k = resp[0].len();
    let mut priors = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for k_i in 0..k {
        let mass: f64 = (0..n).map(|i| resp[i][k_i]).sum();
        if mass < 1e-12 {
            // Dead component: park it on the first observation with a unit
            // covariance and a vanishing prior.
            priors.push(1e-12);
            let per_frame = (0..n_frames)
                .map(|p| Gaussian::isotropic(data[0].per_frame[p].clone(), 1.0))
                .collect::<Result<Vec<_>>>()?;
            comps.push(per_frame);
            continue;
        }
        priors.push(mass / n as f64);
        let mut per_frame = Vec::with_capacity(n_frames);
        for p in 0..n_frames {
            let mut mean = DVector::zeros(dim);
            for (i, obs) in data.iter().enumerate() {
                mean += &obs.per_frame[p] * resp[i][k_i];
            }
            mean /= mass;
            let mut cov = nalgebra::DMatrix::zeros(dim, dim);
            for (i, obs) in data.iter().enumerate() {
                let delta = &obs.per_frame[p] - &mean;
                cov += (&delta * delta.transpose()) * resp[i][k_i];
            }
            cov /= mass;
            if cov_floor > 0.0 {
                for d_i in 0..dim {
                    cov[(d_i, d_i)] += cov_floor;
                }
            }
            per_frame.push(Gaussian::new(mean, regularize(cov))?);
        }
        comps.push(per_frame);
    }
    let total: f64 = priors.iter().sum();
    for p in &mut priors {
        *p /= total;
    }
    Ok(Tpgmm { priors, comps })
}

fn kmeans_pp_centers(points: &[DVector<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut centers = vec![rng.gen_range(0..n)];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|&c| (x - &points[c]).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a center; take any free index.
            (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(next);
    }
    centers
}

/// Ordinary Gaussian mixture, the instantiated form of a TP-GMM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub comps: Vec<Gaussian>,
}

impl Gmm {
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if self.comps.is_empty() {
            return Err(Error::EmptyInput("gmm components"));
        }
        let terms = self
            .weights
            .iter()
            .zip(&self.comps)
            .map(|(w, g)| Ok(w.max(f64::MIN_POSITIVE).ln() + g.log_pdf(x)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Mean of the component maximizing `w_k * pdf_k(mu_k)`; lowest index wins
    /// exact ties.
    pub fn mode(&self) -> Result<DVector<f64>> {
        if self.comps.is_empty() {
            return Err(Error::EmptyInput("gmm components"));
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, (w, g)) in self.weights.iter().zip(&self.comps).enumerate() {
            let score = w.max(f64::MIN_POSITIVE).ln() + g.log_pdf(g.mean())?;
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        Ok(self.comps[best].mean().clone())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let mut target: f64 = rng.gen_range(0.0..1.0);
        let mut idx = self.comps.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            if target < *w {
                idx = k;
                break;
            }
            target -= w;
        }
        self.comps[idx].sample(rng)
    }
}
