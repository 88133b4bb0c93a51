//! Task-parameterized hidden semi-Markov trajectory models.
//!
//! The emission layer is a TP-GMM over the robot state; on top of it sit
//! inter-component transition probabilities (self-transitions excluded) and
//! explicit Gaussian duration models. Component sequences are decoded with a
//! duration-explicit Viterbi dynamic program, and reference trajectories are
//! produced by a batch quadratic tracker over the decoded Gaussian sequence.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{Frame, Gaussian};
use crate::state::{EntityPose, WorldState};
use crate::tpgmm::{fit_em, EmConfig, FrameObservation, Tpgmm};

const DURATION_STD_FLOOR: f64 = 0.5;
const TRANSITION_SMOOTHING: f64 = 1e-3;

/// Gaussian dwell-time model of one component.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Duration {
    pub mean: f64,
    pub std: f64,
}

impl Duration {
    fn log_pdf(&self, d: usize) -> f64 {
        let z = (d as f64 - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Trajectory model: transition matrix, per-component durations, and the
/// task-parameterized emission mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tphsmm {
    /// Row-stochastic K x K matrix with zero diagonal (durations model dwell).
    pub trans: Vec<Vec<f64>>,
    pub durations: Vec<Duration>,
    pub emission: Tpgmm,
    /// Distribution over the first component of a run.
    pub initial: Vec<f64>,
}

/// A timed state sequence with the constant observation frames it was
/// recorded under (entity anchors at the first timestep plus any freely
/// chosen parameter poses).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Demonstration {
    pub states: Vec<WorldState>,
    /// Frame anchors by name, in the order given by the skill's parameters.
    pub frames: BTreeMap<String, EntityPose>,
}

impl Demonstration {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> &WorldState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &WorldState {
        &self.states[self.states.len() - 1]
    }
}

/// Most-likely component sequence: (component index, dwell steps) pairs.
pub type ComponentSchedule = Vec<(usize, usize)>;

/// Fits a TP-HSMM: emissions by EM, then transitions and durations from the
/// argmax-responsibility component assignment of every timestep.
pub fn fit_hsmm(
    observations: &[Vec<FrameObservation>],
    k: usize,
    config: &EmConfig,
) -> Result<Tphsmm> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("fit_hsmm demonstrations"));
    }
    let pooled: Vec<FrameObservation> = observations.iter().flatten().cloned().collect();
    if k > pooled.len() {
        return Err(Error::TooFewObservations { k, n: pooled.len() });
    }
    let emission = fit_em(&pooled, k, config)?.model;

    // Hard assignment per timestep, then run-length statistics.
    let mut counts = vec![vec![0.0f64; k]; k];
    let mut runs: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut first = vec![0.0f64; k];
    for demo in observations {
        let assigned: Vec<usize> = demo
            .iter()
            .map(|obs| {
                let mut best = 0;
                let mut best_lp = f64::NEG_INFINITY;
                for comp in 0..k {
                    let mut lp = emission.priors[comp].max(f64::MIN_POSITIVE).ln();
                    for (p, x) in obs.per_frame.iter().enumerate() {
                        lp += emission.comps[comp][p].log_pdf(x)?;
                    }
                    if lp > best_lp {
                        best_lp = lp;
                        best = comp;
                    }
                }
                Ok(best)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut run_comp = assigned[0];
        let mut run_len = 1usize;
        first[run_comp] += 1.0;
        for &comp in &assigned[1..] {
            if comp == run_comp {
                run_len += 1;
            } else {
                runs[run_comp].push(run_len);
                counts[run_comp][comp] += 1.0;
                run_comp = comp;
                run_len = 1;
            }
        }
        runs[run_comp].push(run_len);
    }

    let trans = if k == 1 {
        vec![vec![1.0]]
    } else {
        let mut trans = vec![vec![0.0f64; k]; k];
        for h in 0..k {
            let total: f64 = (0..k)
                .filter(|&j| j != h)
                .map(|j| counts[h][j] + TRANSITION_SMOOTHING)
                .sum();
            for j in 0..k {
                if j != h {
                    trans[h][j] = (counts[h][j] + TRANSITION_SMOOTHING) / total;
                }
            }
        }
        trans
    };

    let durations = runs
        .iter()
        .map(|lens| {
            if lens.is_empty() {
                return Duration { mean: 1.0, std: DURATION_STD_FLOOR };
            }
            let n = lens.len() as f64;
            let mean = lens.iter().sum::<usize>() as f64 / n;
            let var = lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
            Duration {
                mean,
                std: var.sqrt().max(DURATION_STD_FLOOR),
            }
        })
        .collect();

    let first_total: f64 = first.iter().map(|c| c + TRANSITION_SMOOTHING).sum();
    let initial = first
        .iter()
        .map(|c| (c + TRANSITION_SMOOTHING) / first_total)
        .collect();

    Ok(Tphsmm {
        trans,
        durations,
        emission,
        initial,
    })
}

impl Tphsmm {
    pub fn n_components(&self) -> usize {
        self.durations.len()
    }

    /// Binds the emission model to concrete frames, yielding one Gaussian per
    /// component alongside the temporal parameters.
    pub fn instantiate(&self, frames: &[Frame]) -> Result<InstantiatedHsmm> {
        let gmm = self.emission.instantiate(frames)?;
        Ok(InstantiatedHsmm {
            components: gmm.comps,
            trans: self.trans.clone(),
            durations: self.durations.clone(),
            initial: self.initial.clone(),
        })
    }

    /// Total expected duration, used as the default retrieval horizon.
    pub fn expected_horizon(&self) -> usize {
        let sum: f64 = self.durations.iter().map(|d| d.mean).sum();
        (sum.round() as usize).max(2)
    }
}

/// HSMM with concrete Gaussian emissions, ready for decoding and retrieval.
#[derive(Debug, Clone)]
pub struct InstantiatedHsmm {
    pub components: Vec<Gaussian>,
    pub trans: Vec<Vec<f64>>,
    pub durations: Vec<Duration>,
    pub initial: Vec<f64>,
}

impl InstantiatedHsmm {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    fn max_duration(&self, k: usize, horizon: usize) -> usize {
        let d = &self.durations[k];
        ((d.mean + 4.0 * d.std).ceil() as usize).clamp(1, horizon)
    }

    fn log_trans(&self, h: usize, k: usize) -> f64 {
        self.trans[h][k].max(f64::MIN_POSITIVE).ln()
    }

    fn log_initial(&self, k: usize) -> f64 {
        self.initial[k].max(f64::MIN_POSITIVE).ln()
    }
}

/// Duration-explicit Viterbi over (time, component, dwell).
///
/// Maximizes log emission likelihood over the observed prefix (future steps
/// contribute zero), log transition, and log Gaussian duration, exactly.
/// Ties resolve toward lower component index and shorter duration.
pub fn viterbi(
    model: &InstantiatedHsmm,
    observed_prefix: &[DVector<f64>],
    horizon: usize,
) -> Result<ComponentSchedule> {
    if horizon == 0 {
        return Err(Error::EmptyInput("viterbi horizon"));
    }
    let k = model.n_components();
    if k == 1 {
        return Ok(vec![(0, horizon)]);
    }

    // Cumulative emission log-likelihood per component over the prefix.
    let mut cum = vec![vec![0.0f64; horizon + 1]; k];
    for comp in 0..k {
        for t in 0..horizon {
            let e = if t < observed_prefix.len() {
                model.components[comp].log_pdf(&observed_prefix[t])?
            } else {
                0.0
            };
            cum[comp][t + 1] = cum[comp][t] + e;
        }
    }
    let emit = |comp: usize, start: usize, end: usize| cum[comp][end] - cum[comp][start];

    // best[t][k]: best score of a run of component k ending exactly at time t.
    let mut best = vec![vec![f64::NEG_INFINITY; k]; horizon + 1];
    let mut back: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; k]; horizon + 1];
    for t in 1..=horizon {
        for comp in 0..k {
            let d_max = model.max_duration(comp, horizon).min(t);
            for d in 1..=d_max {
                let start = t - d;
                let body = emit(comp, start, t) + model.durations[comp].log_pdf(d);
                if start == 0 {
                    let score = model.log_initial(comp) + body;
                    if score > best[t][comp] {
                        best[t][comp] = score;
                        back[t][comp] = Some((d, usize::MAX));
                    }
                } else {
                    for prev in 0..k {
                        if prev == comp {
                            continue;
                        }
                        let score = best[start][prev] + model.log_trans(prev, comp) + body;
                        if score > best[t][comp] {
                            best[t][comp] = score;
                            back[t][comp] = Some((d, prev));
                        }
                    }
                }
            }
        }
    }

    let mut comp = (0..k)
        .max_by(|&a, &b| best[horizon][a].total_cmp(&best[horizon][b]))
        .unwrap();
    let mut t = horizon;
    let mut schedule = Vec::new();
    while t > 0 {
        let (d, prev) = back[t][comp].expect("every reachable cell has a backpointer");
        schedule.push((comp, d));
        t -= d;
        if prev != usize::MAX {
            comp = prev;
        }
    }
    schedule.reverse();
    Ok(schedule)
}

/// Scores a schedule under the same objective the Viterbi DP maximizes.
/// Exposed for tests that cross-check the DP against enumeration.
pub fn schedule_score(
    model: &InstantiatedHsmm,
    observed_prefix: &[DVector<f64>],
    schedule: &ComponentSchedule,
) -> Result<f64> {
    let mut score = 0.0;
    let mut t = 0usize;
    for (i, &(comp, d)) in schedule.iter().enumerate() {
        score += if i == 0 {
            model.log_initial(comp)
        } else {
            model.log_trans(schedule[i - 1].0, comp)
        };
        score += model.durations[comp].log_pdf(d);
        for step in t..t + d {
            if step < observed_prefix.len() {
                score += model.components[comp].log_pdf(&observed_prefix[step])?;
            }
        }
        t += d;
    }
    Ok(score)
}

/// Expands a schedule into the per-step component index.
pub fn schedule_steps(schedule: &ComponentSchedule) -> Vec<usize> {
    schedule
        .iter()
        .flat_map(|&(comp, d)| std::iter::repeat(comp).take(d))
        .collect()
}

/// Batch quadratic tracker: minimizes
/// `sum_t (x_t - mu_{k_t})' Sigma_{k_t}^{-1} (x_t - mu_{k_t}) + lambda * sum_t |x_{t+1} - x_t|^2`
/// with `x_1` clamped to `start`, solved as one block-tridiagonal linear system.
pub fn retrieve_trajectory(
    model: &InstantiatedHsmm,
    schedule: &ComponentSchedule,
    start: &DVector<f64>,
    lambda: f64,
) -> Result<Vec<DVector<f64>>> {
    let steps = schedule_steps(schedule);
    let horizon = steps.len();
    let dim = model
        .components
        .first()
        .ok_or(Error::EmptyInput("hsmm components"))?
        .dim();
    if start.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: start.len(),
        });
    }
    if horizon <= 1 {
        return Ok(vec![start.clone(); horizon.max(1)]);
    }

    // Free variables are x_2..x_T stacked; x_1 is fixed at start.
    let n = (horizon - 1) * dim;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for t in 1..horizon {
        let row = (t - 1) * dim;
        let precision = model.components[steps[t]].precision();
        let mu = model.components[steps[t]].mean();
        for i in 0..dim {
            for j in 0..dim {
                h[(row + i, row + j)] += precision[(i, j)];
            }
        }
        let pm = &precision * mu;
        for i in 0..dim {
            rhs[row + i] += pm[i];
        }
        // Smoothness coupling to the previous step.
        if t == 1 {
            for i in 0..dim {
                h[(row + i, row + i)] += lambda;
                rhs[row + i] += lambda * start[i];
            }
        } else {
            let prev = (t - 2) * dim;
            for i in 0..dim {
                h[(row + i, row + i)] += lambda;
                h[(prev + i, prev + i)] += lambda;
                h[(row + i, prev + i)] -= lambda;
                h[(prev + i, row + i)] -= lambda;
            }
        }
    }
    let chol = nalgebra::Cholesky::new(h).ok_or(Error::SingularPrecision)?;
    let solution = chol.solve(&rhs);
    let mut out = Vec::with_capacity(horizon);
    out.push(start.clone());
    for t in 1..horizon {
        out.push(solution.rows((t - 1) * dim, dim).into_owned());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs1(x: f64) -> FrameObservation {
        FrameObservation::new(vec![DVector::from_vec(vec![x])])
    }

    fn two_phase_demo() -> Vec<FrameObservation> {
        // 10 steps near 0, then 10 near 5.
        (0..20)
            .map(|t| obs1(if t < 10 { 0.0 + 0.01 * t as f64 } else { 5.0 + 0.01 * t as f64 }))
            .collect()
    }

    #[test]
    fn two_phase_demo_yields_chain_transition() {
        let demo = two_phase_demo();
        let model = fit_hsmm(&[demo], 2, &EmConfig::default()).unwrap();
        // One component sits near 0, the other near 5; order depends on seeding.
        let low = if model.emission.comps[0][0].mean()[0] < 2.5 { 0 } else { 1 };
        let high = 1 - low;
        assert!(model.trans[low][high] >= 0.99);
        assert!(model.initial[low] > 0.9);
        assert_relative_eq!(model.durations[low].mean, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn single_component_is_degenerate_chain() {
        let demo: Vec<FrameObservation> = (0..12).map(|_| obs1(1.0)).collect();
        let horizon = demo.len();
        let model = fit_hsmm(&[demo], 1, &EmConfig::default()).unwrap();
        assert_eq!(model.trans, vec![vec![1.0]]);
        assert_relative_eq!(model.durations[0].mean, horizon as f64);
    }

    #[test]
    fn duplicated_demos_match_single_fit() {
        // Component order depends on seeding, so compare up to permutation.
        let order = |m: &Tphsmm| -> Vec<usize> {
            let mut idx = vec![0usize, 1];
            idx.sort_by(|&a, &b| {
                m.emission.comps[a][0].mean()[0].total_cmp(&m.emission.comps[b][0].mean()[0])
            });
            idx
        };
        let demo = two_phase_demo();
        let one = fit_hsmm(&[demo.clone()], 2, &EmConfig::default()).unwrap();
        let two = fit_hsmm(&[demo.clone(), demo], 2, &EmConfig::default()).unwrap();
        let (oa, ob) = (order(&one), order(&two));
        for slot in 0..2 {
            assert_relative_eq!(
                one.emission.comps[oa[slot]][0].mean()[0],
                two.emission.comps[ob[slot]][0].mean()[0],
                epsilon = 1e-9
            );
            assert_relative_eq!(
                one.durations[oa[slot]].mean,
                two.durations[ob[slot]].mean,
                epsilon = 1e-9
            );
        }
    }

    fn random_model(rng: &mut ChaCha8Rng, k: usize) -> InstantiatedHsmm {
        let components = (0..k)
            .map(|_| {
                Gaussian::isotropic(
                    DVector::from_vec(vec![rng.gen_range(-3.0..3.0)]),
                    rng.gen_range(0.3..1.5),
                )
                .unwrap()
            })
            .collect();
        let mut trans = vec![vec![0.0; k]; k];
        for h in 0..k {
            let mut total = 0.0f64;
            for j in 0..k {
                if j != h {
                    trans[h][j] = rng.gen_range(0.1..1.0);
                    total += trans[h][j];
                }
            }
            for j in 0..k {
                if j != h {
                    trans[h][j] /= total.max(1e-12);
                }
            }
            if k == 1 {
                trans[h][h] = 1.0;
            }
        }
        let durations = (0..k)
            .map(|_| Duration {
                mean: rng.gen_range(1.0..5.0),
                std: rng.gen_range(0.5..2.0),
            })
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        InstantiatedHsmm {
            components,
            trans,
            durations,
            initial: raw.into_iter().map(|v| v / total).collect(),
        }
    }

    fn enumerate_best(
        model: &InstantiatedHsmm,
        prefix: &[DVector<f64>],
        horizon: usize,
    ) -> f64 {
        fn recurse(
            model: &InstantiatedHsmm,
            prefix: &[DVector<f64>],
            partial: &mut ComponentSchedule,
            remaining: usize,
            best: &mut f64,
        ) {
            if remaining == 0 {
                let score = schedule_score(model, prefix, partial).unwrap();
                if score > *best {
                    *best = score;
                }
                return;
            }
            for comp in 0..model.n_components() {
                if let Some(&(last, _)) = partial.last() {
                    if last == comp {
                        continue;
                    }
                }
                let d_cap = model.max_duration(comp, remaining + partial.iter().map(|p| p.1).sum::<usize>());
                for d in 1..=remaining.min(d_cap) {
                    partial.push((comp, d));
                    recurse(model, prefix, partial, remaining - d, best);
                    partial.pop();
                }
            }
        }
        if model.n_components() == 1 {
            // Only one uninterrupted run exists; mirrors the decoder's K=1 case.
            return schedule_score(model, prefix, &vec![(0, horizon)]).unwrap();
        }
        let mut best = f64::NEG_INFINITY;
        recurse(model, prefix, &mut Vec::new(), horizon, &mut best);
        best
    }

    // Brute-force path enumeration oracle over all (K <= 3, T <= 8) models.
    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..200 {
            let k = 1 + case % 3;
            let horizon = 2 + case % 7;
            let model = random_model(&mut rng, k);
            let prefix: Vec<DVector<f64>> = (0..horizon.min(3))
                .map(|_| DVector::from_vec(vec![rng.gen_range(-3.0..3.0)]))
                .collect();
            let schedule = viterbi(&model, &prefix, horizon).unwrap();
            let total: usize = schedule.iter().map(|&(_, d)| d).sum();
            assert_eq!(total, horizon, "schedule must cover the horizon");
            let dp_score = schedule_score(&model, &prefix, &schedule).unwrap();
            let best = enumerate_best(&model, &prefix, horizon);
            assert_relative_eq!(dp_score, best, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn viterbi_single_component_fills_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 1);
        assert_eq!(viterbi(&model, &[], 7).unwrap(), vec![(0, 7)]);
    }

    #[test]
    fn deterministic_chain_with_peaked_durations() {
        let components = vec![
            Gaussian::isotropic(DVector::from_vec(vec![0.0]), 1.0).unwrap(),
            Gaussian::isotropic(DVector::from_vec(vec![5.0]), 1.0).unwrap(),
        ];
        let model = InstantiatedHsmm {
            components,
            trans: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            durations: vec![
                Duration { mean: 4.0, std: 0.5 },
                Duration { mean: 4.0, std: 0.5 },
            ],
            initial: vec![1.0 - 1e-9, 1e-9],
        };
        assert_eq!(viterbi(&model, &[], 8).unwrap(), vec![(0, 4), (1, 4)]);
    }

    #[test]
    fn viterbi_beats_random_schedules() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = random_model(&mut rng, 3);
        let horizon = 10;
        let prefix: Vec<DVector<f64>> = (0..4)
            .map(|_| DVector::from_vec(vec![rng.gen_range(-3.0..3.0)]))
            .collect();
        let best = schedule_score(
            &model,
            &prefix,
            &viterbi(&model, &prefix, horizon).unwrap(),
        )
        .unwrap();
        for _ in 0..1000 {
            // Random valid schedule: random cut points, random non-repeating labels.
            let mut schedule = Vec::new();
            let mut remaining = horizon;
            let mut last = usize::MAX;
            while remaining > 0 {
                let comp = loop {
                    let c = rng.gen_range(0..3);
                    if c != last {
                        break c;
                    }
                };
                let d = rng.gen_range(1..=remaining);
                schedule.push((comp, d));
                last = comp;
                remaining -= d;
            }
            let score = schedule_score(&model, &prefix, &schedule).unwrap();
            assert!(score <= best + 1e-9);
        }
    }

    #[test]
    fn retrieval_with_zero_smoothing_hits_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = random_model(&mut rng, 3);
        let schedule = vec![(0, 3), (1, 2), (2, 4)];
        let start = DVector::from_vec(vec![10.0]);
        let traj = retrieve_trajectory(&model, &schedule, &start, 0.0).unwrap();
        let steps = schedule_steps(&schedule);
        assert_eq!(traj.len(), steps.len());
        assert_relative_eq!(traj[0], start);
        for t in 1..steps.len() {
            assert_relative_eq!(
                traj[t],
                model.components[steps[t]].mean().clone(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn shared_mean_gives_constant_trajectory() {
        let mu = DVector::from_vec(vec![1.5, -2.0]);
        let components: Vec<Gaussian> = (0..2)
            .map(|i| Gaussian::isotropic(mu.clone(), 0.5 + 0.25 * i as f64).unwrap())
            .collect();
        let model = InstantiatedHsmm {
            components,
            trans: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            durations: vec![
                Duration { mean: 3.0, std: 1.0 },
                Duration { mean: 3.0, std: 1.0 },
            ],
            initial: vec![0.5, 0.5],
        };
        let traj =
            retrieve_trajectory(&model, &vec![(0, 3), (1, 3)], &DVector::zeros(2), 0.4).unwrap();
        for x in traj.iter().skip(1) {
            // Smoothness pulls toward the start a little, but the minimizer in
            // the limit of equal means stays on the segment toward mu.
            assert!((x - &mu).norm() < (DVector::<f64>::zeros(2) - &mu).norm());
        }
        let zero_lambda =
            retrieve_trajectory(&model, &vec![(0, 3), (1, 3)], &DVector::zeros(2), 0.0).unwrap();
        for x in zero_lambda.iter().skip(1) {
            assert_relative_eq!(x, &mu, epsilon = 1e-9);
        }
    }

    // Independent quadratic-program oracle: assemble the full objective over
    // all steps and minimize it with a separate dense solve.
    #[test]
    fn retrieval_objective_matches_qp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = random_model(&mut rng, 3);
        let schedule = vec![(1, 3), (0, 2), (2, 3)];
        let start = DVector::from_vec(vec![0.3]);
        let lambda = 0.1;
        let traj = retrieve_trajectory(&model, &schedule, &start, lambda).unwrap();
        let steps = schedule_steps(&schedule);

        let objective = |xs: &[DVector<f64>]| -> f64 {
            let mut obj = 0.0;
            for t in 1..steps.len() {
                let delta = &xs[t] - model.components[steps[t]].mean();
                obj += delta.dot(&(model.components[steps[t]].precision() * &delta));
            }
            for t in 0..steps.len() - 1 {
                obj += lambda * (&xs[t + 1] - &xs[t]).norm_squared();
            }
            obj
        };

        // Oracle: scalar variables, solve via explicitly assembled normal
        // equations built straight from the objective by finite differences
        // of the gradient around zero.
        let n = steps.len() - 1;
        let base: Vec<DVector<f64>> = std::iter::once(start.clone())
            .chain((0..n).map(|_| DVector::zeros(1)))
            .collect();
        let grad_at = |point: &[DVector<f64>]| -> DVector<f64> {
            let mut g = DVector::zeros(n);
            let eps = 1e-6;
            for i in 0..n {
                let mut plus = point.to_vec();
                plus[i + 1][0] += eps;
                let mut minus = point.to_vec();
                minus[i + 1][0] -= eps;
                g[i] = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            }
            g
        };
        let g0 = grad_at(&base);
        let mut hessian = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut shifted = base.clone();
            shifted[i + 1][0] += 1.0;
            let gi = grad_at(&shifted);
            for j in 0..n {
                hessian[(j, i)] = gi[j] - g0[j];
            }
        }
        let oracle_x = hessian.lu().solve(&(-g0)).unwrap();
        let oracle_traj: Vec<DVector<f64>> = std::iter::once(start)
            .chain((0..n).map(|i| DVector::from_vec(vec![oracle_x[i]])))
            .collect();
        let obj_impl = objective(&traj);
        let obj_oracle = objective(&oracle_traj);
        assert_relative_eq!(obj_impl, obj_oracle, max_relative = 1e-6);
    }

    #[test]
    fn retrieval_invariant_to_uniform_covariance_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = random_model(&mut rng, 2);
        let scaled = InstantiatedHsmm {
            components: model
                .components
                .iter()
                .map(|g| Gaussian::new(g.mean().clone(), g.cov() * 3.5).unwrap())
                .collect(),
            ..model.clone()
        };
        let schedule = vec![(0, 3), (1, 3)];
        let start = DVector::from_vec(vec![1.0]);
        let a = retrieve_trajectory(&model, &schedule, &start, 0.0).unwrap();
        let b = retrieve_trajectory(&scaled, &schedule, &start, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-9);
        }
    }
}
