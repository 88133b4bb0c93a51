//! Geometric task network learning.
//!
//! Plans are wrapped with virtual start/end actions; every action-state-action
//! triple contributes an edge and an augmented state (post-transition state,
//! chosen parameters, goal state). Each edge then carries a set of constraint
//! TP-GMMs: one per free parameter of the target skill (how the parameter
//! relates to current and goal state) and one per involved object (how the
//! scene must look for the transition to apply). Component counts equal the
//! number of distinct discrete plans using the edge, so the same transition
//! can keep separate modes for different plan shapes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{Frame, Gaussian};
use crate::skill::{SkillModel, TaskParams};
use crate::state::{EntityId, WorldState};
use crate::tamp::PlanDataset;
use crate::tpgmm::{fit_em, EmConfig, FrameObservation, Tpgmm};

pub const START_NODE: &str = "__start__";
pub const END_NODE: &str = "__end__";

pub type Edge = (String, String);

/// (post-transition state, parameters of the next skill, goal state)
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentedState {
    pub state: WorldState,
    pub params: TaskParams,
    pub goal: WorldState,
}

/// Constraint models attached to one edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// One TP-GMM per free parameter of the target skill.
    pub param_models: BTreeMap<String, Tpgmm>,
    /// One TP-GMM per object involved in the target skill.
    pub object_models: BTreeMap<EntityId, Tpgmm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeModel {
    pub n_components: usize,
    /// All target-skill parameters in declaration order (frame order for the
    /// object constraints).
    pub target_params: Vec<String>,
    pub constraints: ConstraintSet,
}

/// The learned network: nodes, edges and per-edge constraint sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gtn {
    pub nodes: Vec<String>,
    /// from -> to -> model
    pub edges: BTreeMap<String, BTreeMap<String, EdgeModel>>,
}

impl Gtn {
    pub fn edge(&self, from: &str, to: &str) -> Result<&EdgeModel> {
        self.edges
            .get(from)
            .and_then(|m| m.get(to))
            .ok_or_else(|| Error::EdgeAbsent(from.to_string(), to.to_string()))
    }

    pub fn outgoing(&self, from: &str) -> impl Iterator<Item = (&String, &EdgeModel)> {
        self.edges.get(from).into_iter().flatten()
    }

    pub fn edge_list(&self) -> Vec<Edge> {
        self.edges
            .iter()
            .flat_map(|(u, m)| m.keys().map(move |v| (u.clone(), v.clone())))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    /// Total constraint component count, the size measure reported by the
    /// benchmark harness.
    pub fn total_components(&self) -> usize {
        self.edges
            .values()
            .flat_map(BTreeMap::values)
            .map(|e| {
                e.constraints
                    .param_models
                    .values()
                    .chain(e.constraints.object_models.values())
                    .map(Tpgmm::n_components)
                    .sum::<usize>()
            })
            .sum()
    }

    /// True when the discrete plan (unwrapped) is a walk through the network.
    pub fn contains_walk(&self, discrete: &[String]) -> bool {
        let seq = wrap_discrete(discrete);
        seq.windows(2)
            .all(|w| self.edge(&w[0], &w[1]).is_ok())
    }
}

/// Discrete plan wrapped with the virtual start and end actions.
pub fn wrap_discrete(discrete: &[String]) -> Vec<String> {
    let mut seq = Vec::with_capacity(discrete.len() + 2);
    seq.push(START_NODE.to_string());
    seq.extend(discrete.iter().cloned());
    seq.push(END_NODE.to_string());
    seq
}

/// Builds the edge set and the per-edge buckets of augmented states.
pub fn collect_transitions(
    dataset: &PlanDataset,
) -> (Vec<Edge>, BTreeMap<Edge, Vec<AugmentedState>>) {
    let mut buckets: BTreeMap<Edge, Vec<AugmentedState>> = BTreeMap::new();
    for plan in &dataset.plans {
        let goal = plan.reached().clone();
        // (previous action, state between, next action with params)
        let mut prev = START_NODE.to_string();
        for step in &plan.steps {
            let edge = (prev.clone(), step.skill.clone());
            buckets.entry(edge).or_default().push(AugmentedState {
                state: step.state.clone(),
                params: step.params.clone(),
                goal: goal.clone(),
            });
            prev = step.skill.clone();
        }
        let end_edge = (prev, END_NODE.to_string());
        buckets.entry(end_edge).or_default().push(AugmentedState {
            state: plan.reached().clone(),
            params: TaskParams(BTreeMap::new()),
            goal,
        });
    }
    (buckets.keys().cloned().collect(), buckets)
}

/// Number of distinct discrete plans containing the edge.
pub fn n_components(dataset: &PlanDataset, edge: &Edge) -> Result<usize> {
    let mut shapes = std::collections::BTreeSet::new();
    for plan in &dataset.plans {
        let seq = wrap_discrete(&plan.discrete());
        if seq
            .windows(2)
            .any(|w| w[0] == edge.0 && w[1] == edge.1)
        {
            shapes.insert(seq);
        }
    }
    if shapes.is_empty() {
        return Err(Error::EdgeAbsent(edge.0.clone(), edge.1.clone()));
    }
    Ok(shapes.len())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GtnConfig {
    /// Variance floor for constraint models; keeps scores calibrated under
    /// execution noise.
    pub cov_floor: f64,
    /// Isotropic std used when an edge has fewer than 3 samples.
    pub small_bucket_sigma: f64,
    pub seed: u64,
}

impl Default for GtnConfig {
    fn default() -> Self {
        Self {
            cov_floor: 9e-4,
            small_bucket_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Frames for the free-parameter constraints: robot and object poses from the
/// current state, then object poses from the goal state.
pub fn param_constraint_frames(state: &WorldState, goal: &WorldState) -> Vec<Frame> {
    let mut frames = vec![state.robot.frame()];
    for pose in state.objects.values() {
        frames.push(pose.frame());
    }
    for pose in goal.objects.values() {
        frames.push(pose.frame());
    }
    frames
}

/// Frames for object `o`'s constraint on an edge targeting a skill with
/// objects `target_objects` and parameters `target_params` (resolved in
/// `tp`): robot and the other involved objects from the current state, every
/// target parameter pose, then the involved objects' goal poses.
pub fn object_constraint_frames(
    state: &WorldState,
    goal: &WorldState,
    target_objects: &[EntityId],
    target_params: &[String],
    tp: &TaskParams,
    object: &str,
) -> Result<Vec<Frame>> {
    let mut frames = vec![state.robot.frame()];
    for id in target_objects {
        if id != object {
            frames.push(state.entity(id)?.frame());
        }
    }
    for name in target_params {
        frames.push(tp.get(name)?.frame());
    }
    for id in target_objects {
        frames.push(goal.entity(id)?.frame());
    }
    Ok(frames)
}

fn fit_bucket(
    observations: &[FrameObservation],
    k: usize,
    cfg: &GtnConfig,
    seed_salt: u64,
) -> Result<Tpgmm> {
    if observations.len() < 3 {
        // Too little data for covariance estimation: one broad isotropic
        // component per sample.
        let k = observations.len();
        let variance = cfg.small_bucket_sigma * cfg.small_bucket_sigma;
        let comps = observations
            .iter()
            .map(|obs| {
                obs.per_frame
                    .iter()
                    .map(|x| Gaussian::isotropic(x.clone(), variance))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Tpgmm {
            priors: vec![1.0 / k as f64; k],
            comps,
        });
    }
    let em = EmConfig {
        seed: crate::tamp::derive_seed(cfg.seed, seed_salt),
        cov_floor: cfg.cov_floor,
        ..Default::default()
    };
    Ok(fit_em(observations, k.min(observations.len()).max(1), &em)?.model)
}

/// Learns the network from a plan dataset.
pub fn learn(
    dataset: &PlanDataset,
    skills: &BTreeMap<String, SkillModel>,
    cfg: &GtnConfig,
) -> Result<Gtn> {
    if dataset.plans.is_empty() {
        return Err(Error::EmptyInput("plan dataset"));
    }
    let (edge_list, buckets) = collect_transitions(dataset);

    let mut nodes: Vec<String> = vec![START_NODE.to_string(), END_NODE.to_string()];
    for (u, v) in &edge_list {
        for id in [u, v] {
            if !nodes.contains(id) {
                nodes.push(id.clone());
            }
        }
    }
    nodes.sort();

    let mut edges: BTreeMap<String, BTreeMap<String, EdgeModel>> = BTreeMap::new();
    for edge in &edge_list {
        let bucket = &buckets[edge];
        let n_e = n_components(dataset, edge)?;
        let k = n_e.min(bucket.len());
        let (_, target) = edge;

        let (target_objects, target_params, free_params): (Vec<EntityId>, Vec<String>, Vec<String>) =
            if target == END_NODE {
                let all: Vec<EntityId> = bucket[0].state.objects.keys().cloned().collect();
                (all, Vec::new(), Vec::new())
            } else {
                let skill = skills
                    .get(target)
                    .ok_or_else(|| Error::UnknownSkill(target.clone()))?;
                (
                    skill.spec.objects.clone(),
                    skill.spec.params.iter().map(|p| p.name.clone()).collect(),
                    skill
                        .spec
                        .free_params()
                        .iter()
                        .map(|p| p.name.clone())
                        .collect(),
                )
            };

        let mut param_models = BTreeMap::new();
        for name in &free_params {
            let obs: Vec<FrameObservation> = bucket
                .iter()
                .map(|aug| {
                    let frames = param_constraint_frames(&aug.state, &aug.goal);
                    Ok(FrameObservation::observe(
                        &aug.params.get(name)?.to_vector(),
                        &frames,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let salt = crate::tamp::stable_hash(&format!("{}->{}:p:{}", edge.0, edge.1, name));
            param_models.insert(name.clone(), fit_bucket(&obs, k, cfg, salt)?);
        }

        let mut object_models = BTreeMap::new();
        for object in &target_objects {
            let obs: Vec<FrameObservation> = bucket
                .iter()
                .map(|aug| {
                    let frames = object_constraint_frames(
                        &aug.state,
                        &aug.goal,
                        &target_objects,
                        &target_params,
                        &aug.params,
                        object,
                    )?;
                    Ok(FrameObservation::observe(
                        &aug.state.entity(object)?.to_vector(),
                        &frames,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let salt = crate::tamp::stable_hash(&format!("{}->{}:o:{}", edge.0, edge.1, object));
            object_models.insert(object.clone(), fit_bucket(&obs, k, cfg, salt)?);
        }

        edges.entry(edge.0.clone()).or_default().insert(
            edge.1.clone(),
            EdgeModel {
                n_components: n_e,
                target_params,
                constraints: ConstraintSet {
                    param_models,
                    object_models,
                },
            },
        );
    }

    Ok(Gtn { nodes, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::EntityPose;
    use crate::tamp::{Plan, PlanStep};

    fn world(letter: (f64, f64)) -> WorldState {
        let mut objects = BTreeMap::new();
        objects.insert(
            "letter".to_string(),
            EntityPose::new(letter.0, letter.1, 0.0, 0.0),
        );
        WorldState::new(EntityPose::new(0.0, 0.0, 0.0, 0.0), objects)
    }

    fn plan_with(skills: &[&str]) -> Plan {
        let mut steps = Vec::new();
        let mut at = 0.0;
        for name in skills {
            let state = world((at, at));
            at += 1.0;
            let next = world((at, at));
            steps.push(PlanStep {
                state,
                skill: name.to_string(),
                params: TaskParams(BTreeMap::new()),
                next_state: next,
            });
        }
        Plan {
            start: world((0.0, 0.0)),
            goal: world((at, at)),
            steps,
            cost: skills.len() as f64,
        }
    }

    #[test]
    fn collect_transitions_wraps_with_virtual_nodes() {
        let dataset = PlanDataset { plans: vec![plan_with(&["a", "b"])] };
        let (edges, buckets) = collect_transitions(&dataset);
        let expected: Vec<Edge> = vec![
            (START_NODE.into(), "a".into()),
            ("a".into(), "b".into()),
            ("b".into(), END_NODE.into()),
        ];
        for e in &expected {
            assert!(edges.contains(e), "missing edge {e:?}");
            assert_eq!(buckets[e].len(), 1);
        }
        assert_eq!(edges.len(), 3);
    }

    #[test]
    fn repeated_edge_buckets_count_occurrences() {
        let dataset = PlanDataset { plans: vec![plan_with(&["a", "b", "a", "b"])] };
        let (_, buckets) = collect_transitions(&dataset);
        assert_eq!(buckets[&("a".to_string(), "b".to_string())].len(), 2);
        assert_eq!(buckets[&("b".to_string(), "a".to_string())].len(), 1);
    }

    #[test]
    fn n_components_counts_distinct_plans() {
        let dataset = PlanDataset {
            plans: vec![
                plan_with(&["a", "b", "c"]),
                plan_with(&["a", "b"]),
                plan_with(&["a", "b", "c"]),
            ],
        };
        let n = n_components(&dataset, &("a".to_string(), "b".to_string())).unwrap();
        assert_eq!(n, 2);
        let unique = n_components(&dataset, &("b".to_string(), "c".to_string())).unwrap();
        assert_eq!(unique, 1);
        assert!(n_components(&dataset, &("c".to_string(), "a".to_string())).is_err());
    }

    #[test]
    fn every_training_plan_is_a_walk() {
        let dataset = PlanDataset {
            plans: vec![plan_with(&["a", "b", "c"]), plan_with(&["a", "c"])],
        };
        let (edges, _) = collect_transitions(&dataset);
        let mut gtn = Gtn { nodes: vec![], edges: BTreeMap::new() };
        for (u, v) in edges {
            gtn.edges.entry(u).or_default().insert(
                v,
                EdgeModel {
                    n_components: 1,
                    target_params: vec![],
                    constraints: ConstraintSet {
                        param_models: BTreeMap::new(),
                        object_models: BTreeMap::new(),
                    },
                },
            );
        }
        for plan in &dataset.plans {
            assert!(gtn.contains_walk(&plan.discrete()));
        }
        assert!(!gtn.contains_walk(&["b".to_string(), "a".to_string()]));
    }
}
