//! Complete skill models: a trajectory TP-HSMM plus grounded precondition and
//! effect models, with a task-parameter specification separating frames bound
//! to entity poses from freely chosen ones.
//!
//! All models share one frame vocabulary derived from (state, parameters):
//! a global workspace frame, one frame per involved entity pose, and one per
//! free parameter pose. Preconditions observe each entity's state before
//! execution from every frame except its own; effect models observe the
//! post-execution state from the full set, so fixed targets (free-parameter
//! frames, the workspace frame) and stay-put behavior (the entity's own
//! initial frame) are each captured by a near-deterministic component.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Frame;
use crate::state::{EntityId, EntityPose, WorldState, POSE_DIM, ROBOT_ID};
use crate::tpgmm::{fit_em, EmConfig, FrameObservation, Tpgmm};
use crate::tphsmm::{fit_hsmm, Demonstration, Tphsmm};

/// How a task parameter gets its value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Frame derived from an entity's current pose.
    Bound { entity: EntityId },
    /// Freely chosen pose, e.g. a goal/attractor frame.
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

/// Static skill metadata: what it touches and how it is parameterized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillSpec {
    pub name: String,
    /// Objects involved; the robot is always implicitly involved.
    pub objects: Vec<EntityId>,
    pub params: Vec<TaskParamSpec>,
    pub k_trajectory: usize,
    pub k_precondition: usize,
    pub k_effect: usize,
}

impl SkillSpec {
    /// Robot plus involved objects, in a fixed order.
    pub fn entities(&self) -> Vec<EntityId> {
        let mut ids = vec![ROBOT_ID.to_string()];
        ids.extend(self.objects.iter().cloned());
        ids
    }

    pub fn free_params(&self) -> Vec<&TaskParamSpec> {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Free)
            .collect()
    }
}

/// Concrete parameter assignment: one pose per task parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskParams(pub BTreeMap<String, EntityPose>);

impl TaskParams {
    pub fn get(&self, name: &str) -> Result<&EntityPose> {
        self.0
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Bound parameters instantiated from the state; free slots left out.
    pub fn bound_from_state(spec: &SkillSpec, state: &WorldState) -> Result<TaskParams> {
        let mut map = BTreeMap::new();
        for param in &spec.params {
            if let ParamKind::Bound { entity } = &param.kind {
                map.insert(param.name.clone(), *state.entity(entity)?);
            }
        }
        Ok(TaskParams(map))
    }
}

/// Learned skill: trajectory model plus per-entity precondition and effect
/// TP-GMMs and one prior per free parameter (the density free parameters are
/// sampled from during search).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillModel {
    pub spec: SkillSpec,
    pub trajectory: Tphsmm,
    pub preconditions: BTreeMap<EntityId, Tpgmm>,
    pub effects: BTreeMap<EntityId, Tpgmm>,
    pub free_priors: BTreeMap<String, Tpgmm>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SkillLearnConfig {
    pub em: EmConfig,
}

impl Default for SkillLearnConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
        }
    }
}

fn pose_frames(
    spec: &SkillSpec,
    state: &WorldState,
    tp: &TaskParams,
    skip_entity: Option<&str>,
    include_identity: bool,
    include_free: bool,
) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    if include_identity {
        frames.push(Frame::identity(POSE_DIM));
    }
    for id in spec.entities() {
        if Some(id.as_str()) == skip_entity {
            continue;
        }
        frames.push(state.entity(&id)?.frame());
    }
    if include_free {
        for param in spec.free_params() {
            frames.push(tp.get(&param.name)?.frame());
        }
    }
    Ok(frames)
}

/// Frames observing entity `o`'s state before execution: workspace frame,
/// every other entity, and the free parameters.
pub fn precondition_frames(
    spec: &SkillSpec,
    state: &WorldState,
    tp: &TaskParams,
    entity: &str,
) -> Result<Vec<Frame>> {
    pose_frames(spec, state, tp, Some(entity), true, true)
}

/// Frames observing post-execution states: workspace frame, every entity's
/// pre-execution pose, and the free parameters. Shared by all entities.
pub fn effect_frames(spec: &SkillSpec, state: &WorldState, tp: &TaskParams) -> Result<Vec<Frame>> {
    pose_frames(spec, state, tp, None, true, true)
}

/// Frames the free-parameter prior is expressed in: workspace frame plus the
/// entity poses (free parameters themselves excluded).
pub fn free_prior_frames(spec: &SkillSpec, state: &WorldState) -> Result<Vec<Frame>> {
    pose_frames(spec, state, &TaskParams(BTreeMap::new()), None, true, false)
}

/// Frames the trajectory model is expressed in: exactly the task parameters,
/// in declaration order.
pub fn trajectory_frames(spec: &SkillSpec, state: &WorldState, tp: &TaskParams) -> Result<Vec<Frame>> {
    spec.params
        .iter()
        .map(|param| match &param.kind {
            ParamKind::Bound { entity } => Ok(state.entity(entity)?.frame()),
            ParamKind::Free => Ok(tp.get(&param.name)?.frame()),
        })
        .collect()
}

fn demo_params(spec: &SkillSpec, demo: &Demonstration) -> Result<TaskParams> {
    let mut map = BTreeMap::new();
    for param in &spec.params {
        let pose = demo
            .frames
            .get(&param.name)
            .ok_or_else(|| Error::MissingParam(param.name.clone()))?;
        map.insert(param.name.clone(), *pose);
    }
    Ok(TaskParams(map))
}

/// Learns the complete skill model from demonstrations.
pub fn learn_skill(
    demos: &[Demonstration],
    spec: &SkillSpec,
    config: &SkillLearnConfig,
) -> Result<SkillModel> {
    if demos.is_empty() {
        return Err(Error::EmptyInput("skill demonstrations"));
    }
    let entities = spec.entities();
    for demo in demos {
        for id in &entities {
            demo.initial().entity(id).map_err(|_| {
                Error::InconsistentDemos(format!("entity `{id}` missing in a demonstration"))
            })?;
        }
    }
    let n = demos.len();

    // Trajectory model over the robot state, framed by the task parameters.
    let trajectory_obs: Vec<Vec<FrameObservation>> = demos
        .iter()
        .map(|demo| {
            let tp = demo_params(spec, demo)?;
            let frames = trajectory_frames(spec, demo.initial(), &tp)?;
            Ok(demo
                .states
                .iter()
                .map(|s| FrameObservation::observe(&s.robot.to_vector(), &frames))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let trajectory = fit_hsmm(&trajectory_obs, spec.k_trajectory, &config.em)?;

    // Grounded precondition and effect models, one per entity.
    let mut preconditions = BTreeMap::new();
    let mut effects = BTreeMap::new();
    for id in &entities {
        let pre_obs: Vec<FrameObservation> = demos
            .iter()
            .map(|demo| {
                let tp = demo_params(spec, demo)?;
                let frames = precondition_frames(spec, demo.initial(), &tp, id)?;
                Ok(FrameObservation::observe(
                    &demo.initial().entity(id)?.to_vector(),
                    &frames,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let k_pre = spec.k_precondition.min(n).max(1);
        preconditions.insert(id.clone(), fit_em(&pre_obs, k_pre, &config.em)?.model);

        let eff_obs: Vec<FrameObservation> = demos
            .iter()
            .map(|demo| {
                let tp = demo_params(spec, demo)?;
                let frames = effect_frames(spec, demo.initial(), &tp)?;
                Ok(FrameObservation::observe(
                    &demo.terminal().entity(id)?.to_vector(),
                    &frames,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let k_eff = spec.k_effect.min(n).max(1);
        effects.insert(id.clone(), fit_em(&eff_obs, k_eff, &config.em)?.model);
    }

    // Prior over each free parameter, anchored to the entity poses.
    let mut free_priors = BTreeMap::new();
    for param in spec.free_params() {
        let obs: Vec<FrameObservation> = demos
            .iter()
            .map(|demo| {
                let tp = demo_params(spec, demo)?;
                let frames = free_prior_frames(spec, demo.initial())?;
                Ok(FrameObservation::observe(
                    &tp.get(&param.name)?.to_vector(),
                    &frames,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = spec.k_precondition.min(n).max(1);
        free_priors.insert(param.name.clone(), fit_em(&obs, k, &config.em)?.model);
    }

    Ok(SkillModel {
        spec: spec.clone(),
        trajectory,
        preconditions,
        effects,
        free_priors,
    })
}

impl SkillModel {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Predicted state after executing the skill: every involved entity is
    /// replaced by the mode of its instantiated effect model; everything else
    /// is untouched.
    pub fn apply_effect(&self, state: &WorldState, tp: &TaskParams) -> Result<WorldState> {
        let frames = effect_frames(&self.spec, state, tp)?;
        let mut next = state.clone();
        for id in self.spec.entities() {
            state.entity(&id)?;
            let gmm = self.effects[&id].instantiate(&frames)?;
            let predicted = EntityPose::from_vector(&gmm.mode()?)?;
            next.set_entity(&id, predicted)?;
        }
        Ok(next)
    }

    /// Sum over involved entities of the log mixture density of their current
    /// state under the instantiated precondition model.
    pub fn precondition_loglik(&self, state: &WorldState, tp: &TaskParams) -> Result<f64> {
        let mut total = 0.0;
        for id in self.spec.entities() {
            let frames = precondition_frames(&self.spec, state, tp, &id)?;
            let gmm = self.preconditions[&id].instantiate(&frames)?;
            total += gmm.log_pdf(&state.entity(&id)?.to_vector())?;
        }
        Ok(total)
    }

    /// The precondition log-likelihood an exactly matching state would score:
    /// each entity evaluated at its own instantiated mode. Reference level for
    /// gates and edge costs.
    pub fn precondition_mode_loglik(&self, state: &WorldState, tp: &TaskParams) -> Result<f64> {
        let mut total = 0.0;
        for id in self.spec.entities() {
            let frames = precondition_frames(&self.spec, state, tp, &id)?;
            let gmm = self.preconditions[&id].instantiate(&frames)?;
            total += gmm.log_pdf(&gmm.mode()?)?;
        }
        Ok(total)
    }

    /// Candidate parameter assignments at `state`: for each free parameter the
    /// instantiated prior's component means come first (deterministic), then
    /// draws from that mixture until `n` candidates exist. Bound parameters
    /// always come from the state. Skills without free parameters yield the
    /// single bound assignment.
    pub fn sample_free_params(
        &self,
        state: &WorldState,
        n: usize,
        rng_seed: u64,
    ) -> Result<Vec<TaskParams>> {
        let bound = TaskParams::bound_from_state(&self.spec, state)?;
        let free = self.spec.free_params();
        if free.is_empty() {
            return Ok(vec![bound]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut per_param: Vec<(String, Vec<EntityPose>)> = Vec::new();
        for param in &free {
            let frames = free_prior_frames(&self.spec, state)?;
            let gmm = self.free_priors[&param.name].instantiate(&frames)?;
            let mut poses: Vec<EntityPose> = Vec::with_capacity(n);
            for comp in gmm.comps.iter().take(n) {
                poses.push(EntityPose::from_vector(&comp.mean().clone())?);
            }
            while poses.len() < n {
                poses.push(EntityPose::from_vector(&gmm.sample(&mut rng))?);
            }
            for pose in &mut poses {
                pose.aux = 0.0; // free parameters are pure poses
            }
            per_param.push((param.name.clone(), poses));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut tp = bound.clone();
            for (name, poses) in &per_param {
                tp.0.insert(name.clone(), poses[i]);
            }
            out.push(tp);
        }
        Ok(out)
    }

    /// Instantiates the trajectory model at (state, parameters).
    pub fn instantiate_trajectory(
        &self,
        state: &WorldState,
        tp: &TaskParams,
    ) -> Result<crate::tphsmm::InstantiatedHsmm> {
        let frames = trajectory_frames(&self.spec, state, tp)?;
        self.trajectory.instantiate(&frames)
    }
}

/// Checks that a vector of poses is dimensioned like a pose. Used when
/// lifting GMM modes back into pose space.
pub fn pose_from_mode(mode: &DVector<f64>) -> Result<EntityPose> {
    EntityPose::from_vector(mode)
}
