//! Online execution of a learned network.
//!
//! At each step every outgoing edge of the current node is scored: the free
//! parameters are set to the mode of the edge's parameter constraints given
//! (current state, goal state), and the transition score is the normalized
//! harmonic mean of the per-object constraint densities. The best actionable
//! edge executes greedily. When no outgoing score clears the threshold, task
//! progress is re-localized by scoring every edge in the network; execution
//! resumes from the winning edge's source node, or aborts as unrecoverable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gtn::{object_constraint_frames, param_constraint_frames, Gtn, END_NODE, START_NODE};
use crate::skill::{SkillModel, TaskParams};
use crate::state::{EntityPose, WorldState};
use crate::tamp::{state_satisfies, Problem};
use crate::tphsmm::{retrieve_trajectory, schedule_steps, viterbi};
use crate::world::Environment;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Lower bound on the transition score below which a step counts as failed.
    pub rho_lower: f64,
    pub max_steps: usize,
    pub pos_tol: f64,
    pub rot_tol: f64,
    /// Smoothness weight of the reference-trajectory tracker.
    pub smoothing_lambda: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            rho_lower: 0.1,
            max_steps: 30,
            pos_tol: 0.05,
            rot_tol: 0.1,
            smoothing_lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeScore {
    pub from: String,
    pub to: String,
    pub rho: f64,
    /// Set when every per-object density underflowed to the smallest positive value.
    pub underflowed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    Step,
    Recovery,
    Unrecoverable,
    Goal,
    Timeout,
}

/// One record of the execution audit log. `alternatives` lists every edge
/// considered at this decision with its score, making the choice inspectable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub node: String,
    pub event: TraceEvent,
    pub skill: Option<String>,
    pub params: Option<TaskParams>,
    pub rho: Option<f64>,
    pub alternatives: Vec<EdgeScore>,
    pub state: WorldState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub steps: Vec<TraceStep>,
    pub outcome: TraceEvent,
}

impl ExecutionTrace {
    /// The skill-name sequence actually executed.
    pub fn discrete(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter(|s| s.event == TraceEvent::Step)
            .filter_map(|s| s.skill.clone())
            .collect()
    }

    pub fn recoveries(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.event == TraceEvent::Recovery)
            .count()
    }
}

/// Optimal task parameters for one edge: bound parameters from the current
/// state, each free parameter at the mode of its constraint model
/// instantiated with frames from (current state, goal state).
pub fn optimal_tp(
    gtn: &Gtn,
    edge: (&str, &str),
    skills: &BTreeMap<String, SkillModel>,
    state: &WorldState,
    goal: &WorldState,
) -> Result<TaskParams> {
    let model = gtn.edge(edge.0, edge.1)?;
    let mut tp = if edge.1 == END_NODE {
        TaskParams(BTreeMap::new())
    } else {
        let skill = skills
            .get(edge.1)
            .ok_or_else(|| Error::UnknownSkill(edge.1.to_string()))?;
        TaskParams::bound_from_state(&skill.spec, state)?
    };
    let frames = param_constraint_frames(state, goal);
    for (name, constraint) in &model.constraints.param_models {
        let gmm = constraint.instantiate(&frames)?;
        let mut pose = EntityPose::from_vector(&gmm.mode()?)?;
        pose.aux = 0.0; // free parameters are pure poses
        tp.0.insert(name.clone(), pose);
    }
    Ok(tp)
}

/// Transition score: harmonic mean over the edge's objects of the constraint
/// density at the observed object state, normalized by the density at the
/// model's mode so a perfectly matching scene scores 1.
pub fn transition_score(
    gtn: &Gtn,
    edge: (&str, &str),
    state: &WorldState,
    goal: &WorldState,
    tp: &TaskParams,
) -> Result<(f64, bool)> {
    let model = gtn.edge(edge.0, edge.1)?;
    let target_objects: Vec<String> = model.constraints.object_models.keys().cloned().collect();
    let mut inv_sum = 0.0f64;
    let mut n = 0usize;
    let mut underflowed = false;
    for (object, constraint) in &model.constraints.object_models {
        let frames = object_constraint_frames(
            state,
            goal,
            &target_objects,
            &model.target_params,
            tp,
            object,
        )?;
        let gmm = constraint.instantiate(&frames)?;
        let observed = gmm.log_pdf(&state.entity(object)?.to_vector())?;
        let at_mode = gmm.log_pdf(&gmm.mode()?)?;
        // Mode point is an approximate mixture argmax; clamp so rho <= 1.
        let log_v = (observed - at_mode).min(0.0);
        if log_v < -700.0 {
            underflowed = true;
        }
        inv_sum += (-log_v.max(-700.0)).exp();
        n += 1;
    }
    if n == 0 {
        return Ok((1.0, false));
    }
    if underflowed {
        return Ok((f64::MIN_POSITIVE, true));
    }
    Ok((n as f64 / inv_sum, false))
}

fn score_edge(
    gtn: &Gtn,
    skills: &BTreeMap<String, SkillModel>,
    edge: (&str, &str),
    state: &WorldState,
    goal: &WorldState,
) -> Result<(TaskParams, EdgeScore)> {
    let tp = optimal_tp(gtn, edge, skills, state, goal)?;
    let (rho, underflowed) = transition_score(gtn, edge, state, goal, &tp)?;
    Ok((
        tp,
        EdgeScore {
            from: edge.0.to_string(),
            to: edge.1.to_string(),
            rho,
            underflowed,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct NextSkill {
    pub skill: String,
    pub params: TaskParams,
    pub rho: f64,
    /// Scores of every outgoing edge (virtual end edges included).
    pub alternatives: Vec<EdgeScore>,
}

/// Greedy choice over the current node's outgoing edges: the actionable edge
/// with the maximum score; ties break toward the lexicographically smaller
/// skill name. Virtual end edges are scored for the record but not returned.
pub fn next_skill(
    gtn: &Gtn,
    skills: &BTreeMap<String, SkillModel>,
    node: &str,
    state: &WorldState,
    goal: &WorldState,
) -> Result<NextSkill> {
    let mut alternatives = Vec::new();
    let mut best: Option<(String, TaskParams, f64)> = None;
    for (to, _) in gtn.outgoing(node) {
        let (tp, score) = score_edge(gtn, skills, (node, to), state, goal)?;
        let rho = score.rho;
        alternatives.push(score);
        if to != END_NODE {
            let better = match &best {
                None => true,
                Some((_, _, best_rho)) => rho > *best_rho,
            };
            if better {
                best = Some((to.clone(), tp, rho));
            }
        }
    }
    let (skill, params, rho) =
        best.ok_or_else(|| Error::NoOutgoingEdges(node.to_string()))?;
    Ok(NextSkill {
        skill,
        params,
        rho,
        alternatives,
    })
}

/// Failure per the score bound: no actionable transition exceeds the
/// threshold. An empty score list is a failure.
pub fn check_failure(scores: &[f64], cfg: &ExecConfig) -> bool {
    scores.iter().all(|&rho| rho <= cfg.rho_lower)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Recovery {
    /// Execution resumes from this edge's source node.
    Edge { from: String, to: String, rho: f64 },
    Unrecoverable { best_rho: f64 },
}

/// Re-localizes task progress by scoring every actionable edge in the
/// network and returning the argmax, or Unrecoverable when even the best
/// edge violates the score bound.
pub fn recover(
    gtn: &Gtn,
    skills: &BTreeMap<String, SkillModel>,
    state: &WorldState,
    goal: &WorldState,
    cfg: &ExecConfig,
) -> Result<Recovery> {
    let mut best: Option<(String, String, f64)> = None;
    for (from, to) in gtn.edge_list() {
        if to == END_NODE {
            continue;
        }
        let (_, score) = score_edge(gtn, skills, (&from, &to), state, goal)?;
        let better = match &best {
            None => true,
            Some((_, _, rho)) => score.rho > *rho,
        };
        if better {
            best = Some((from, to, score.rho));
        }
    }
    Ok(match best {
        Some((from, to, rho)) if rho > cfg.rho_lower => Recovery::Edge { from, to, rho },
        Some((_, _, rho)) => Recovery::Unrecoverable { best_rho: rho },
        None => Recovery::Unrecoverable { best_rho: 0.0 },
    })
}

/// Runs the execution loop: greedy skill selection, trajectory retrieval,
/// environment step, failure detection and recovery, until the goal is
/// satisfied, the state is unrecoverable, or the step budget runs out.
pub fn run(
    gtn: &Gtn,
    problem: &Problem,
    env: &mut Environment,
    skills: &BTreeMap<String, SkillModel>,
    cfg: &ExecConfig,
) -> Result<ExecutionTrace> {
    let goal = problem.goal().clone();
    let mut node = START_NODE.to_string();
    let mut state = env.state.clone();
    let mut steps = Vec::new();

    for _ in 0..cfg.max_steps {
        if problem
            .goals
            .iter()
            .any(|g| state_satisfies(&state, g, &problem.goal_mask, cfg.pos_tol, cfg.rot_tol))
        {
            steps.push(TraceStep {
                node: node.clone(),
                event: TraceEvent::Goal,
                skill: None,
                params: None,
                rho: None,
                alternatives: Vec::new(),
                state: state.clone(),
            });
            return Ok(ExecutionTrace {
                steps,
                outcome: TraceEvent::Goal,
            });
        }

        let decision = match next_skill(gtn, skills, &node, &state, &goal) {
            Ok(d) => Some(d),
            Err(Error::NoOutgoingEdges(_)) => None,
            Err(e) => return Err(e),
        };
        let actionable: Vec<f64> = decision
            .as_ref()
            .map(|d| {
                d.alternatives
                    .iter()
                    .filter(|s| s.to != END_NODE)
                    .map(|s| s.rho)
                    .collect()
            })
            .unwrap_or_default();

        if check_failure(&actionable, cfg) {
            match recover(gtn, skills, &state, &goal, cfg)? {
                Recovery::Edge { from, to, rho } => {
                    steps.push(TraceStep {
                        node: node.clone(),
                        event: TraceEvent::Recovery,
                        skill: Some(to),
                        params: None,
                        rho: Some(rho),
                        alternatives: decision.map(|d| d.alternatives).unwrap_or_default(),
                        state: state.clone(),
                    });
                    node = from;
                    continue;
                }
                Recovery::Unrecoverable { best_rho } => {
                    steps.push(TraceStep {
                        node: node.clone(),
                        event: TraceEvent::Unrecoverable,
                        skill: None,
                        params: None,
                        rho: Some(best_rho),
                        alternatives: decision.map(|d| d.alternatives).unwrap_or_default(),
                        state: state.clone(),
                    });
                    return Ok(ExecutionTrace {
                        steps,
                        outcome: TraceEvent::Unrecoverable,
                    });
                }
            }
        }

        let decision = decision.expect("failure check passed, so a best edge exists");
        let skill_model = skills
            .get(&decision.skill)
            .ok_or_else(|| Error::UnknownSkill(decision.skill.clone()))?;
        let hsmm = skill_model.instantiate_trajectory(&state, &decision.params)?;
        let horizon = skill_model.trajectory.expected_horizon();
        let schedule = viterbi(&hsmm, &[], horizon)?;
        let trajectory = retrieve_trajectory(
            &hsmm,
            &schedule,
            &state.robot.to_vector(),
            cfg.smoothing_lambda,
        )?;
        debug_assert_eq!(trajectory.len(), schedule_steps(&schedule).len());

        let observed = env.execute(&decision.skill, &decision.params, &trajectory)?;
        steps.push(TraceStep {
            node: node.clone(),
            event: TraceEvent::Step,
            skill: Some(decision.skill.clone()),
            params: Some(decision.params.clone()),
            rho: Some(decision.rho),
            alternatives: decision.alternatives,
            state: observed.clone(),
        });
        node = decision.skill;
        state = observed;
    }

    Ok(ExecutionTrace {
        steps,
        outcome: TraceEvent::Timeout,
    })
}

/// Convenience: does this discrete sequence use any of the given skills.
pub fn uses_any(discrete: &[String], names: &[&str]) -> bool {
    discrete.iter().any(|s| names.contains(&s.as_str()))
}
