//! Synthetic desk-scale manipulation worlds.
//!
//! Each task suite registers scripted ground-truth executors for its skills,
//! a per-skill demonstration sampler, and a seeded problem generator. The
//! executors are total functions of (state, parameters): feasibility lives in
//! the learned precondition and constraint models, not in the environment, so
//! replaying a plan always reproduces its predicted states exactly. The
//! environment adds observation noise and scheduled perturbations on top.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skill::{ParamKind, SkillSpec, TaskParamSpec, TaskParams};
use crate::state::{wrap_angle, EntityId, EntityPose, WorldState, ROBOT_ID};
use crate::tamp::{GoalMask, Problem};
use crate::tphsmm::Demonstration;

/// Geometry and generation parameters of a suite, the serializable part of a
/// suite definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteDef {
    pub name: String,
    pub objects: Vec<EntityId>,
    /// (x_min, y_min, x_max, y_max)
    pub workspace: (f64, f64, f64, f64),
    /// Letters grasped from the side only below this y (platform edge).
    pub edge_band_y: f64,
    pub robot_home: EntityPose,
    pub demo_horizon: usize,
    /// Yaw values are confined to (-theta_range, theta_range).
    pub theta_range: f64,
}

/// Grasp and staging offsets, in the local frame of the anchor entity. The
/// standing and lying grasps share one geometry so that rotate/translate
/// behave identically in both orientations; the side grasp is distinct.
const GRASP: EntityPose = EntityPose { x: 0.0, y: 0.0, theta: 0.0, aux: 1.0 };
const SIDE_GRASP: EntityPose = EntityPose { x: 0.35, y: 0.0, theta: 0.0, aux: 1.0 };
const RELEASE_OFF: EntityPose = EntityPose { x: -0.45, y: 0.25, theta: 0.0, aux: 0.0 };
const CARRY_OFF: EntityPose = EntityPose { x: 0.0, y: -0.3, theta: 0.0, aux: 0.0 };
/// Box staging pose relative to the letter (Task-B re-orientation support).
const STAGE_OFF: EntityPose = EntityPose { x: 0.7, y: 0.0, theta: 0.0, aux: 0.0 };

/// Orientation flag values of the letter.
pub const STANDING: f64 = 1.0;
pub const LYING: f64 = 0.0;

type Transition = fn(&SuiteDef, &WorldState, &TaskParams) -> Result<WorldState>;
type DemoSampler = fn(&SuiteDef, &mut ChaCha8Rng) -> (WorldState, TaskParams);

/// A primitive skill of a suite: metadata plus its scripted ground truth.
#[derive(Clone)]
pub struct ScriptedSkill {
    pub spec: SkillSpec,
    pub transition: Transition,
    pub demo_sampler: DemoSampler,
}

/// A task: entities, skills, and a problem generator.
#[derive(Clone)]
pub struct TaskSuite {
    pub def: SuiteDef,
    pub skills: Vec<ScriptedSkill>,
}

impl TaskSuite {
    pub fn skill(&self, name: &str) -> Result<&ScriptedSkill> {
        self.skills
            .iter()
            .find(|s| s.spec.name == name)
            .ok_or_else(|| Error::UnknownSkill(name.to_string()))
    }

    pub fn skill_names(&self) -> Vec<String> {
        self.skills.iter().map(|s| s.spec.name.clone()).collect()
    }
}

pub fn suite_by_name(name: &str) -> Result<TaskSuite> {
    match name {
        "task_a" => Ok(task_a_suite()),
        "task_b" => Ok(task_b_suite()),
        other => Err(Error::UnknownSkill(format!("suite `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Scripted transitions. All total: they apply the nominal geometric change
// regardless of plausibility.
// ---------------------------------------------------------------------------

fn pick_with(offset: EntityPose) -> impl Fn(&WorldState) -> Result<WorldState> {
    move |state: &WorldState| {
        let letter = *state.entity("letter")?;
        let mut next = state.clone();
        next.robot = letter.compose(&offset);
        Ok(next)
    }
}

fn tr_pick_standing(_: &SuiteDef, s: &WorldState, _: &TaskParams) -> Result<WorldState> {
    pick_with(GRASP)(s)
}

fn tr_pick_flat(_: &SuiteDef, s: &WorldState, _: &TaskParams) -> Result<WorldState> {
    pick_with(GRASP)(s)
}

fn tr_pick_side(_: &SuiteDef, s: &WorldState, _: &TaskParams) -> Result<WorldState> {
    pick_with(SIDE_GRASP)(s)
}

fn reorient(state: &WorldState, new_flag: f64) -> Result<WorldState> {
    let mut letter = *state.entity("letter")?;
    letter.aux = new_flag;
    let mut next = state.clone();
    next.objects.insert("letter".into(), letter);
    next.robot = letter.compose(&RELEASE_OFF);
    Ok(next)
}

fn tr_reorient_st2fl(_: &SuiteDef, s: &WorldState, _: &TaskParams) -> Result<WorldState> {
    reorient(s, LYING)
}

fn tr_reorient_fl2st(_: &SuiteDef, s: &WorldState, _: &TaskParams) -> Result<WorldState> {
    reorient(s, STANDING)
}

/// Robot keeps its grasp-relative pose while the letter moves.
fn carry_letter(state: &WorldState, new_letter: EntityPose) -> Result<WorldState> {
    let letter = *state.entity("letter")?;
    let rel = state.robot.relative_to(&letter);
    let mut next = state.clone();
    next.objects.insert("letter".into(), new_letter);
    next.robot = new_letter.compose(&rel);
    Ok(next)
}

fn tr_rotate(_: &SuiteDef, s: &WorldState, tp: &TaskParams) -> Result<WorldState> {
    let letter = *s.entity("letter")?;
    let target = tp.get("A_G")?;
    carry_letter(
        s,
        EntityPose::new(letter.x, letter.y, target.theta, letter.aux),
    )
}

fn tr_translate(_: &SuiteDef, s: &WorldState, tp: &TaskParams) -> Result<WorldState> {
    let letter = *s.entity("letter")?;
    let target = tp.get("A_G")?;
    carry_letter(
        s,
        EntityPose::new(target.x, target.y, letter.theta, letter.aux),
    )
}

fn tr_reset(def: &SuiteDef, s: &WorldState, _: &TaskParams) -> Result<WorldState> {
    let mut next = s.clone();
    next.robot = def.robot_home;
    Ok(next)
}

fn tr_move_box(_: &SuiteDef, s: &WorldState, tp: &TaskParams) -> Result<WorldState> {
    let target = *tp.get("B_G")?;
    let mut next = s.clone();
    let new_box = EntityPose::new(target.x, target.y, target.theta, 0.0);
    next.objects.insert("box".into(), new_box);
    next.robot = new_box.compose(&CARRY_OFF);
    Ok(next)
}

// ---------------------------------------------------------------------------
// Demonstration sampling.
// ---------------------------------------------------------------------------

fn sample_interior(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (x0, y0, x1, y1) = def.workspace;
    (
        rng.gen_range(x0 + 0.5..x1 - 0.5),
        rng.gen_range(y0 + 0.5..y1 - 0.5),
    )
}

fn sample_theta(def: &SuiteDef, rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-def.theta_range..def.theta_range)
}

fn sample_letter(def: &SuiteDef, rng: &mut ChaCha8Rng, flag: f64) -> EntityPose {
    let (x, y) = sample_interior(def, rng);
    EntityPose::new(x, y, sample_theta(def, rng), flag)
}

fn sample_letter_in_band(def: &SuiteDef, rng: &mut ChaCha8Rng, flag: f64) -> EntityPose {
    let (x0, _, x1, _) = def.workspace;
    EntityPose::new(
        rng.gen_range(x0 + 0.5..x1 - 0.5),
        rng.gen_range(0.25..def.edge_band_y - 0.1),
        sample_theta(def, rng),
        flag,
    )
}

fn sample_robot(def: &SuiteDef, rng: &mut ChaCha8Rng, grip: f64) -> EntityPose {
    let (x, y) = sample_interior(def, rng);
    EntityPose::new(x, y, sample_theta(def, rng), grip)
}

fn letter_world(letter: EntityPose, robot: EntityPose) -> WorldState {
    let mut objects = BTreeMap::new();
    objects.insert("letter".to_string(), letter);
    WorldState::new(robot, objects)
}

fn with_box(mut state: WorldState, bx: EntityPose) -> WorldState {
    state.objects.insert("box".to_string(), bx);
    state
}

fn bound_params(spec_objects: &[(&str, &str)], state: &WorldState) -> TaskParams {
    let mut map = BTreeMap::new();
    for (name, entity) in spec_objects {
        map.insert(name.to_string(), *state.entity(entity).unwrap());
    }
    TaskParams(map)
}

fn ds_pick_standing(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let state = letter_world(
        sample_letter(def, rng, STANDING),
        sample_robot(def, rng, 0.0),
    );
    let tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn ds_pick_flat(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let state = letter_world(sample_letter(def, rng, LYING), sample_robot(def, rng, 0.0));
    let tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn ds_pick_side(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let state = letter_world(
        sample_letter_in_band(def, rng, STANDING),
        sample_robot(def, rng, 0.0),
    );
    let tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn ds_reorient_st2fl(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let letter = sample_letter_in_band(def, rng, STANDING);
    let state = letter_world(letter, letter.compose(&SIDE_GRASP));
    let tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn ds_reorient_fl2st(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let letter = sample_letter(def, rng, LYING);
    let state = letter_world(letter, letter.compose(&GRASP));
    let tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn grasped_letter_state(def: &SuiteDef, rng: &mut ChaCha8Rng) -> WorldState {
    let flag = if rng.gen_bool(0.5) { STANDING } else { LYING };
    let letter = sample_letter(def, rng, flag);
    letter_world(letter, letter.compose(&GRASP))
}

fn ds_rotate(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let state = grasped_letter_state(def, rng);
    let letter = state.objects["letter"];
    let mut tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    tp.0.insert(
        "A_G".into(),
        EntityPose::new(letter.x, letter.y, sample_theta(def, rng), 0.0),
    );
    (state, tp)
}

fn ds_translate(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let state = grasped_letter_state(def, rng);
    let letter = state.objects["letter"];
    let (tx, ty) = sample_interior(def, rng);
    let mut tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    tp.0.insert("A_G".into(), EntityPose::new(tx, ty, letter.theta, 0.0));
    (state, tp)
}

fn ds_reset(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let flag = if rng.gen_bool(0.5) { STANDING } else { LYING };
    let grip = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    let state = letter_world(sample_letter(def, rng, flag), sample_robot(def, rng, grip));
    let tp = bound_params(&[("R", ROBOT_ID)], &state);
    (state, tp)
}

// Task-B samplers: a movable box joins the scene.

fn sample_box_away_from(
    def: &SuiteDef,
    rng: &mut ChaCha8Rng,
    letter: &EntityPose,
    min_dist: f64,
) -> EntityPose {
    loop {
        let (x, y) = sample_interior(def, rng);
        let candidate = EntityPose::new(x, y, sample_theta(def, rng), 0.0);
        if candidate.planar_dist(letter) >= min_dist {
            return candidate;
        }
    }
}

fn ds_b_pick(def: &SuiteDef, rng: &mut ChaCha8Rng, flag: f64) -> (WorldState, TaskParams) {
    let letter = sample_letter(def, rng, flag);
    let state = with_box(
        letter_world(letter, sample_robot(def, rng, 0.0)),
        sample_box_away_from(def, rng, &letter, 1.0),
    );
    let tp = bound_params(&[("A", "letter"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn ds_b_pick_standing(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    ds_b_pick(def, rng, STANDING)
}

fn ds_b_pick_flat(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    ds_b_pick(def, rng, LYING)
}

fn ds_b_rotate(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let (state, tp) = ds_rotate(def, rng);
    let letter = state.objects["letter"];
    (
        with_box(state, sample_box_away_from(def, rng, &letter, 1.0)),
        tp,
    )
}

fn ds_b_translate(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let (state, tp) = ds_translate(def, rng);
    let letter = state.objects["letter"];
    (
        with_box(state, sample_box_away_from(def, rng, &letter, 1.0)),
        tp,
    )
}

fn ds_b_reorient(def: &SuiteDef, rng: &mut ChaCha8Rng, flag: f64) -> (WorldState, TaskParams) {
    let letter = sample_letter(def, rng, flag);
    // The box sits at its staging pose next to the letter, with jitter.
    let stage = letter.compose(&STAGE_OFF);
    let bx = EntityPose::new(
        stage.x + rng.gen_range(-0.05..0.05),
        stage.y + rng.gen_range(-0.05..0.05),
        stage.theta + rng.gen_range(-0.05..0.05),
        0.0,
    );
    let state = with_box(letter_world(letter, sample_robot(def, rng, 0.0)), bx);
    let tp = bound_params(&[("A", "letter"), ("B", "box"), ("R", ROBOT_ID)], &state);
    (state, tp)
}

fn ds_b_reorient_st2fl(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    ds_b_reorient(def, rng, STANDING)
}

fn ds_b_reorient_fl2st(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    ds_b_reorient(def, rng, LYING)
}

fn ds_move_box(def: &SuiteDef, rng: &mut ChaCha8Rng) -> (WorldState, TaskParams) {
    let flag = if rng.gen_bool(0.5) { STANDING } else { LYING };
    let grip = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    let letter = sample_letter(def, rng, flag);
    let state = with_box(
        letter_world(letter, sample_robot(def, rng, grip)),
        sample_box_away_from(def, rng, &letter, 1.0),
    );
    // Half the demonstrations stage the box next to the letter (tool use),
    // half move it to an arbitrary pose (e.g. putting it back).
    let target = if rng.gen_bool(0.5) {
        let stage = letter.compose(&STAGE_OFF);
        EntityPose::new(
            stage.x + rng.gen_range(-0.05..0.05),
            stage.y + rng.gen_range(-0.05..0.05),
            stage.theta + rng.gen_range(-0.05..0.05),
            0.0,
        )
    } else {
        let (x, y) = sample_interior(def, rng);
        EntityPose::new(x, y, sample_theta(def, rng), 0.0)
    };
    let mut tp = bound_params(&[("A", "letter"), ("B", "box"), ("R", ROBOT_ID)], &state);
    tp.0.insert("B_G".into(), target);
    (state, tp)
}

// ---------------------------------------------------------------------------
// Suites.
// ---------------------------------------------------------------------------

fn param(name: &str, entity: &str) -> TaskParamSpec {
    TaskParamSpec {
        name: name.to_string(),
        kind: ParamKind::Bound { entity: entity.to_string() },
    }
}

fn free_param(name: &str) -> TaskParamSpec {
    TaskParamSpec {
        name: name.to_string(),
        kind: ParamKind::Free,
    }
}

fn skill_spec(
    name: &str,
    objects: &[&str],
    params: Vec<TaskParamSpec>,
    k: (usize, usize, usize),
) -> SkillSpec {
    SkillSpec {
        name: name.to_string(),
        objects: objects.iter().map(|s| s.to_string()).collect(),
        params,
        k_trajectory: k.0,
        k_precondition: k.1,
        k_effect: k.2,
    }
}

/// One letter on a platform with an edge band: pick variants, re-orientation
/// at the edge, free-yaw rotation, free-position translation, reset.
pub fn task_a_suite() -> TaskSuite {
    let def = SuiteDef {
        name: "task_a".into(),
        objects: vec!["letter".into()],
        workspace: (0.0, 0.0, 8.0, 5.0),
        edge_band_y: 0.9,
        robot_home: EntityPose { x: 4.0, y: 4.6, theta: 0.0, aux: 0.0 },
        demo_horizon: 30,
        theta_range: 1.3,
    };
    let ar = || vec![param("A", "letter"), param("R", ROBOT_ID)];
    let arg = || vec![param("A", "letter"), param("R", ROBOT_ID), free_param("A_G")];
    let skills = vec![
        ScriptedSkill {
            spec: skill_spec("pick_standing", &["letter"], ar(), (3, 1, 1)),
            transition: tr_pick_standing,
            demo_sampler: ds_pick_standing,
        },
        ScriptedSkill {
            spec: skill_spec("pick_flat", &["letter"], ar(), (3, 1, 1)),
            transition: tr_pick_flat,
            demo_sampler: ds_pick_flat,
        },
        ScriptedSkill {
            spec: skill_spec("pick_side", &["letter"], ar(), (3, 1, 1)),
            transition: tr_pick_side,
            demo_sampler: ds_pick_side,
        },
        ScriptedSkill {
            spec: skill_spec("reorient_st2fl", &["letter"], ar(), (3, 1, 1)),
            transition: tr_reorient_st2fl,
            demo_sampler: ds_reorient_st2fl,
        },
        ScriptedSkill {
            spec: skill_spec("reorient_fl2st", &["letter"], ar(), (3, 1, 1)),
            transition: tr_reorient_fl2st,
            demo_sampler: ds_reorient_fl2st,
        },
        ScriptedSkill {
            spec: skill_spec("rotate", &["letter"], arg(), (3, 1, 1)),
            transition: tr_rotate,
            demo_sampler: ds_rotate,
        },
        ScriptedSkill {
            spec: skill_spec("translate", &["letter"], arg(), (3, 1, 1)),
            transition: tr_translate,
            demo_sampler: ds_translate,
        },
        ScriptedSkill {
            spec: skill_spec("reset", &["letter"], vec![param("R", ROBOT_ID)], (2, 1, 1)),
            transition: tr_reset,
            demo_sampler: ds_reset,
        },
    ];
    TaskSuite { def, skills }
}

/// Task-A plus a movable box: re-orientation needs the box staged next to the
/// letter instead of the platform edge, and the box must be put back.
pub fn task_b_suite() -> TaskSuite {
    let def = SuiteDef {
        name: "task_b".into(),
        objects: vec!["box".into(), "letter".into()],
        workspace: (0.0, 0.0, 8.0, 5.0),
        edge_band_y: 0.9,
        robot_home: EntityPose { x: 4.0, y: 4.6, theta: 0.0, aux: 0.0 },
        demo_horizon: 30,
        theta_range: 1.3,
    };
    let ar = || vec![param("A", "letter"), param("R", ROBOT_ID)];
    let arg = || vec![param("A", "letter"), param("R", ROBOT_ID), free_param("A_G")];
    let abr = || vec![param("A", "letter"), param("B", "box"), param("R", ROBOT_ID)];
    let skills = vec![
        ScriptedSkill {
            spec: skill_spec("pick_standing", &["letter"], ar(), (3, 1, 1)),
            transition: tr_pick_standing,
            demo_sampler: ds_b_pick_standing,
        },
        ScriptedSkill {
            spec: skill_spec("pick_flat", &["letter"], ar(), (3, 1, 1)),
            transition: tr_pick_flat,
            demo_sampler: ds_b_pick_flat,
        },
        ScriptedSkill {
            spec: skill_spec("rotate", &["letter"], arg(), (3, 1, 1)),
            transition: tr_rotate,
            demo_sampler: ds_b_rotate,
        },
        ScriptedSkill {
            spec: skill_spec("translate", &["letter"], arg(), (3, 1, 1)),
            transition: tr_translate,
            demo_sampler: ds_b_translate,
        },
        ScriptedSkill {
            spec: skill_spec("reorient_st2fl", &["letter", "box"], abr(), (3, 1, 1)),
            transition: tr_reorient_st2fl,
            demo_sampler: ds_b_reorient_st2fl,
        },
        ScriptedSkill {
            spec: skill_spec("reorient_fl2st", &["letter", "box"], abr(), (3, 1, 1)),
            transition: tr_reorient_fl2st,
            demo_sampler: ds_b_reorient_fl2st,
        },
        ScriptedSkill {
            spec: skill_spec(
                "move_box",
                &["box", "letter"],
                vec![
                    param("A", "letter"),
                    param("B", "box"),
                    param("R", ROBOT_ID),
                    free_param("B_G"),
                ],
                (3, 2, 1),
            ),
            transition: tr_move_box,
            demo_sampler: ds_move_box,
        },
    ];
    TaskSuite { def, skills }
}

// ---------------------------------------------------------------------------
// Problem generation.
// ---------------------------------------------------------------------------

/// Seeded problem generator. Start/goal letter poses differ enough that the
/// nominal plan shape is unambiguous, orientation flags are independent coin
/// flips, the robot starts anywhere, and standing-start problems that need
/// re-orientation begin inside the edge band (Task-A) so the side grasp is
/// reachable. Task-A robots may also start with a closed gripper, forcing a
/// leading reset.
pub fn generate_problems(suite: &TaskSuite, n: usize, seed: u64) -> Vec<Problem> {
    let def = &suite.def;
    let task_b = def.objects.iter().any(|o| o == "box");
    let mut problems = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::tamp::derive_seed(seed, i as u64));
        let start_flag = if rng.gen_bool(0.5) { STANDING } else { LYING };
        let goal_flag = if rng.gen_bool(0.5) { STANDING } else { LYING };
        let needs_reorient = (start_flag - goal_flag).abs() > 0.5;

        let start_letter = if !task_b && needs_reorient && start_flag == STANDING {
            sample_letter_in_band(def, &mut rng, start_flag)
        } else {
            sample_letter(def, &mut rng, start_flag)
        };
        let goal_letter = loop {
            let candidate = sample_letter(def, &mut rng, goal_flag);
            let dist = candidate.planar_dist(&start_letter);
            let dtheta = wrap_angle(candidate.theta - start_letter.theta).abs();
            if dist >= 0.8 && dtheta >= 0.3 && dtheta <= 2.2 {
                break candidate;
            }
        };

        let start_grip = if !task_b && rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let mut start = letter_world(start_letter, sample_robot(def, &mut rng, start_grip));
        let mut goal = letter_world(goal_letter, def.robot_home);
        let mask = if task_b {
            let stage = start_letter.compose(&STAGE_OFF);
            let bx = loop {
                let candidate = sample_box_away_from(def, &mut rng, &start_letter, 1.2);
                if candidate.planar_dist(&stage) >= 0.8
                    && candidate.planar_dist(&goal_letter) >= 1.0
                {
                    break candidate;
                }
            };
            start = with_box(start, bx);
            goal = with_box(goal, bx); // box must end where it started
            GoalMask::objects_fully(&["letter", "box"])
        } else {
            GoalMask::objects_fully(&["letter"])
        };

        problems.push(Problem {
            start,
            goals: vec![goal],
            goal_mask: mask,
        });
    }
    problems
}

// ---------------------------------------------------------------------------
// Demonstration generation.
// ---------------------------------------------------------------------------

fn lerp_pose(a: &EntityPose, b: &EntityPose, alpha: f64) -> EntityPose {
    EntityPose::new(
        a.x + alpha * (b.x - a.x),
        a.y + alpha * (b.y - a.y),
        a.theta + alpha * wrap_angle(b.theta - a.theta),
        a.aux + alpha * (b.aux - a.aux),
    )
}

fn noisy(pose: &EntityPose, sigma: f64, rng: &mut ChaCha8Rng) -> EntityPose {
    if sigma <= 0.0 {
        return *pose;
    }
    let mut draw = || {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    EntityPose::new(
        pose.x + draw(),
        pose.y + draw(),
        pose.theta + draw(),
        pose.aux + draw(),
    )
}

/// T-step interpolated demonstration: the robot approaches its final pose in
/// the first half (objects frozen, grip unchanged), then objects and gripper
/// move to their scripted outcome in the second half.
fn demo_path(
    def: &SuiteDef,
    skill: &ScriptedSkill,
    start: &WorldState,
    tp: &TaskParams,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WorldState>> {
    let end = (skill.transition)(def, start, tp)?;
    let horizon = def.demo_horizon;
    let half = horizon / 2;
    let approach = EntityPose::new(end.robot.x, end.robot.y, end.robot.theta, start.robot.aux);
    let mut states = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut s = start.clone();
        if t < half {
            let alpha = t as f64 / half as f64;
            s.robot = lerp_pose(&start.robot, &approach, alpha);
        } else {
            let alpha = (t - half) as f64 / (horizon - 1 - half) as f64;
            s.robot = lerp_pose(&approach, &end.robot, alpha);
            for (id, pose) in &mut s.objects {
                *pose = lerp_pose(&start.objects[id], &end.objects[id], alpha);
            }
        }
        s.robot = noisy(&s.robot, sigma, rng);
        for pose in s.objects.values_mut() {
            *pose = noisy(pose, sigma, rng);
        }
        states.push(s);
    }
    Ok(states)
}

/// Generates `m` demonstrations of one skill with observation noise `sigma`.
pub fn generate_demos(
    suite: &TaskSuite,
    skill_name: &str,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    let skill = suite.skill(skill_name)?;
    let mut demos = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::tamp::derive_seed(
            seed,
            crate::tamp::stable_hash(skill_name) ^ i as u64,
        ));
        let (start, tp) = (skill.demo_sampler)(&suite.def, &mut rng);
        let states = demo_path(&suite.def, skill, &start, &tp, sigma, &mut rng)?;
        // Frame anchors: bound parameters from the recorded initial state,
        // free parameters as chosen.
        let mut frames = BTreeMap::new();
        for p in &skill.spec.params {
            let pose = match &p.kind {
                ParamKind::Bound { entity } => *states[0].entity(entity)?,
                ParamKind::Free => *tp.get(&p.name)?,
            };
            frames.insert(p.name.clone(), pose);
        }
        demos.push(Demonstration { states, frames });
    }
    Ok(demos)
}

// ---------------------------------------------------------------------------
// Environment.
// ---------------------------------------------------------------------------

/// Scheduled state override: after the given execution step, the entity is
/// forced to the pose (a perturbation injected for failure scenarios).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Perturbation {
    pub step: usize,
    pub entity: EntityId,
    pub pose: EntityPose,
}

/// Mutable execution environment: applies scripted transitions plus noise
/// and scheduled perturbations, and tracks the observed state.
pub struct Environment {
    suite: TaskSuite,
    pub state: WorldState,
    noise_sigma: f64,
    perturbations: Vec<Perturbation>,
    step_index: usize,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(
        suite: TaskSuite,
        start: WorldState,
        noise_sigma: f64,
        perturbations: Vec<Perturbation>,
        seed: u64,
    ) -> Self {
        Self {
            suite,
            state: start,
            noise_sigma,
            perturbations,
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    /// Executes one skill: scripted transition, observation noise, then any
    /// perturbation scheduled for this step. Returns the observed state.
    pub fn execute(
        &mut self,
        skill_name: &str,
        tp: &TaskParams,
        _trajectory: &[DVector<f64>],
    ) -> Result<WorldState> {
        let skill = self.suite.skill(skill_name)?;
        let mut next = (skill.transition)(&self.suite.def, &self.state, tp)?;
        if self.noise_sigma > 0.0 {
            next.robot = noisy(&next.robot, self.noise_sigma, &mut self.rng);
            let ids: Vec<EntityId> = next.objects.keys().cloned().collect();
            for id in ids {
                let pose = noisy(&next.objects[&id], self.noise_sigma, &mut self.rng);
                next.objects.insert(id, pose);
            }
        }
        for p in &self.perturbations {
            if p.step == self.step_index {
                next.set_entity(&p.entity, p.pose)?;
            }
        }
        self.step_index += 1;
        self.state = next.clone();
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill::{learn_skill, SkillLearnConfig};

    #[test]
    fn zero_noise_execution_is_exact() {
        let suite = task_a_suite();
        let problems = generate_problems(&suite, 1, 7);
        let start = problems[0].start.clone();
        let mut env = Environment::new(suite.clone(), start.clone(), 0.0, vec![], 0);
        let tp = TaskParams::bound_from_state(&suite.skill("pick_standing").unwrap().spec, &start)
            .unwrap();
        // Flag may be lying; use the matching pick.
        let skill = if start.objects["letter"].aux > 0.5 {
            "pick_standing"
        } else {
            "pick_flat"
        };
        let observed = env.execute(skill, &tp, &[]).unwrap();
        let expected =
            (suite.skill(skill).unwrap().transition)(&suite.def, &start, &tp).unwrap();
        assert_eq!(observed, expected);
    }

    #[test]
    fn scheduled_teleport_overrides_state() {
        let suite = task_a_suite();
        let problems = generate_problems(&suite, 1, 9);
        let start = problems[0].start.clone();
        let teleport = EntityPose::new(1.0, 1.0, 0.0, STANDING);
        let mut env = Environment::new(
            suite.clone(),
            start.clone(),
            0.0,
            vec![Perturbation { step: 0, entity: "letter".into(), pose: teleport }],
            0,
        );
        let tp = TaskParams(BTreeMap::from([(
            "R".to_string(),
            start.robot,
        )]));
        let observed = env.execute("reset", &tp, &[]).unwrap();
        assert_eq!(observed.objects["letter"], teleport);
    }

    #[test]
    fn execution_noise_matches_requested_sigma() {
        let suite = task_a_suite();
        let problems = generate_problems(&suite, 1, 3);
        let start = problems[0].start.clone();
        let sigma = 0.01;
        let tp = TaskParams(BTreeMap::from([("R".to_string(), start.robot)]));
        let mut xs = Vec::new();
        for seed in 0..1000 {
            let mut env = Environment::new(suite.clone(), start.clone(), sigma, vec![], seed);
            let observed = env.execute("reset", &tp, &[]).unwrap();
            xs.push(observed.robot.x - suite.def.robot_home.x);
        }
        let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        let std =
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!(
            (std - sigma).abs() < 0.2 * sigma,
            "empirical std {std} too far from {sigma}"
        );
    }

    #[test]
    fn demo_generation_is_deterministic() {
        let suite = task_a_suite();
        let a = generate_demos(&suite, "rotate", 3, 0.01, 5).unwrap();
        let b = generate_demos(&suite, "rotate", 3, 0.01, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn noiseless_demo_ends_at_scripted_outcome() {
        let suite = task_a_suite();
        let demos = generate_demos(&suite, "translate", 1, 0.0, 11).unwrap();
        let demo = &demos[0];
        let skill = suite.skill("translate").unwrap();
        let tp = TaskParams(demo.frames.clone());
        let expected = (skill.transition)(&suite.def, demo.initial(), &tp).unwrap();
        let last = demo.terminal();
        assert!((last.objects["letter"].x - expected.objects["letter"].x).abs() < 1e-9);
        assert!((last.robot.x - expected.robot.x).abs() < 1e-9);
    }

    // Learn-then-predict oracle: every suite skill learned from 9 noiseless
    // demos must predict its scripted effect within 1e-2 on random valid
    // start configurations.
    #[test]
    fn learned_skills_predict_scripted_effects() {
        let suite = task_a_suite();
        for scripted in &suite.skills {
            let demos = generate_demos(&suite, &scripted.spec.name, 9, 0.0, 21).unwrap();
            let model = learn_skill(&demos, &scripted.spec, &SkillLearnConfig::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let mut worst: f64 = 0.0;
            for _ in 0..50 {
                let (state, tp) = (scripted.demo_sampler)(&suite.def, &mut rng);
                let truth = (scripted.transition)(&suite.def, &state, &tp).unwrap();
                let predicted = model.apply_effect(&state, &tp).unwrap();
                for id in state.entity_ids() {
                    let a = truth.entity(&id).unwrap();
                    let b = predicted.entity(&id).unwrap();
                    worst = worst
                        .max((a.x - b.x).abs())
                        .max((a.y - b.y).abs())
                        .max(wrap_angle(a.theta - b.theta).abs())
                        .max((a.aux - b.aux).abs());
                }
            }
            assert!(
                worst < 1e-2,
                "{}: worst effect prediction error {worst}",
                scripted.spec.name
            );
        }
    }

    #[test]
    fn problem_generator_respects_flags_and_band() {
        let suite = task_a_suite();
        let problems = generate_problems(&suite, 40, 123);
        let mut mismatched = 0;
        for p in &problems {
            let s = p.start.objects["letter"];
            let g = p.goal().objects["letter"];
            assert!(s.aux == STANDING || s.aux == LYING);
            if (s.aux - g.aux).abs() > 0.5 {
                mismatched += 1;
                if s.aux == STANDING {
                    assert!(s.y < suite.def.edge_band_y, "standing mismatched start must be in band");
                }
            }
            assert!(s.planar_dist(&g) >= 0.8);
        }
        assert!(mismatched > 5, "generator should produce both branches");
    }
}
