//! Instruction-conditioned reach, grasp and place task in the unit square.
//!
//! The action is `(dx, dy, g)` in normalized command units: moves in
//! `[-limit, limit]` are scaled by `move_scale` arena units, and `g > 0` is a
//! close-gripper intent. The instruction selects which object must be carried
//! to the target. Grasping and releasing succeed anywhere inside a radius, so
//! a contiguous band of move commands is near-optimal in most states.
//!
//! Dynamics are deterministic given `(state, action)`; randomness lives only
//! in [`Env::reset`] and in observation noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::ActionGrid;

pub type Vec2 = [f64; 2];

/// Number of action dimensions: two move axes and the gripper.
pub const ACTION_DIMS: usize = 3;
/// `dx` and `dy` come first; the last dimension is the gripper.
pub const MOVE_DIMS: usize = 2;

/// Slot value for objects that are absent from the scene.
const ABSENT: Vec2 = [-1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    Sparse,
    Shaped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub horizon: usize,
    /// Objects placed in the scene; the first `instructions` are targets of
    /// instructions, the rest are distractors.
    pub objects: usize,
    /// Object slots in the observation (fixed observation length).
    pub object_slots: usize,
    /// Instruction ids used during training; id `i` asks for object `i`.
    pub instructions: usize,
    pub success_radius: f64,
    pub grasp_radius: f64,
    /// Move commands are limited to `[-limit, limit]`.
    pub action_limit: f64,
    /// Arena units moved per unit of command.
    pub move_scale: f64,
    pub obs_noise: f64,
    /// Fixed displacement added to the sampled gripper start.
    pub start_offset: Vec2,
    /// Step count at which the target jumps, if any.
    pub reposition_step: Option<usize>,
    pub reposition_distance: f64,
    /// Presented instruction id for each semantic id; identity by default.
    pub instruction_remap: Vec<usize>,
    pub reward: RewardMode,
    /// Spawn centers of the first objects; objects past the list spawn
    /// uniformly in `[0.1, 0.9]^2`.
    pub object_anchors: Vec<Vec2>,
    pub target_anchor: Vec2,
    /// Per-axis half-widths of the uniform box around object and target
    /// anchors.
    pub spawn_jitter: Vec2,
    pub gripper_anchor: Vec2,
    pub gripper_jitter: Vec2,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 17,
            objects: 2,
            object_slots: 4,
            instructions: 2,
            success_radius: 0.1,
            grasp_radius: 0.1,
            action_limit: 1.0,
            move_scale: 0.05,
            obs_noise: 0.0,
            start_offset: [0.0, 0.0],
            reposition_step: None,
            reposition_distance: 0.15,
            instruction_remap: vec![0, 1],
            reward: RewardMode::Sparse,
            object_anchors: vec![[0.3, 0.5], [0.7, 0.5]],
            target_anchor: [0.5, 0.8],
            spawn_jitter: [0.15, 0.05],
            gripper_anchor: [0.5, 0.15],
            gripper_jitter: [0.2, 0.05],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("env.horizon must be >= 1"));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::config("env.success_radius must be > 0"));
        }
        if !(self.grasp_radius > 0.0) {
            return Err(Error::config("env.grasp_radius must be > 0"));
        }
        if !(self.action_limit > 0.0) {
            return Err(Error::config("env.action_limit must be > 0"));
        }
        if !(self.move_scale > 0.0) {
            return Err(Error::config("env.move_scale must be > 0"));
        }
        if !(self.obs_noise >= 0.0) {
            return Err(Error::config("env.obs_noise must be >= 0"));
        }
        if self.instructions == 0 || self.instructions > self.objects {
            return Err(Error::config(format!(
                "env.instructions must be in 1..={}, got {}",
                self.objects, self.instructions
            )));
        }
        if self.objects > self.object_slots {
            return Err(Error::config(format!(
                "env.objects ({}) exceeds env.object_slots ({})",
                self.objects, self.object_slots
            )));
        }
        if !self
            .spawn_jitter
            .iter()
            .chain(&self.gripper_jitter)
            .all(|&j| j >= 0.0)
        {
            return Err(Error::config(
                "env.spawn_jitter and env.gripper_jitter must be >= 0",
            ));
        }
        if self.instruction_remap.len() != self.instructions {
            return Err(Error::config(
                "env.instruction_remap needs one entry per instruction",
            ));
        }
        Ok(())
    }

    /// Length of the observation vector.
    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.object_slots + 1 + 2
    }

    /// Size of the instruction-embedding table a policy needs: every
    /// presented id, including held-out ones.
    pub fn instruction_vocab(&self) -> usize {
        self.instruction_remap
            .iter()
            .copied()
            .max()
            .map_or(self.instructions, |m| (m + 1).max(self.instructions))
    }

    /// Embedding rows a policy trained here needs so that the held-out ids
    /// of the unseen-instruction variant exist (untrained) in its table.
    pub fn embedding_rows(&self) -> usize {
        self.instruction_vocab().max(2 * self.instructions)
    }

    /// Action grid over normalized commands with `bins` per dimension.
    pub fn action_grid(&self, bins: usize) -> Result<ActionGrid> {
        ActionGrid::uniform(ACTION_DIMS, -self.action_limit, self.action_limit, bins)
    }
}

/// Perturbation axes for out-of-distribution evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OodAxis {
    VisionWeak,
    VisionStrong,
    SemanticUnseenInstruction,
    SemanticMultiObject,
    ExecutionStartPose,
    ExecutionReposition,
}

impl OodAxis {
    pub const ALL: [OodAxis; 6] = [
        OodAxis::VisionWeak,
        OodAxis::VisionStrong,
        OodAxis::SemanticUnseenInstruction,
        OodAxis::SemanticMultiObject,
        OodAxis::ExecutionStartPose,
        OodAxis::ExecutionReposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OodAxis::VisionWeak => "vision-weak",
            OodAxis::VisionStrong => "vision-strong",
            OodAxis::SemanticUnseenInstruction => "semantic-unseen-instruction",
            OodAxis::SemanticMultiObject => "semantic-multi-object",
            OodAxis::ExecutionStartPose => "execution-start-pose",
            OodAxis::ExecutionReposition => "execution-reposition",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown OOD axis `{s}`")))
    }
}

/// Derives a perturbed configuration from a canonical one.
pub fn make_ood_variant(base: &EnvConfig, axis: OodAxis) -> Result<EnvConfig> {
    base.validate()?;
    let mut cfg = base.clone();
    match axis {
        OodAxis::VisionWeak => cfg.obs_noise = 0.01,
        OodAxis::VisionStrong => cfg.obs_noise = 0.03,
        OodAxis::SemanticUnseenInstruction => {
            let n = cfg.instructions;
            cfg.instruction_remap = (n..2 * n).collect();
        }
        OodAxis::SemanticMultiObject => {
            cfg.objects += 2;
            cfg.object_slots = cfg.object_slots.max(cfg.objects);
        }
        OodAxis::ExecutionStartPose => cfg.start_offset = [0.0, 0.2],
        OodAxis::ExecutionReposition => {
            cfg.reposition_step = Some(cfg.horizon / 2);
            cfg.reposition_distance = 0.15;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub gripper: Vec2,
    pub objects: Vec<Vec2>,
    pub holding: Option<usize>,
    pub target: Vec2,
    pub step: usize,
    /// Semantic instruction: index of the object to place.
    pub instruction: usize,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    state: WorldState,
    noise_rng: ChaCha8Rng,
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_unit(p: Vec2) -> Vec2 {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

impl Env {
    /// Creates an environment in a placeholder state; call [`Env::reset`]
    /// before stepping.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let state = WorldState {
            gripper: [0.5, 0.15],
            objects: vec![ABSENT; config.objects],
            holding: None,
            target: [0.5, 0.5],
            step: 0,
            instruction: 0,
            done: true,
            success: false,
        };
        Ok(Self {
            config,
            state,
            noise_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Instruction id as presented to the policy.
    pub fn presented_instruction(&self) -> usize {
        self.config.instruction_remap[self.state.instruction]
    }

    /// Samples a new episode. Returns the observation and the presented
    /// instruction id.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(Vec<f64>, usize)> {
        let cfg = &self.config;
        let min_sep = 2.0 * cfg.success_radius;
        let instruction = rng.random_range(0..cfg.instructions);
        for _ in 0..1000 {
            let g = jittered(rng, cfg.gripper_anchor, cfg.gripper_jitter);
            let gripper = clamp_unit([g[0] + cfg.start_offset[0], g[1] + cfg.start_offset[1]]);
            let objects: Vec<Vec2> = (0..cfg.objects)
                .map(|i| match cfg.object_anchors.get(i) {
                    Some(&c) => jittered(rng, c, cfg.spawn_jitter),
                    None => [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                })
                .collect();
            let target = jittered(rng, cfg.target_anchor, cfg.spawn_jitter);
            let mut points = Vec::with_capacity(cfg.objects + 2);
            points.push(gripper);
            points.extend_from_slice(&objects);
            points.push(target);
            let separated = points
                .iter()
                .enumerate()
                .all(|(i, a)| points[i + 1..].iter().all(|b| dist(*a, *b) >= min_sep));
            if separated {
                self.state = WorldState {
                    gripper,
                    objects,
                    holding: None,
                    target,
                    step: 0,
                    instruction,
                    done: false,
                    success: false,
                };
                self.noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
                let obs = self.observe();
                return Ok((obs, self.presented_instruction()));
            }
        }
        Err(Error::config(
            "could not place entities with the required separation in 1000 draws",
        ))
    }

    /// Observation layout: gripper (2), `object_slots` object positions (2
    /// each, `(-1, -1)` when absent), holding flag, target (2). Every entry
    /// gets independent Gaussian noise of the configured std.
    pub fn observe(&mut self) -> Vec<f64> {
        let mut obs = self.clean_observation();
        if self.config.obs_noise > 0.0 {
            let std = self.config.obs_noise;
            for x in &mut obs {
                *x += std * standard_normal(&mut self.noise_rng);
            }
        }
        obs
    }

    pub fn clean_observation(&self) -> Vec<f64> {
        let s = &self.state;
        let mut obs = Vec::with_capacity(self.config.obs_dim());
        obs.extend_from_slice(&s.gripper);
        for k in 0..self.config.object_slots {
            obs.extend_from_slice(s.objects.get(k).unwrap_or(&ABSENT));
        }
        obs.push(if s.holding.is_some() { 1.0 } else { 0.0 });
        obs.extend_from_slice(&s.target);
        obs
    }

    /// Advances the simulator without producing an observation.
    pub fn step_state(&mut self, action: &[f64]) -> Result<(f64, bool)> {
        if action.len() != ACTION_DIMS {
            return Err(Error::Shape {
                what: "env action",
                expected: ACTION_DIMS,
                got: action.len(),
            });
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::numeric("NaN in env action"));
        }
        if self.state.done {
            return Err(Error::config(
                "step called on a finished episode; reset first",
            ));
        }
        let cfg = &self.config;
        let lim = cfg.action_limit;
        let s = &mut self.state;
        let dx = action[0].clamp(-lim, lim) * cfg.move_scale;
        let dy = action[1].clamp(-lim, lim) * cfg.move_scale;
        s.gripper = clamp_unit([s.gripper[0] + dx, s.gripper[1] + dy]);
        if let Some(o) = s.holding {
            s.objects[o] = s.gripper;
        }

        let mut reward = 0.0;
        let close = action[2] > 0.0;
        let wanted = s.instruction;
        match s.holding {
            None if close && dist(s.gripper, s.objects[wanted]) <= cfg.grasp_radius => {
                s.holding = Some(wanted);
                s.objects[wanted] = s.gripper;
            }
            Some(o) if !close => {
                s.holding = None;
                if o == wanted && dist(s.objects[o], s.target) <= cfg.success_radius {
                    reward = 1.0;
                    s.success = true;
                }
            }
            _ => {}
        }

        s.step += 1;
        if cfg.reposition_step == Some(s.step) {
            s.target = displaced_target(s.gripper, s.target, cfg.reposition_distance);
        }
        if cfg.reward == RewardMode::Shaped && !s.success {
            let d = match s.holding {
                Some(o) => dist(s.objects[o], s.target),
                None => dist(s.gripper, s.objects[wanted]),
            };
            reward -= 0.01 * d;
        }
        s.done = s.success || s.step >= cfg.horizon;
        Ok((reward, s.done))
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let (reward, done) = self.step_state(action)?;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done,
        })
    }
}

/// Pushes the target `distance` away from the gripper, or along the first
/// of the perpendicular and reverse directions that stays in the arena.
fn displaced_target(gripper: Vec2, target: Vec2, distance: f64) -> Vec2 {
    let (mut ux, mut uy) = (target[0] - gripper[0], target[1] - gripper[1]);
    let norm = (ux * ux + uy * uy).sqrt();
    if norm > 1e-12 {
        ux /= norm;
        uy /= norm;
    } else {
        (ux, uy) = (1.0, 0.0);
    }
    let inside = |p: Vec2| p.iter().all(|&v| (0.05..=0.95).contains(&v));
    [(ux, uy), (-uy, ux), (uy, -ux), (-ux, -uy)]
        .into_iter()
        .map(|(x, y)| [target[0] + distance * x, target[1] + distance * y])
        .find(|&p| inside(p))
        .unwrap_or([target[0] - distance * ux, target[1] - distance * uy])
}

fn jittered<R: Rng + ?Sized>(rng: &mut R, c: Vec2, j: Vec2) -> Vec2 {
    clamp_unit([
        c[0] + rng.random_range(-j[0]..=j[0]),
        c[1] + rng.random_range(-j[1]..=j[1]),
    ])
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Privileged scripted controller: chase the instructed object, close when
/// the next move lands well inside the grasp radius, then carry to the target
/// and open when the next move lands well inside the success radius.
pub fn expert(config: &EnvConfig, state: &WorldState) -> Vec<f64> {
    let lim = config.action_limit;
    let goal = match state.holding {
        Some(_) => state.target,
        None => state.objects[state.instruction],
    };
    let cmd = |delta: f64| (delta / config.move_scale).clamp(-lim, lim);
    let dx = cmd(goal[0] - state.gripper[0]);
    let dy = cmd(goal[1] - state.gripper[1]);
    let next = clamp_unit([
        state.gripper[0] + dx * config.move_scale,
        state.gripper[1] + dy * config.move_scale,
    ]);
    let remaining = dist(next, goal);
    let g = match state.holding {
        None if remaining <= 0.5 * config.grasp_radius => 1.0,
        None => -1.0,
        Some(_) if remaining <= 0.5 * config.success_radius => -1.0,
        Some(_) => 1.0,
    };
    vec![dx, dy, g]
}

/// Discounted one-step lookahead values over every joint bin combination.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub dims: usize,
    pub bins: usize,
    /// Indexed by the mixed-radix number of the bin vector, dimension 0 most
    /// significant.
    pub values: Vec<f64>,
}

impl QTable {
    pub fn index(&self, bins: &[usize]) -> usize {
        bins.iter().fold(0, |acc, &j| acc * self.bins + j)
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims];
        for d in (0..self.dims).rev() {
            out[d] = idx % self.bins;
            idx /= self.bins;
        }
        out
    }

    pub fn get(&self, bins: &[usize]) -> f64 {
        self.values[self.index(bins)]
    }
}

/// For each joint bin action: take it once from `env`'s current state, then
/// follow the scripted expert to the end of the episode, summing discounted
/// rewards. A finished episode yields an all-zero table.
pub fn q_oracle_one_step(env: &Env, grid: &ActionGrid, gamma: f64) -> Result<QTable> {
    if grid.dims() != ACTION_DIMS {
        return Err(Error::Shape {
            what: "Q-oracle grid dimensions",
            expected: ACTION_DIMS,
            got: grid.dims(),
        });
    }
    let total = grid
        .bins()
        .checked_pow(ACTION_DIMS as u32)
        .unwrap_or(usize::MAX);
    if total > 10_000 {
        return Err(Error::Capacity(format!(
            "{} joint actions exceed the enumeration limit of 10000",
            total
        )));
    }
    let mut table = QTable {
        dims: ACTION_DIMS,
        bins: grid.bins(),
        values: vec![0.0; total],
    };
    if env.state().done {
        return Ok(table);
    }
    for idx in 0..total {
        let bins = table.unravel(idx);
        let action = grid.decode(&bins)?;
        let mut sim = env.clone();
        let (mut ret, mut done) = sim.step_state(&action)?;
        let mut discount = gamma;
        while !done {
            let a = expert(sim.config(), sim.state());
            let (r, d) = sim.step_state(&a)?;
            ret += discount * r;
            discount *= gamma;
            done = d;
        }
        table.values[idx] = ret;
    }
    Ok(table)
}

/// Runs the expert for one episode, returning `(observation, instruction,
/// continuous action)` triples and whether it succeeded.
pub fn expert_episode<R: Rng + ?Sized>(
    env: &mut Env,
    rng: &mut R,
) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, usize, bool)> {
    let (mut obs, instr) = env.reset(rng)?;
    let mut steps = Vec::new();
    loop {
        let a = expert(env.config(), env.state());
        let out = env.step(&a)?;
        steps.push((obs, a));
        obs = out.obs;
        if out.done {
            break;
        }
    }
    Ok((steps, instr, env.state().success))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noiseless_observation_matches_state() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        let (obs, instr) = env.reset(&mut rng(1)).unwrap();
        let s = env.state().clone();
        assert_eq!(instr, s.instruction);
        assert_eq!(&obs[0..2], &s.gripper);
        assert_eq!(&obs[2..4], &s.objects[0]);
        assert_eq!(&obs[4..6], &s.objects[1]);
        assert_eq!(&obs[6..10], &[-1.0, -1.0, -1.0, -1.0]);
        assert_eq!(obs[10], 0.0);
        assert_eq!(&obs[11..13], &s.target);
        assert_eq!(obs.len(), EnvConfig::default().obs_dim());
    }

    #[test]
    fn reset_is_seeded() {
        let mut a = Env::new(EnvConfig::default()).unwrap();
        let mut b = Env::new(EnvConfig::default()).unwrap();
        assert_eq!(a.reset(&mut rng(5)).unwrap(), b.reset(&mut rng(5)).unwrap());
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn reset_separation_audit() {
        let cfg = EnvConfig::default();
        let mut env = Env::new(cfg.clone()).unwrap();
        let mut r = rng(2024);
        for _ in 0..10_000 {
            env.reset(&mut r).unwrap();
            let s = env.state();
            let mut pts = vec![s.gripper];
            pts.extend_from_slice(&s.objects);
            pts.push(s.target);
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    assert!(dist(pts[i], pts[j]) >= 2.0 * cfg.success_radius);
                }
            }
        }
    }

    #[test]
    fn idle_policy_times_out_without_reward() {
        let cfg = EnvConfig::default();
        let mut env = Env::new(cfg.clone()).unwrap();
        env.reset(&mut rng(3)).unwrap();
        for t in 0..cfg.horizon {
            let out = env.step(&[0.0, 0.0, 0.0]).unwrap();
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.done, t + 1 == cfg.horizon);
        }
    }

    #[test]
    fn wrong_action_arity() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        env.reset(&mut rng(3)).unwrap();
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn release_on_the_success_boundary_pays() {
        let cfg = EnvConfig::default();
        let mut env = Env::new(cfg.clone()).unwrap();
        env.reset(&mut rng(4)).unwrap();
        let target = env.state().target;
        let at = [target[0] - (cfg.success_radius - 1e-9), target[1]];
        env.state.gripper = at;
        env.state.holding = Some(env.state.instruction);
        let i = env.state.instruction;
        env.state.objects[i] = at;
        let out = env.step(&[0.0, 0.0, -1.0]).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
    }

    #[test]
    fn expert_special_states() {
        let cfg = EnvConfig::default();
        let mut env = Env::new(cfg.clone()).unwrap();
        env.reset(&mut rng(8)).unwrap();
        let mut s = env.state().clone();
        s.gripper = s.target;
        s.holding = Some(s.instruction);
        let a = expert(&cfg, &s);
        assert!(a[0].abs() < 1e-12 && a[1].abs() < 1e-12 && a[2] <= 0.0);

        let mut s = env.state().clone();
        s.holding = None;
        s.gripper = [0.3, 0.5];
        s.objects[s.instruction] = [0.3 + 3.0 * cfg.action_limit * cfg.move_scale, 0.5];
        let a = expert(&cfg, &s);
        assert_eq!(a, vec![cfg.action_limit, 0.0, -1.0]);
    }

    #[test]
    fn expert_is_nearly_perfect_on_canonical_task() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        let mut wins = 0;
        for seed in 0..100 {
            let (_, _, ok) = expert_episode(&mut env, &mut rng(seed)).unwrap();
            wins += ok as usize;
        }
        assert!(wins >= 99, "expert won {wins}/100");
    }

    #[test]
    fn ood_variants_read_back() {
        let base = EnvConfig::default();
        assert_eq!(
            make_ood_variant(&base, OodAxis::VisionWeak)
                .unwrap()
                .obs_noise,
            0.01
        );
        assert_eq!(
            make_ood_variant(&base, OodAxis::VisionStrong)
                .unwrap()
                .obs_noise,
            0.03
        );
        let sem = make_ood_variant(&base, OodAxis::SemanticUnseenInstruction).unwrap();
        assert_eq!(sem.instruction_remap, vec![2, 3]);
        assert_eq!(sem.instruction_vocab(), 4);
        let multi = make_ood_variant(&base, OodAxis::SemanticMultiObject).unwrap();
        assert_eq!(multi.objects, 4);
        assert_eq!(multi.obs_dim(), base.obs_dim());
        for axis in OodAxis::ALL {
            assert_eq!(OodAxis::parse(axis.name()).unwrap(), axis);
        }
        assert!(OodAxis::parse("vision-medium").is_err());
    }

    #[test]
    fn reposition_moves_target_by_fixed_distance() {
        let cfg = make_ood_variant(&EnvConfig::default(), OodAxis::ExecutionReposition).unwrap();
        let mut env = Env::new(cfg.clone()).unwrap();
        env.reset(&mut rng(12)).unwrap();
        let half = cfg.horizon / 2;
        let mut before = env.state().target;
        for t in 1..=half {
            if t == half {
                before = env.state().target;
            }
            env.step(&[0.0, 0.0, -1.0]).unwrap();
        }
        let after = env.state().target;
        assert!((dist(before, after) - 0.15).abs() <= 1e-12);
    }

    #[test]
    fn multi_object_observation_fills_slots() {
        let cfg = make_ood_variant(&EnvConfig::default(), OodAxis::SemanticMultiObject).unwrap();
        let mut env = Env::new(cfg).unwrap();
        let (obs, _) = env.reset(&mut rng(1)).unwrap();
        assert!(obs[6..10].iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn q_oracle_on_finished_episode_is_flat() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        let mut r = rng(21);
        env.reset(&mut r).unwrap();
        while !env.state().done {
            let a = expert(env.config(), env.state());
            env.step(&a).unwrap();
        }
        let grid = env.config().action_grid(5).unwrap();
        let q = q_oracle_one_step(&env, &grid, 0.99).unwrap();
        assert!(q.values.iter().all(|&v| v == q.values[0]));
    }

    #[test]
    fn q_oracle_is_deterministic_and_bounded() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        env.reset(&mut rng(31)).unwrap();
        let grid = env.config().action_grid(5).unwrap();
        let a = q_oracle_one_step(&env, &grid, 0.99).unwrap();
        let b = q_oracle_one_step(&env, &grid, 0.99).unwrap();
        assert_eq!(a, b);
        let big = env.config().action_grid(22).unwrap();
        assert!(matches!(
            q_oracle_one_step(&env, &big, 0.99),
            Err(Error::Capacity(_))
        ));
    }
}
