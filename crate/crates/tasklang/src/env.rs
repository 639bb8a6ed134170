//! Deterministic 2D ball-pushing world. Five colored balls live in a square
//! arena; an agent pushes one ball per step along one of eight headings. An
//! episode is conditioned on a relational instruction ("put the mover ball at
//! a fixed offset from the destination ball") and rewarded by the decrease in
//! distance to the goal point, with a terminal bonus or penalty.
//!
//! All stepping is pure arithmetic: randomness enters only through `reset`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::error::{Error, Result};

pub const N_BALLS: usize = 5;
pub const OBS_DIM: usize = 2 * N_BALLS;
pub const HEADINGS: usize = 8;
pub const ACTION_COUNT: usize = N_BALLS * HEADINGS;
pub const DIRECTIONS: usize = 4;
/// Canonical instruction count: 5 movers x 4 directions x 4 destinations.
pub const INSTRUCTION_COUNT: usize = N_BALLS * DIRECTIONS * (N_BALLS - 1);

/// Ball order fixes the observation layout and all color indices.
pub const COLORS: [&str; N_BALLS] = ["red", "blue", "green", "cyan", "purple"];

pub fn color_index(name: &str) -> Option<usize> {
    COLORS.iter().position(|c| *c == name)
}

/// Spatial relation of the mover to the destination. Front is +y, behind is
/// -y, left is -x, right is +x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Front,
    Behind,
    Left,
    Right,
}

pub const ALL_DIRECTIONS: [Direction; 4] = [
    Direction::Front,
    Direction::Behind,
    Direction::Left,
    Direction::Right,
];

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Front => 0,
            Direction::Behind => 1,
            Direction::Left => 2,
            Direction::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Direction> {
        ALL_DIRECTIONS
            .get(i)
            .copied()
            .ok_or_else(|| Error::Env(format!("direction index {i} out of range 0..4")))
    }

    pub fn unit(self) -> [f64; 2] {
        match self {
            Direction::Front => [0.0, 1.0],
            Direction::Behind => [0.0, -1.0],
            Direction::Left => [-1.0, 0.0],
            Direction::Right => [1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Front => "front",
            Direction::Behind => "behind",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// Relational goal: place `mover` at offset `direction` from `destination`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 3]", try_from = "[usize; 3]")]
pub struct Instruction {
    pub mover: usize,
    pub direction: Direction,
    pub destination: usize,
}

impl From<Instruction> for [usize; 3] {
    fn from(i: Instruction) -> [usize; 3] {
        [i.mover, i.direction.index(), i.destination]
    }
}

impl TryFrom<[usize; 3]> for Instruction {
    type Error = Error;

    fn try_from(v: [usize; 3]) -> Result<Instruction> {
        let [m, d, t] = v;
        if m >= N_BALLS || t >= N_BALLS {
            return Err(Error::Env(format!("ball index out of range in [{m}, {d}, {t}]")));
        }
        if m == t {
            return Err(Error::Env(format!("mover equals destination in [{m}, {d}, {t}]")));
        }
        Ok(Instruction {
            mover: m,
            direction: Direction::from_index(d)?,
            destination: t,
        })
    }
}

impl Instruction {
    pub fn new(mover: usize, direction: Direction, destination: usize) -> Result<Instruction> {
        Instruction::try_from([mover, direction.index(), destination])
    }
}

/// All 80 instructions in canonical order: mover-major, then direction, then
/// destination (skipping destination == mover).
pub fn all_instructions() -> Vec<Instruction> {
    let mut out = Vec::with_capacity(INSTRUCTION_COUNT);
    for mover in 0..N_BALLS {
        for dir in ALL_DIRECTIONS {
            for dest in 0..N_BALLS {
                if dest != mover {
                    out.push(Instruction { mover, direction: dir, destination: dest });
                }
            }
        }
    }
    out
}

/// Index of an instruction in the canonical enumeration.
pub fn instruction_index(instr: &Instruction) -> usize {
    let dest_slot = if instr.destination < instr.mover {
        instr.destination
    } else {
        instr.destination - 1
    };
    instr.mover * DIRECTIONS * (N_BALLS - 1) + instr.direction.index() * (N_BALLS - 1) + dest_slot
}

/// Deterministic even-stride subset of the canonical enumeration, used to
/// restrict a task to `count` instructions with balanced mover coverage.
pub fn instruction_subset(count: usize) -> Vec<Instruction> {
    let all = all_instructions();
    assert!(count >= 1 && count <= all.len(), "subset size out of range");
    (0..count).map(|i| all[i * all.len() / count]).collect()
}

/// One push: a ball index and one of eight headings. Headings start at +x and
/// advance counterclockwise in 45 degree increments; diagonal displacement is
/// scaled so every push moves the same distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushAction {
    pub ball: usize,
    pub heading: usize,
}

impl PushAction {
    pub fn index(self) -> usize {
        self.ball * HEADINGS + self.heading
    }

    pub fn from_index(i: usize) -> Result<PushAction> {
        if i >= ACTION_COUNT {
            return Err(Error::Env(format!("action index {i} out of range 0..{ACTION_COUNT}")));
        }
        Ok(PushAction { ball: i / HEADINGS, heading: i % HEADINGS })
    }

    pub fn heading_vec(self) -> [f64; 2] {
        const D: f64 = std::f64::consts::FRAC_1_SQRT_2;
        match self.heading {
            0 => [1.0, 0.0],
            1 => [D, D],
            2 => [0.0, 1.0],
            3 => [-D, D],
            4 => [-1.0, 0.0],
            5 => [-D, -D],
            6 => [0.0, -1.0],
            7 => [D, -D],
            _ => unreachable!("heading validated at construction"),
        }
    }
}

pub type Positions = [[f64; 2]; N_BALLS];

/// Flattened observation in fixed color order.
pub fn observe(positions: &Positions) -> Vec<f64> {
    let mut o = Vec::with_capacity(OBS_DIM);
    for p in positions {
        o.push(p[0]);
        o.push(p[1]);
    }
    o
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub positions: Positions,
    pub t: u32,
    /// Seed the episode was reset with; steps draw no randomness.
    pub seed: u64,
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Goal point for an instruction: destination ball plus the relation offset.
pub fn target_point(positions: &Positions, instr: &Instruction, cfg: &EnvConfig) -> [f64; 2] {
    let d = positions[instr.destination];
    let u = instr.direction.unit();
    [d[0] + cfg.target_offset * u[0], d[1] + cfg.target_offset * u[1]]
}

pub fn goal_distance(positions: &Positions, instr: &Instruction, cfg: &EnvConfig) -> f64 {
    dist(positions[instr.mover], target_point(positions, instr, cfg))
}

/// Strict inequality: a mover exactly on the success boundary does not count.
pub fn is_satisfied(positions: &Positions, instr: &Instruction, cfg: &EnvConfig) -> bool {
    goal_distance(positions, instr, cfg) < cfg.success_radius
}

fn clamp_to_arena(p: &mut [f64; 2], half: f64) {
    p[0] = p[0].clamp(-half, half);
    p[1] = p[1].clamp(-half, half);
}

/// Moves only the pushed ball out of any overlap it caused. Other balls never
/// move. Falls back to a deterministic lattice scan in the rare corner case
/// where wall clamping keeps reintroducing contact.
fn resolve_overlaps(positions: &mut Positions, pushed: usize, cfg: &EnvConfig) {
    let min_gap = 2.0 * cfg.ball_radius;
    for _ in 0..8 {
        let mut moved = false;
        for o in 0..N_BALLS {
            if o == pushed {
                continue;
            }
            let d = dist(positions[pushed], positions[o]);
            if d < min_gap - 1e-12 {
                let dir = if d > 1e-9 {
                    [
                        (positions[pushed][0] - positions[o][0]) / d,
                        (positions[pushed][1] - positions[o][1]) / d,
                    ]
                } else {
                    [1.0, 0.0]
                };
                positions[pushed] = [
                    positions[o][0] + dir[0] * min_gap,
                    positions[o][1] + dir[1] * min_gap,
                ];
                clamp_to_arena(&mut positions[pushed], cfg.half_width);
                moved = true;
            }
        }
        if !moved {
            return;
        }
    }
    let clear = |positions: &Positions, p: [f64; 2]| {
        (0..N_BALLS).all(|o| o == pushed || dist(p, positions[o]) >= min_gap - 1e-12)
    };
    if clear(positions, positions[pushed]) {
        return;
    }
    // Lattice fallback: nearest clear point on a half-radius grid, scanned in
    // a fixed order so the outcome stays deterministic.
    let step = cfg.ball_radius * 0.5;
    let n = (2.0 * cfg.half_width / step).ceil() as i64;
    let mut best: Option<([f64; 2], f64)> = None;
    for ix in 0..=n {
        for iy in 0..=n {
            let p = [
                -cfg.half_width + ix as f64 * step,
                -cfg.half_width + iy as f64 * step,
            ];
            if clear(positions, p) {
                let d = dist(p, positions[pushed]);
                let better = match best {
                    None => true,
                    Some((_, bd)) => d < bd - 1e-12,
                };
                if better {
                    best = Some((p, d));
                }
            }
        }
    }
    if let Some((p, _)) = best {
        positions[pushed] = p;
    }
}

/// Applies one push to `positions`: displace, clamp to the arena, then push
/// the moved ball back out of any overlap. Pure; shared by `step` and the
/// scripted controller's one-step lookahead.
pub fn apply_push(positions: &Positions, action: PushAction, cfg: &EnvConfig) -> Positions {
    let mut out = *positions;
    let v = action.heading_vec();
    out[action.ball][0] += cfg.step_size * v[0];
    out[action.ball][1] += cfg.step_size * v[1];
    clamp_to_arena(&mut out[action.ball], cfg.half_width);
    resolve_overlaps(&mut out, action.ball, cfg);
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    pub goal_distance: f64,
    /// Whether the instruction was already satisfied before this step.
    pub pre_satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub const SUCCESS_BONUS: f64 = 5.0;
pub const TIMEOUT_PENALTY: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct BallEnv {
    pub cfg: EnvConfig,
    pub state: EnvState,
    pub instruction: Instruction,
    done: bool,
}

impl BallEnv {
    /// Builds an env and performs the initial reset.
    pub fn new(cfg: EnvConfig, seed: u64, instruction: Instruction) -> Result<BallEnv> {
        let state = sample_state(&cfg, seed)?;
        Ok(BallEnv { cfg, state, instruction, done: false })
    }

    pub fn reset(&mut self, seed: u64, instruction: Instruction) -> Result<Vec<f64>> {
        self.state = sample_state(&self.cfg, seed)?;
        self.instruction = instruction;
        self.done = false;
        Ok(observe(&self.state.positions))
    }

    pub fn obs(&self) -> Vec<f64> {
        observe(&self.state.positions)
    }

    pub fn done(&self) -> bool {
        self.done
    }

    /// Advances one step. Reward is the decrease in goal distance, plus the
    /// terminal bonus on success or minus the penalty on timeout.
    pub fn step(&mut self, action: PushAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        if action.ball >= N_BALLS || action.heading >= HEADINGS {
            return Err(Error::Env(format!(
                "action out of range: ball {} heading {}",
                action.ball, action.heading
            )));
        }
        let pre_satisfied = is_satisfied(&self.state.positions, &self.instruction, &self.cfg);
        let d_prev = goal_distance(&self.state.positions, &self.instruction, &self.cfg);
        self.state.positions = apply_push(&self.state.positions, action, &self.cfg);
        self.state.t += 1;
        let d_curr = goal_distance(&self.state.positions, &self.instruction, &self.cfg);
        let mut reward = d_prev - d_curr;
        let success = d_curr < self.cfg.success_radius || pre_satisfied;
        let timeout = self.state.t >= self.cfg.max_steps;
        let done = success || timeout;
        if success {
            reward += SUCCESS_BONUS;
        } else if timeout {
            reward -= TIMEOUT_PENALTY;
        }
        self.done = done;
        Ok(StepResult {
            obs: observe(&self.state.positions),
            reward,
            done,
            info: StepInfo { success, goal_distance: d_curr, pre_satisfied },
        })
    }
}

/// Rejection-samples non-overlapping spawn positions inside the spawn square.
fn sample_state(cfg: &EnvConfig, seed: u64) -> Result<EnvState> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut positions: Positions = [[0.0; 2]; N_BALLS];
    let min_gap = 2.0 * cfg.ball_radius;
    let mut failures = 0u32;
    let mut placed = 0usize;
    while placed < N_BALLS {
        let x = rng.gen_range(-cfg.spawn_half_width..=cfg.spawn_half_width);
        let y = rng.gen_range(-cfg.spawn_half_width..=cfg.spawn_half_width);
        let ok = (0..placed).all(|j| dist([x, y], positions[j]) >= min_gap);
        if ok {
            positions[placed] = [x, y];
            placed += 1;
        } else {
            failures += 1;
            if failures >= cfg.place_retries {
                return Err(Error::Env(format!(
                    "could not place {N_BALLS} non-overlapping balls after {failures} failed \
                     attempts; arena too crowded for radius {}",
                    cfg.ball_radius
                )));
            }
        }
    }
    Ok(EnvState { positions, t: 0, seed })
}

/// Instruction-free environment over the same dynamics, used by the
/// hierarchical arrangement task. No reward and no termination of its own;
/// the caller owns both.
#[derive(Debug, Clone)]
pub struct ArrangementEnv {
    pub cfg: EnvConfig,
    pub state: EnvState,
}

impl ArrangementEnv {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<ArrangementEnv> {
        let state = sample_state(&cfg, seed)?;
        Ok(ArrangementEnv { cfg, state })
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.state = sample_state(&self.cfg, seed)?;
        Ok(observe(&self.state.positions))
    }

    pub fn obs(&self) -> Vec<f64> {
        observe(&self.state.positions)
    }

    pub fn positions(&self) -> &Positions {
        &self.state.positions
    }

    pub fn step(&mut self, action: PushAction) -> Result<Vec<f64>> {
        if action.ball >= N_BALLS || action.heading >= HEADINGS {
            return Err(Error::Env(format!(
                "action out of range: ball {} heading {}",
                action.ball, action.heading
            )));
        }
        self.state.positions = apply_push(&self.state.positions, action, &self.cfg);
        self.state.t += 1;
        Ok(self.obs())
    }
}

/// One arrangement constraint: `mover` should sit on the `direction` side of
/// `destination` by at least the configured margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub mover: usize,
    pub direction: Direction,
    pub destination: usize,
}

impl Constraint {
    pub fn satisfied(&self, positions: &Positions, margin: f64) -> bool {
        let u = self.direction.unit();
        let m = positions[self.mover];
        let d = positions[self.destination];
        (m[0] - d[0]) * u[0] + (m[1] - d[1]) * u[1] >= margin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementSpec {
    pub constraints: Vec<Constraint>,
}

impl ArrangementSpec {
    /// The fixed ten-constraint arrangement task. The list is kept verbatim,
    /// including the repeated purple/cyan entry, so counts run over ten items.
    pub fn standard() -> ArrangementSpec {
        let c = |m: &str, dir: Direction, d: &str| Constraint {
            mover: color_index(m).unwrap(),
            direction: dir,
            destination: color_index(d).unwrap(),
        };
        ArrangementSpec {
            constraints: vec![
                c("red", Direction::Right, "purple"),
                c("green", Direction::Right, "red"),
                c("green", Direction::Right, "cyan"),
                c("purple", Direction::Left, "cyan"),
                c("cyan", Direction::Right, "purple"),
                c("red", Direction::Front, "blue"),
                c("red", Direction::Left, "green"),
                c("green", Direction::Front, "blue"),
                c("purple", Direction::Left, "cyan"),
                c("blue", Direction::Behind, "red"),
            ],
        }
    }

    pub fn count_satisfied(&self, positions: &Positions, cfg: &EnvConfig) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.satisfied(positions, cfg.arrangement_margin))
            .count()
    }
}

/// A hand-built state satisfying all ten standard constraints at once; proof
/// that the arrangement task is feasible.
pub fn feasible_arrangement_example() -> Positions {
    // Order: red, blue, green, cyan, purple.
    [
        [0.0, 0.0],
        [0.6, -0.5],
        [0.3, 0.0],
        [-0.3, 0.0],
        [-0.6, 0.0],
    ]
}

/// Greedy scripted controller: pushes only the mover ball, choosing the
/// heading whose simulated outcome (including collision resolution) lands
/// closest to the goal point. Ties break toward the lowest heading index.
pub fn scripted_mover_action(
    positions: &Positions,
    instr: &Instruction,
    cfg: &EnvConfig,
) -> PushAction {
    let mut best = PushAction { ball: instr.mover, heading: 0 };
    let mut best_d = f64::INFINITY;
    for heading in 0..HEADINGS {
        let action = PushAction { ball: instr.mover, heading };
        let next = apply_push(positions, action, cfg);
        let d = goal_distance(&next, instr, cfg);
        if d < best_d - 1e-12 {
            best_d = d;
            best = action;
        }
    }
    best
}
