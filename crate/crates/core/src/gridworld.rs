//! Trap gridworlds: task layouts, deterministic transitions, and the
//! curriculum-driven task sampler.
//!
//! # Layout text format
//!
//! A task layout serializes to exactly five lines:
//!
//! ```text
//! <width> <height>
//! <start_x> <start_y>
//! <goal_x> <goal_y>
//! <x>,<y> <x>,<y> ...        (or a single "-" when there are no traps)
//! <seed>
//! ```
//!
//! Reward constants and the step limit are not part of the layout; they are
//! supplied as [`TaskSettings`] when parsing.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumLevelSpec;
use crate::error::{Error, Result};
use crate::seeding;

pub const N_ACTIONS: usize = 4;
pub const MAX_LAYOUT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Primitive actions. The index order is the output order of option heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub step_penalty: f64,
    pub trap_penalty: f64,
    pub goal_reward: f64,
    pub trap_terminates: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            step_penalty: -0.1,
            trap_penalty: -1.0,
            goal_reward: 10.0,
            trap_terminates: false,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.step_penalty, self.trap_penalty, self.goal_reward]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("reward constants must be finite".into()));
        }
        if self.step_penalty > 0.0 || self.trap_penalty > 0.0 {
            return Err(Error::Config(
                "step_penalty and trap_penalty must be <= 0".into(),
            ));
        }
        if self.goal_reward <= 0.0 {
            return Err(Error::Config("goal_reward must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-task constants that are not randomized by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSettings {
    pub reward: RewardSpec,
    pub max_steps: usize,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            reward: RewardSpec::default(),
            max_steps: 100,
        }
    }
}

/// One sampled environment instance. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTask {
    width: usize,
    height: usize,
    start: Coord,
    goal: Coord,
    traps: BTreeSet<Coord>,
    max_steps: usize,
    reward: RewardSpec,
    seed: u64,
}

impl GridTask {
    /// Builds a task, checking every layout invariant including solvability.
    pub fn new(
        width: usize,
        height: usize,
        start: Coord,
        goal: Coord,
        traps: impl IntoIterator<Item = Coord>,
        settings: TaskSettings,
        seed: u64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TaskConstruction("grid must be non-empty".into()));
        }
        if settings.max_steps == 0 {
            return Err(Error::TaskConstruction("max_steps must be >= 1".into()));
        }
        settings.reward.validate()?;
        let inside = |c: Coord| c.x < width && c.y < height;
        if !inside(start) || !inside(goal) {
            return Err(Error::TaskConstruction(format!(
                "start {start} or goal {goal} outside {width}x{height} grid"
            )));
        }
        if start == goal {
            return Err(Error::TaskConstruction("start equals goal".into()));
        }
        let mut set = BTreeSet::new();
        for t in traps {
            if !inside(t) {
                return Err(Error::TaskConstruction(format!("trap {t} outside grid")));
            }
            if t == start || t == goal {
                return Err(Error::TaskConstruction(format!(
                    "trap {t} overlaps start or goal"
                )));
            }
            if !set.insert(t) {
                return Err(Error::TaskConstruction(format!("duplicate trap {t}")));
            }
        }
        let task = Self {
            width,
            height,
            start,
            goal,
            traps: set,
            max_steps: settings.max_steps,
            reward: settings.reward,
            seed,
        };
        if task.shortest_path_len().is_none() {
            return Err(Error::TaskConstruction(
                "no trap-free path from start to goal".into(),
            ));
        }
        Ok(task)
    }

    /// Deterministically builds the layout identified by `seed`: start in the
    /// top-left corner, goal in the bottom-right, traps placed uniformly at
    /// random among the remaining cells until the layout is solvable.
    pub fn from_seed(
        width: usize,
        height: usize,
        n_traps: usize,
        settings: TaskSettings,
        seed: u64,
    ) -> Result<Self> {
        if width * height < 2 {
            return Err(Error::TaskConstruction(format!(
                "{width}x{height} grid cannot hold distinct start and goal"
            )));
        }
        let start = Coord::new(0, 0);
        let goal = Coord::new(width - 1, height - 1);
        let free: Vec<Coord> = (0..height)
            .flat_map(|y| (0..width).map(move |x| Coord::new(x, y)))
            .filter(|&c| c != start && c != goal)
            .collect();
        if n_traps > free.len() {
            return Err(Error::TaskConstruction(format!(
                "{n_traps} traps requested but only {} free cells in {width}x{height} grid",
                free.len()
            )));
        }
        let mut rng = seeding::stream(seed, &[seeding::TAG_LAYOUT]);
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            let picks = rand::seq::index::sample(&mut rng, free.len(), n_traps);
            let traps = picks.iter().map(|i| free[i]);
            match Self::new(width, height, start, goal, traps, settings, seed) {
                Ok(task) => return Ok(task),
                Err(Error::TaskConstruction(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::TaskConstruction(format!(
            "no solvable layout for {width}x{height} with {n_traps} traps after {MAX_LAYOUT_ATTEMPTS} attempts"
        )))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn start(&self) -> Coord {
        self.start
    }

    pub fn goal(&self) -> Coord {
        self.goal
    }

    pub fn traps(&self) -> &BTreeSet<Coord> {
        &self.traps
    }

    pub fn is_trap(&self, c: Coord) -> bool {
        self.traps.contains(&c)
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn settings(&self) -> TaskSettings {
        TaskSettings {
            reward: self.reward,
            max_steps: self.max_steps,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index_of(&self, c: Coord) -> usize {
        c.y * self.width + c.x
    }

    pub fn coord_of(&self, index: usize) -> Coord {
        Coord::new(index % self.width, index / self.width)
    }

    /// Position after `action` from `from`, clipped at the boundary.
    pub fn move_from(&self, from: Coord, action: Action) -> Coord {
        let Coord { x, y } = from;
        match action {
            Action::Up if y > 0 => Coord::new(x, y - 1),
            Action::Down if y + 1 < self.height => Coord::new(x, y + 1),
            Action::Left if x > 0 => Coord::new(x - 1, y),
            Action::Right if x + 1 < self.width => Coord::new(x + 1, y),
            _ => from,
        }
    }

    /// Trap-avoiding BFS distance from start to goal.
    pub fn shortest_path_len(&self) -> Option<usize> {
        self.shortest_path().map(|p| p.len())
    }

    /// Actions of one shortest trap-avoiding path from start to goal.
    pub fn shortest_path(&self) -> Option<Vec<Action>> {
        let n = self.n_states();
        let mut prev: Vec<Option<(usize, Action)>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        let s = self.index_of(self.start);
        seen[s] = true;
        queue.push_back(self.start);
        while let Some(c) = queue.pop_front() {
            if c == self.goal {
                let mut actions = Vec::new();
                let mut at = self.index_of(c);
                while let Some((p, a)) = prev[at] {
                    actions.push(a);
                    at = p;
                }
                actions.reverse();
                return Some(actions);
            }
            for a in Action::ALL {
                let next = self.move_from(c, a);
                let ni = self.index_of(next);
                if seen[ni] || self.is_trap(next) {
                    continue;
                }
                seen[ni] = true;
                prev[ni] = Some((self.index_of(c), a));
                queue.push_back(next);
            }
        }
        None
    }

    /// Shortest-path length times trap density. Logged, never used for sampling.
    pub fn complexity(&self) -> f64 {
        let path = self.shortest_path_len().unwrap_or(0) as f64;
        path * self.traps.len() as f64 / self.n_states() as f64
    }

    pub fn to_layout_text(&self) -> String {
        let traps = if self.traps.is_empty() {
            "-".to_string()
        } else {
            self.traps
                .iter()
                .map(|t| format!("{},{}", t.x, t.y))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "{} {}\n{} {}\n{} {}\n{}\n{}\n",
            self.width,
            self.height,
            self.start.x,
            self.start.y,
            self.goal.x,
            self.goal.y,
            traps,
            self.seed
        )
    }

    pub fn from_layout_text(text: &str, settings: TaskSettings) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != 5 {
            return Err(Error::parse(
                "layout",
                format!("expected 5 lines, found {}", lines.len()),
            ));
        }
        let pair = |lineno: usize| -> Result<(usize, usize)> {
            let parts: Vec<&str> = lines[lineno].split_whitespace().collect();
            let bad = || Error::parse(format!("layout line {}", lineno + 1), "expected two integers");
            if parts.len() != 2 {
                return Err(bad());
            }
            Ok((
                parts[0].parse().map_err(|_| bad())?,
                parts[1].parse().map_err(|_| bad())?,
            ))
        };
        let (width, height) = pair(0)?;
        let (sx, sy) = pair(1)?;
        let (gx, gy) = pair(2)?;
        let mut traps = Vec::new();
        if lines[3].trim() != "-" {
            for tok in lines[3].split_whitespace() {
                let bad = || Error::parse("layout line 4", format!("bad trap '{tok}'"));
                let (x, y) = tok.split_once(',').ok_or_else(bad)?;
                traps.push(Coord::new(
                    x.parse().map_err(|_| bad())?,
                    y.parse().map_err(|_| bad())?,
                ));
            }
        }
        let seed = lines[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse("layout line 5", "bad seed"))?;
        Self::new(
            width,
            height,
            Coord::new(sx, sy),
            Coord::new(gx, gy),
            traps,
            settings,
            seed,
        )
    }
}

/// Agent-facing state of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub position: Coord,
    pub steps_taken: usize,
    pub terminated: bool,
    pub succeeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub entered_trap: bool,
}

/// Samples a task from a curriculum level using default reward constants.
pub fn generate_task(level: &CurriculumLevelSpec, rng: &mut impl RngCore) -> Result<GridTask> {
    generate_task_with(level, TaskSettings::default(), rng)
}

pub fn generate_task_with(
    level: &CurriculumLevelSpec,
    settings: TaskSettings,
    rng: &mut impl RngCore,
) -> Result<GridTask> {
    let seed: u64 = rng.random();
    GridTask::from_seed(level.width, level.height, level.n_traps, settings, seed)
}

pub fn reset(task: &GridTask) -> EnvState {
    EnvState {
        position: task.start,
        steps_taken: 0,
        terminated: false,
        succeeded: false,
    }
}

/// Advances the environment by one primitive action.
///
/// Panics if `state` is already terminated.
pub fn step(task: &GridTask, state: &EnvState, action: Action) -> StepOutcome {
    assert!(!state.terminated, "step called on a terminated state");
    let position = task.move_from(state.position, action);
    let steps_taken = state.steps_taken + 1;
    let spec = &task.reward;
    let mut reward = spec.step_penalty;
    let entered_trap = task.is_trap(position);
    if entered_trap {
        reward += spec.trap_penalty;
    }
    let succeeded = position == task.goal;
    if succeeded {
        reward += spec.goal_reward;
    }
    let done = succeeded || steps_taken >= task.max_steps || (spec.trap_terminates && entered_trap);
    StepOutcome {
        state: EnvState {
            position,
            steps_taken,
            terminated: done,
            succeeded,
        },
        reward,
        done,
        entered_trap,
    }
}

pub fn state_index(task: &GridTask, state: &EnvState) -> usize {
    task.index_of(state.position)
}

/// One-hot encoding with the active entry at `y * width + x`.
pub fn encode_state(task: &GridTask, state: &EnvState) -> Vec<f64> {
    one_hot(task.n_states(), state_index(task, state))
}

pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum;

    fn open_task(w: usize, h: usize) -> GridTask {
        GridTask::new(
            w,
            h,
            Coord::new(0, 0),
            Coord::new(w - 1, h - 1),
            [],
            TaskSettings::default(),
            0,
        )
        .unwrap()
    }

    fn level(w: usize, n_traps: usize) -> CurriculumLevelSpec {
        CurriculumLevelSpec::new(1, w, w, n_traps)
    }

    #[test]
    fn zero_trap_task() {
        let mut rng = seeding::rng_from_seed(7);
        let task = generate_task(&level(4, 0), &mut rng).unwrap();
        assert_eq!(task.start(), Coord::new(0, 0));
        assert_eq!(task.goal(), Coord::new(3, 3));
        assert!(task.traps().is_empty());
    }

    #[test]
    fn six_by_six_three_traps() {
        let mut rng = seeding::rng_from_seed(11);
        for _ in 0..50 {
            let task = generate_task(&curriculum::level_spec(3).unwrap(), &mut rng).unwrap();
            assert_eq!(task.traps().len(), 3);
            assert!(task.shortest_path_len().is_some());
        }
    }

    #[test]
    fn over_constrained_level_fails() {
        let mut rng = seeding::rng_from_seed(1);
        let err = generate_task(&level(2, 3), &mut rng).unwrap_err();
        assert!(matches!(err, Error::TaskConstruction(_)));
    }

    #[test]
    fn unsolvable_dense_level_fails() {
        // every free cell trapped: start is walled in
        let mut rng = seeding::rng_from_seed(1);
        let err = generate_task(&level(3, 7), &mut rng).unwrap_err();
        assert!(matches!(err, Error::TaskConstruction(_)));
    }

    #[test]
    fn invalid_layouts_rejected() {
        let s = TaskSettings::default();
        let c = Coord::new;
        assert!(GridTask::new(3, 3, c(0, 0), c(0, 0), [], s, 0).is_err());
        assert!(GridTask::new(3, 3, c(0, 0), c(2, 2), [c(0, 0)], s, 0).is_err());
        assert!(GridTask::new(3, 3, c(0, 0), c(2, 2), [c(1, 1), c(1, 1)], s, 0).is_err());
        assert!(GridTask::new(3, 3, c(0, 0), c(2, 2), [c(1, 0), c(0, 1)], s, 0).is_err());
        assert!(GridTask::new(3, 3, c(0, 0), c(3, 2), [], s, 0).is_err());
    }

    #[test]
    fn reset_semantics() {
        let task = open_task(6, 6);
        let a = reset(&task);
        assert_eq!(a.position, Coord::new(0, 0));
        assert_eq!(a.steps_taken, 0);
        assert!(!a.terminated);
        assert_eq!(a, reset(&task));
        let mut s = a;
        while !s.terminated {
            s = step(&task, &s, Action::Up).state;
        }
        assert_eq!(reset(&task), a);
    }

    #[test]
    fn boundary_clip() {
        let task = open_task(4, 4);
        let out = step(&task, &reset(&task), Action::Left);
        assert_eq!(out.state.position, Coord::new(0, 0));
        assert_eq!(out.reward, -0.1);
        assert!(!out.done);
    }

    #[test]
    fn goal_entry_reward() {
        let task = open_task(4, 4);
        let s = EnvState {
            position: Coord::new(2, 3),
            steps_taken: 0,
            terminated: false,
            succeeded: false,
        };
        let out = step(&task, &s, Action::Right);
        assert!((out.reward - 9.9).abs() < 1e-12);
        assert!(out.done && out.state.succeeded);
    }

    #[test]
    fn timeout() {
        let task = open_task(4, 4);
        let s = EnvState {
            position: Coord::new(1, 1),
            steps_taken: task.max_steps() - 1,
            terminated: false,
            succeeded: false,
        };
        let out = step(&task, &s, Action::Up);
        assert!(out.done);
        assert!(!out.state.succeeded);
    }

    #[test]
    fn trap_penalty_and_optional_termination() {
        let c = Coord::new;
        let mut settings = TaskSettings::default();
        let task = GridTask::new(3, 3, c(0, 0), c(2, 2), [c(1, 0)], settings, 0).unwrap();
        let out = step(&task, &reset(&task), Action::Right);
        assert!((out.reward - (-1.1)).abs() < 1e-12);
        assert!(out.entered_trap && !out.done);
        settings.reward.trap_terminates = true;
        let task = GridTask::new(3, 3, c(0, 0), c(2, 2), [c(1, 0)], settings, 0).unwrap();
        let out = step(&task, &reset(&task), Action::Right);
        assert!(out.done && !out.state.succeeded);
    }

    #[test]
    #[should_panic(expected = "terminated")]
    fn stepping_terminated_state_panics() {
        let task = open_task(3, 3);
        let mut s = reset(&task);
        s.terminated = true;
        step(&task, &s, Action::Up);
    }

    #[test]
    fn encoding() {
        let task = open_task(6, 6);
        let mut s = reset(&task);
        let v = encode_state(&task, &s);
        assert_eq!(v.len(), 36);
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        s.position = Coord::new(5, 5);
        assert_eq!(encode_state(&task, &s)[35], 1.0);
    }

    #[test]
    fn layout_text_round_trip() {
        let mut rng = seeding::rng_from_seed(3);
        let task = generate_task(&curriculum::level_spec(3).unwrap(), &mut rng).unwrap();
        let text = task.to_layout_text();
        let back = GridTask::from_layout_text(&text, task.settings()).unwrap();
        assert_eq!(back, task);
        let empty = open_task(3, 3);
        assert_eq!(empty.to_layout_text(), "3 3\n0 0\n2 2\n-\n0\n");
        assert!(GridTask::from_layout_text("3 3\n0 0\n", TaskSettings::default()).is_err());
    }

    #[test]
    fn same_seed_same_layout() {
        let s = TaskSettings::default();
        let a = GridTask::from_seed(6, 6, 3, s, 99).unwrap();
        let b = GridTask::from_seed(6, 6, 3, s, 99).unwrap();
        assert_eq!(a, b);
    }
}
