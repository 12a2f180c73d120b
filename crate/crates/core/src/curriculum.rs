//! Curriculum levels and the performance gate that advances through them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of levels in the default ladder.
pub const DEFAULT_LADDER_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumLevelSpec {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub n_traps: usize,
    /// Open-grid shortest path length times trap density.
    pub complexity_score: f64,
}

impl CurriculumLevelSpec {
    pub fn new(level: usize, width: usize, height: usize, n_traps: usize) -> Self {
        let path = (width + height).saturating_sub(2) as f64;
        let density = n_traps as f64 / (width * height).max(1) as f64;
        Self {
            level,
            width,
            height,
            n_traps,
            complexity_score: path * density,
        }
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn free_cells(&self) -> usize {
        (self.width * self.height).saturating_sub(2)
    }
}

/// Trailing-window success gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    pub window: usize,
    pub success_threshold: f64,
}

impl Default for Gate {
    fn default() -> Self {
        Self {
            window: 25,
            success_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub levels: Vec<CurriculumLevelSpec>,
    pub gate: Gate,
}

/// Level `level` of the default ladder: a `(3+level)` square grid with
/// `level` traps, so level 3 is the 6x6 three-trap fixed scenario.
pub fn level_spec(level: usize) -> Result<CurriculumLevelSpec> {
    if level == 0 || level > DEFAULT_LADDER_LEN {
        return Err(Error::OutOfRange(format!(
            "curriculum level {level} outside 1..={DEFAULT_LADDER_LEN}"
        )));
    }
    Ok(CurriculumLevelSpec::new(level, 3 + level, 3 + level, level))
}

/// Slack on the threshold comparison so a mean that equals the threshold
/// up to summation rounding still passes.
const GATE_TOLERANCE: f64 = 1e-12;

/// True iff the last `window` values exist and their mean reaches the threshold.
pub fn should_advance(recent_success: &[f64], gate: &Gate) -> bool {
    if gate.window == 0 || recent_success.len() < gate.window {
        return false;
    }
    let tail = &recent_success[recent_success.len() - gate.window..];
    let mean = tail.iter().sum::<f64>() / gate.window as f64;
    mean >= gate.success_threshold - GATE_TOLERANCE
}

impl CurriculumSchedule {
    pub fn new(levels: Vec<CurriculumLevelSpec>, gate: Gate) -> Result<Self> {
        let s = Self { levels, gate };
        s.validate()?;
        Ok(s)
    }

    /// The full default ladder with the default gate.
    pub fn ladder() -> Self {
        let levels = (1..=DEFAULT_LADDER_LEN)
            .map(|l| level_spec(l).expect("ladder level in range"))
            .collect();
        Self {
            levels,
            gate: Gate::default(),
        }
    }

    /// A single pinned level.
    pub fn single(level: CurriculumLevelSpec) -> Self {
        Self {
            levels: vec![level],
            gate: Gate::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("curriculum needs at least one level".into()));
        }
        if self.gate.window == 0 {
            return Err(Error::Config("gate window must be >= 1".into()));
        }
        let t = self.gate.success_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!(
                "gate threshold {t} outside (0, 1]"
            )));
        }
        for l in &self.levels {
            if l.width == 0 || l.height == 0 || l.width * l.height < 2 {
                return Err(Error::Config(format!("level {} grid too small", l.level)));
            }
            if l.n_traps >= l.free_cells() {
                return Err(Error::Config(format!(
                    "level {}: {} traps leave no free cell",
                    l.level, l.n_traps
                )));
            }
        }
        for pair in self.levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.width < a.width || b.height < a.height || b.n_traps < a.n_traps {
                return Err(Error::Config(format!(
                    "level {} is easier than level {}",
                    b.level, a.level
                )));
            }
        }
        Ok(())
    }

    /// Spec at zero-based position `pos`.
    pub fn at(&self, pos: usize) -> &CurriculumLevelSpec {
        &self.levels[pos.min(self.levels.len() - 1)]
    }

    pub fn is_last(&self, pos: usize) -> bool {
        pos + 1 >= self.levels.len()
    }
}

/// Curriculum position during a run. The last level is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub position: usize,
    pub history: Vec<f64>,
}

impl CurriculumState {
    pub fn new() -> Self {
        Self {
            position: 0,
            history: Vec::new(),
        }
    }

    /// Records one success rate; returns true when the level advanced.
    pub fn record(&mut self, schedule: &CurriculumSchedule, success: f64, enabled: bool) -> bool {
        self.history.push(success);
        if !enabled || schedule.is_last(self.position) {
            return false;
        }
        if should_advance(&self.history, &schedule.gate) {
            self.position += 1;
            self.history.clear();
            return true;
        }
        false
    }
}

impl Default for CurriculumState {
    fn default() -> Self {
        Self::new()
    }
}
