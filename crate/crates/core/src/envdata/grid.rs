//! Deterministic gridworld dynamics and the value-iteration oracle.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Empty,
    Wall,
    Lava,
    Goal,
}

impl CellKind {
    fn symbol(self) -> char {
        match self {
            CellKind::Empty => '.',
            CellKind::Wall => '#',
            CellKind::Lava => 'L',
            CellKind::Goal => 'G',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::domain(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

/// Result of one environment transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// A rectangular gridworld with sparse 0/1 reward at goal cells.
///
/// States are cell ids `y * width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    name: String,
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    start: (usize, usize),
    gamma: f64,
}

impl GridSpec {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        start: (usize, usize),
        gamma: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain("grid must have at least one cell"));
        }
        if cells.len() != width * height {
            return Err(Error::shape(format!(
                "{} cell kinds for a {}x{} grid",
                cells.len(),
                width,
                height
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::domain(format!("discount {gamma} outside [0, 1)")));
        }
        if start.0 >= width || start.1 >= height {
            return Err(Error::domain(format!("start {start:?} outside the grid")));
        }
        let spec = GridSpec {
            name: name.into(),
            width,
            height,
            cells,
            start,
            gamma,
        };
        if spec.kind(spec.start_state()) != CellKind::Empty {
            return Err(Error::domain("start cell must be empty"));
        }
        if spec.goal_distance().is_none() {
            return Err(Error::domain(format!("no goal reachable from start in '{}'", spec.name)));
        }
        Ok(spec)
    }

    /// Parses rows of `.`, `#`, `L`, `G`; `S` marks the (empty) start cell.
    pub fn from_ascii(name: &str, rows: &[&str], gamma: f64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::shape(format!("row {y} has a different width")));
            }
            for (x, ch) in row.chars().enumerate() {
                cells.push(match ch {
                    '.' => CellKind::Empty,
                    '#' => CellKind::Wall,
                    'L' => CellKind::Lava,
                    'G' => CellKind::Goal,
                    'S' => {
                        start = Some((x, y));
                        CellKind::Empty
                    }
                    other => return Err(Error::domain(format!("unknown cell symbol '{other}'"))),
                });
            }
        }
        let start = start.ok_or_else(|| Error::domain("layout has no start cell 'S'"))?;
        GridSpec::new(name, width, height, cells, start, gamma)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn state_of(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, state: usize) -> (usize, usize) {
        (state % self.width, state / self.width)
    }

    pub fn start_state(&self) -> usize {
        self.state_of(self.start.0, self.start.1)
    }

    pub fn kind(&self, state: usize) -> CellKind {
        self.cells[state]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        matches!(self.cells[state], CellKind::Goal | CellKind::Lava)
    }

    /// Cells an agent can occupy.
    pub fn is_valid_state(&self, state: usize) -> bool {
        state < self.cells.len() && self.cells[state] != CellKind::Wall
    }

    /// Moves into walls or off the grid leave the agent in place. Entering a
    /// goal pays 1 and terminates; entering lava pays 0 and terminates.
    /// Goal and lava cells are absorbing.
    pub fn step(&self, state: usize, action: usize) -> Result<StepOutcome> {
        if !self.is_valid_state(state) {
            return Err(Error::domain(format!("state {state} is not an occupiable cell")));
        }
        let action = Action::from_index(action)?;
        if self.is_terminal(state) {
            return Ok(StepOutcome {
                next_state: state,
                reward: 0.0,
                terminal: true,
            });
        }
        let (x, y) = self.coords(state);
        let (dx, dy) = action.delta();
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        let next_state = if nx < 0
            || ny < 0
            || nx >= self.width as isize
            || ny >= self.height as isize
            || self.kind(self.state_of(nx as usize, ny as usize)) == CellKind::Wall
        {
            state
        } else {
            self.state_of(nx as usize, ny as usize)
        };
        let (reward, terminal) = match self.kind(next_state) {
            CellKind::Goal => (1.0, true),
            CellKind::Lava => (0.0, true),
            _ => (0.0, false),
        };
        Ok(StepOutcome {
            next_state,
            reward,
            terminal,
        })
    }

    /// Breadth-first distance (in steps) from the start to the nearest goal,
    /// travelling only through non-terminal cells.
    pub fn goal_distance(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.num_states()];
        let mut queue = VecDeque::new();
        let s0 = self.start_state();
        dist[s0] = 0;
        queue.push_back(s0);
        while let Some(s) = queue.pop_front() {
            if self.kind(s) == CellKind::Goal {
                return Some(dist[s]);
            }
            if self.is_terminal(s) {
                continue;
            }
            for a in 0..NUM_ACTIONS {
                let next = self.step(s, a).expect("valid state").next_state;
                if dist[next] == usize::MAX {
                    dist[next] = dist[s] + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                if (x, y) == self.start {
                    write!(f, "S")?;
                } else {
                    write!(f, "{}", self.kind(self.state_of(x, y)).symbol())?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Named layouts.
#[derive(Clone, Debug, PartialEq)]
pub enum GridPreset {
    /// 16x16, start at the centre, goal in the top-left corner, walls and
    /// lava scattered from a seeded pattern.
    Grid16Obstacles { seed: u64 },
    /// 16x16 open grid, start at the centre, goal in the top-left corner.
    Grid16Sparse,
    Custom(GridSpec),
}

const GRID16: usize = 16;
const GRID16_START: (usize, usize) = (8, 8);

pub fn build_grid(preset: &GridPreset, gamma: f64) -> Result<GridSpec> {
    match preset {
        GridPreset::Grid16Sparse => {
            let mut cells = vec![CellKind::Empty; GRID16 * GRID16];
            cells[0] = CellKind::Goal;
            GridSpec::new("grid16-sparse", GRID16, GRID16, cells, GRID16_START, gamma)
        }
        GridPreset::Grid16Obstacles { seed } => {
            // resample the pattern until the goal is reachable; deterministic in `seed`
            for attempt in 0..1000u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(attempt));
                let mut cells = vec![CellKind::Empty; GRID16 * GRID16];
                for c in cells.iter_mut() {
                    let u: f64 = rng.random();
                    *c = if u < 0.15 {
                        CellKind::Wall
                    } else if u < 0.20 {
                        CellKind::Lava
                    } else {
                        CellKind::Empty
                    };
                }
                cells[0] = CellKind::Goal;
                cells[GRID16_START.1 * GRID16 + GRID16_START.0] = CellKind::Empty;
                match GridSpec::new(
                    format!("grid16-obstacles-{seed}"),
                    GRID16,
                    GRID16,
                    cells,
                    GRID16_START,
                    gamma,
                ) {
                    Ok(spec) => return Ok(spec),
                    Err(Error::Domain(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::domain(format!("no reachable obstacle layout for seed {seed}")))
        }
        GridPreset::Custom(spec) => {
            GridSpec::new(spec.name.clone(), spec.width, spec.height, spec.cells.clone(), spec.start, gamma)
        }
    }
}

/// Tabular action values, one row of [`NUM_ACTIONS`] per state.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: Vec<[f64; NUM_ACTIONS]>,
}

impl QTable {
    pub fn new(values: Vec<[f64; NUM_ACTIONS]>) -> Self {
        QTable { values }
    }

    pub fn row(&self, state: usize) -> &[f64; NUM_ACTIONS] {
        &self.values[state]
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }
}

/// Bellman-optimality value iteration until the sup-norm residual drops below `tol`.
///
/// Terminal and wall cells hold zero values.
pub fn value_iteration(spec: &GridSpec, gamma: f64, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance {tol} must be positive")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::domain(format!("discount {gamma} outside [0, 1)")));
    }
    let n = spec.num_states();
    let mut outcomes = Vec::with_capacity(n);
    for s in 0..n {
        if !spec.is_valid_state(s) || spec.is_terminal(s) {
            outcomes.push(None);
            continue;
        }
        let mut row = [StepOutcome {
            next_state: s,
            reward: 0.0,
            terminal: false,
        }; NUM_ACTIONS];
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = spec.step(s, a)?;
        }
        outcomes.push(Some(row));
    }
    let mut q = vec![[0.0; NUM_ACTIONS]; n];
    loop {
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut residual = 0.0_f64;
        for (s, row) in outcomes.iter().enumerate() {
            let Some(row) = row else { continue };
            for (a, out) in row.iter().enumerate() {
                let backup = out.reward
                    + if out.terminal {
                        0.0
                    } else {
                        gamma * v[out.next_state]
                    };
                residual = residual.max((backup - q[s][a]).abs());
                q[s][a] = backup;
            }
        }
        if residual < tol * (1.0 - gamma).max(1e-3) {
            break;
        }
    }
    Ok(QTable::new(q))
}
