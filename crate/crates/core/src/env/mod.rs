//! FetchTheKey: a seeded multi-room grid world where keys must be collected in order
//! before the goal room opens.
//!
//! The rooms form a horizontal chain of `num_keys + 2` rooms of 5×5 cells: the start
//! room, one room per key, and the goal room. Neighbouring rooms share a one-cell wall
//! with a single door in its middle row. Door `j` (between room `j` and room `j + 1`)
//! opens once `j` keys have been collected, so the first door is always open and the
//! last one needs every key.
//!
//! ```text
//! key=1
//! ###################
//! #.....#.....#.....#
//! #.....#.....#.....#
//! #..A..0..1..1..G..#
//! #.....#.....#.....#
//! #.....#.....#.....#
//! ###################
//! ```

mod oracle;
mod replay;

pub use oracle::{optimal_return_oracle, OracleActor, OracleModel};
pub use replay::{read_replay, write_replay, ReplayRecord};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ROOM_SIZE: usize = 5;
pub const DOOR_SIZE: usize = 1;
pub const OBS_DIM: usize = 27;
pub const NUM_ACTIONS: usize = 4;
pub const VIEW_RADIUS: isize = 2;
pub const KEY_REWARD: f64 = 2.0;
pub const GOAL_REWARD: f64 = 10.0;
pub const DEFAULT_MAX_EPISODE_STEPS: u32 = 500;

/// Observation codes for the local window.
pub mod codes {
    pub const FLOOR: f64 = 0.0;
    pub const WALL: f64 = 0.25;
    pub const CLOSED_DOOR: f64 = 0.5;
    pub const KEY: f64 = 0.75;
    pub const GOAL: f64 = 1.0;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("num_keys must be in 1..=4, got {0}")]
    InvalidKeys(u8),
    #[error("max_episode_steps must be positive")]
    InvalidStepLimit,
    #[error("step called after the episode ended; call reset first")]
    EpisodeDone,
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Floor,
    Wall,
    /// Door that opens once this many keys are held.
    Door(u8),
    /// Key number `i` (1-based), lying in key room `i`.
    Key(u8),
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub num_keys: u8,
    pub max_episode_steps: u32,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_keys: 1,
            max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn with_keys(num_keys: u8) -> Self {
        Self {
            num_keys,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(1..=4).contains(&self.num_keys) {
            return Err(EnvError::InvalidKeys(self.num_keys));
        }
        if self.max_episode_steps == 0 {
            return Err(EnvError::InvalidStepLimit);
        }
        Ok(())
    }

    /// Largest return any episode can collect.
    pub fn max_return(&self) -> f64 {
        KEY_REWARD * f64::from(self.num_keys) + GOAL_REWARD
    }

    pub fn num_rooms(&self) -> usize {
        usize::from(self.num_keys) + 2
    }

    pub fn height(&self) -> usize {
        ROOM_SIZE + 2
    }

    pub fn width(&self) -> usize {
        self.num_rooms() * (ROOM_SIZE + 1) + 1
    }

    /// Top-left interior cell of room `r` (0 = start, `num_keys + 1` = goal).
    pub fn room_origin(&self, r: usize) -> Pos {
        Pos::new(1, r * (ROOM_SIZE + 1) + 1)
    }

    pub fn room_center(&self, r: usize) -> Pos {
        let o = self.room_origin(r);
        Pos::new(o.row + ROOM_SIZE / 2, o.col + ROOM_SIZE / 2)
    }

    pub fn start(&self) -> Pos {
        self.room_center(0)
    }

    pub fn goal(&self) -> Pos {
        self.room_center(self.num_rooms() - 1)
    }

    /// Door `j` sits in the wall between room `j` and room `j + 1`.
    pub fn door(&self, j: usize) -> Pos {
        Pos::new(1 + ROOM_SIZE / 2, (j + 1) * (ROOM_SIZE + 1))
    }

    /// Room index of an interior cell, `None` for walls and doors.
    pub fn room_of(&self, p: Pos) -> Option<usize> {
        if p.row == 0 || p.row > ROOM_SIZE || p.col % (ROOM_SIZE + 1) == 0 {
            return None;
        }
        let r = p.col / (ROOM_SIZE + 1);
        (r < self.num_rooms()).then_some(r)
    }
}

/// Complete world state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub height: usize,
    pub width: usize,
    pub grid: Vec<Cell>,
    pub agent: Pos,
    pub keys_collected: u8,
    pub steps: u32,
}

impl EnvState {
    pub fn cell(&self, p: Pos) -> Cell {
        self.grid[p.row * self.width + p.col]
    }

    fn set(&mut self, p: Pos, c: Cell) {
        self.grid[p.row * self.width + p.col] = c;
    }

    /// Cell at `p + (dr, dc)`, `None` outside the arena.
    pub fn offset(&self, p: Pos, dr: isize, dc: isize) -> Option<Pos> {
        let r = p.row.checked_add_signed(dr)?;
        let c = p.col.checked_add_signed(dc)?;
        (r < self.height && c < self.width).then_some(Pos::new(r, c))
    }

    pub fn key_position(&self, key: u8) -> Option<Pos> {
        self.grid
            .iter()
            .position(|&c| c == Cell::Key(key))
            .map(|i| Pos::new(i / self.width, i % self.width))
    }

    /// A cell the agent may stand on given its current key count.
    pub fn passable(&self, p: Pos) -> bool {
        match self.cell(p) {
            Cell::Wall => false,
            Cell::Door(needed) => self.keys_collected >= needed,
            _ => true,
        }
    }

    /// One character per cell: `#` wall, `.` floor, digit door (keys needed),
    /// `k` key, `G` goal, `A` agent.
    pub fn render_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let p = Pos::new(r, c);
                let ch = if p == self.agent {
                    'A'
                } else {
                    match self.cell(p) {
                        Cell::Floor => '.',
                        Cell::Wall => '#',
                        Cell::Door(n) => char::from(b'0' + n),
                        Cell::Key(_) => 'k',
                        Cell::Goal => 'G',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// 27-component observation: normalized position (2), key fraction (1), and the 24
/// cells of the 5×5 window around the agent, row-major, without the centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn keys_fraction(&self) -> f64 {
        self.0[2]
    }

    pub fn window(&self) -> &[f64] {
        &self.0[3..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Builds the layout for `config` with key `i` placed uniformly in room `i`.
pub fn build_state<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> EnvState {
    let (height, width) = (config.height(), config.width());
    let mut grid = vec![Cell::Wall; height * width];
    for room in 0..config.num_rooms() {
        let o = config.room_origin(room);
        for r in o.row..o.row + ROOM_SIZE {
            for c in o.col..o.col + ROOM_SIZE {
                grid[r * width + c] = Cell::Floor;
            }
        }
    }
    for j in 0..=usize::from(config.num_keys) {
        let d = config.door(j);
        grid[d.row * width + d.col] = Cell::Door(j as u8);
    }
    let goal = config.goal();
    grid[goal.row * width + goal.col] = Cell::Goal;
    for key in 1..=config.num_keys {
        let o = config.room_origin(usize::from(key));
        let idx = rng.gen_range(0..ROOM_SIZE * ROOM_SIZE);
        let p = Pos::new(o.row + idx / ROOM_SIZE, o.col + idx % ROOM_SIZE);
        grid[p.row * width + p.col] = Cell::Key(key);
    }
    EnvState {
        height,
        width,
        grid,
        agent: config.start(),
        keys_collected: 0,
        steps: 0,
    }
}

#[derive(Debug, Clone)]
pub struct FetchTheKey {
    config: EnvConfig,
    state: EnvState,
    done: bool,
}

impl FetchTheKey {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let state = build_state(&config, &mut ChaCha8Rng::seed_from_u64(config.seed));
        Ok(Self {
            config,
            state,
            done: false,
        })
    }

    /// Resumes from an explicit state, e.g. for exhaustive checks.
    pub fn from_state(config: EnvConfig, state: EnvState) -> Result<Self, EnvError> {
        config.validate()?;
        if state.height != config.height() || state.width != config.width() {
            return Err(EnvError::InvalidState("grid size does not match config".into()));
        }
        if state.grid.len() != state.height * state.width {
            return Err(EnvError::InvalidState("grid length".into()));
        }
        if !state.passable(state.agent) {
            return Err(EnvError::InvalidState(format!(
                "agent at {:?} stands on an impassable cell",
                state.agent
            )));
        }
        Ok(Self {
            config,
            state,
            done: false,
        })
    }

    /// Starts a new episode whose key placement is a pure function of `episode_seed`.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        self.state = build_state(&self.config, &mut ChaCha8Rng::seed_from_u64(episode_seed));
        self.done = false;
        self.observation()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let (dr, dc) = action.delta();
        let mut reward = 0.0;
        let mut terminal = false;
        if let Some(target) = self.state.offset(self.state.agent, dr, dc) {
            if self.state.passable(target) {
                self.state.agent = target;
                match self.state.cell(target) {
                    Cell::Key(_) => {
                        self.state.keys_collected += 1;
                        self.state.set(target, Cell::Floor);
                        reward = KEY_REWARD;
                    }
                    Cell::Goal if self.state.keys_collected == self.config.num_keys => {
                        reward = GOAL_REWARD;
                        terminal = true;
                    }
                    _ => {}
                }
            }
        }
        self.state.steps += 1;
        self.done = terminal || self.state.steps >= self.config.max_episode_steps;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    fn code(&self, p: Option<Pos>) -> f64 {
        let Some(p) = p else { return codes::WALL };
        match self.state.cell(p) {
            Cell::Floor => codes::FLOOR,
            Cell::Wall => codes::WALL,
            Cell::Door(n) if self.state.keys_collected >= n => codes::FLOOR,
            Cell::Door(_) => codes::CLOSED_DOOR,
            Cell::Key(_) => codes::KEY,
            Cell::Goal => codes::GOAL,
        }
    }

    pub fn observation(&self) -> Observation {
        let s = &self.state;
        let mut obs = [0.0; OBS_DIM];
        obs[0] = s.agent.row as f64 / (s.height - 1) as f64;
        obs[1] = s.agent.col as f64 / (s.width - 1) as f64;
        obs[2] = f64::from(s.keys_collected) / f64::from(self.config.num_keys);
        let mut i = 3;
        for dr in -VIEW_RADIUS..=VIEW_RADIUS {
            for dc in -VIEW_RADIUS..=VIEW_RADIUS {
                if dr == 0 && dc == 0 {
                    continue;
                }
                obs[i] = self.code(s.offset(s.agent, dr, dc));
                i += 1;
            }
        }
        Observation(obs)
    }
}
