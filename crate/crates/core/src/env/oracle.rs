//! Breadth-first search over (position × keys held), with its own transition model.
//!
//! The model is written against the raw grid and the reward table only; it shares no
//! code with [`FetchTheKey::step`](super::FetchTheKey::step), so agreement between the
//! two is a meaningful check of the environment dynamics.

use std::collections::VecDeque;

use super::{Action, Cell, EnvConfig, EnvState, FetchTheKey, Pos, GOAL_REWARD, KEY_REWARD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub pos: Pos,
    pub keys: u8,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct OracleModel {
    height: usize,
    width: usize,
    num_keys: u8,
    wall: Vec<bool>,
    door_needs: Vec<Option<u8>>,
    /// `key_at[i]` is where key `i + 1` lies, if still on the floor.
    key_at: Vec<Option<Pos>>,
    goal: Pos,
}

impl OracleModel {
    pub fn new(config: &EnvConfig, state: &EnvState) -> Self {
        let mut wall = vec![false; state.grid.len()];
        let mut door_needs = vec![None; state.grid.len()];
        let mut key_at = vec![None; usize::from(config.num_keys)];
        let mut goal = None;
        for (i, &cell) in state.grid.iter().enumerate() {
            let p = Pos::new(i / state.width, i % state.width);
            match cell {
                Cell::Wall => wall[i] = true,
                Cell::Door(n) => door_needs[i] = Some(n),
                Cell::Key(k) => key_at[usize::from(k) - 1] = Some(p),
                Cell::Goal => goal = Some(p),
                Cell::Floor => {}
            }
        }
        Self {
            height: state.height,
            width: state.width,
            num_keys: config.num_keys,
            wall,
            door_needs,
            key_at,
            goal: goal.expect("every layout has a goal"),
        }
    }

    pub fn num_keys(&self) -> u8 {
        self.num_keys
    }

    pub fn transition(&self, pos: Pos, keys: u8, action: Action) -> Transition {
        let (dr, dc) = match action {
            Action::Up => (-1isize, 0isize),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        };
        let r = pos.row as isize + dr;
        let c = pos.col as isize + dc;
        let stay = Transition {
            pos,
            keys,
            reward: 0.0,
            terminal: false,
        };
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            return stay;
        }
        let target = Pos::new(r as usize, c as usize);
        let idx = target.row * self.width + target.col;
        if self.wall[idx] || self.door_needs[idx].is_some_and(|n| keys < n) {
            return stay;
        }
        if keys < self.num_keys && self.key_at[usize::from(keys)] == Some(target) {
            return Transition {
                pos: target,
                keys: keys + 1,
                reward: KEY_REWARD,
                terminal: false,
            };
        }
        if target == self.goal && keys == self.num_keys {
            return Transition {
                pos: target,
                keys,
                reward: GOAL_REWARD,
                terminal: true,
            };
        }
        Transition {
            pos: target,
            keys,
            reward: 0.0,
            terminal: false,
        }
    }

    fn index(&self, pos: Pos, keys: u8) -> usize {
        (pos.row * self.width + pos.col) * (usize::from(self.num_keys) + 1) + usize::from(keys)
    }

    /// BFS from `(pos, keys)` limited to `budget` moves.
    fn search(&self, pos: Pos, keys: u8, budget: u32) -> Search {
        let n = self.height * self.width * (usize::from(self.num_keys) + 1);
        let mut parent: Vec<Option<(usize, Action)>> = vec![None; n];
        let mut depth = vec![u32::MAX; n];
        let mut state_of = vec![(pos, keys); n];
        let start = self.index(pos, keys);
        depth[start] = 0;
        let mut queue = VecDeque::from([start]);
        let mut best = (keys, start);
        let mut goal = None;
        while let Some(i) = queue.pop_front() {
            let (p, k) = state_of[i];
            if depth[i] >= budget {
                continue;
            }
            for action in Action::ALL {
                let t = self.transition(p, k, action);
                if t.terminal {
                    if goal.is_none() {
                        goal = Some((i, action, depth[i] + 1));
                    }
                    continue;
                }
                let j = self.index(t.pos, t.keys);
                if depth[j] != u32::MAX {
                    continue;
                }
                depth[j] = depth[i] + 1;
                parent[j] = Some((i, action));
                state_of[j] = (t.pos, t.keys);
                if t.keys > best.0 {
                    best = (t.keys, j);
                }
                queue.push_back(j);
            }
        }
        Search {
            parent,
            best,
            goal,
        }
    }

    /// Largest undiscounted return obtainable from `(pos, keys)` within `budget` steps.
    pub fn optimal_return(&self, pos: Pos, keys: u8, budget: u32) -> f64 {
        let s = self.search(pos, keys, budget);
        let gained = f64::from(s.best.0 - keys) * KEY_REWARD;
        if s.goal.is_some() {
            f64::from(self.num_keys - keys) * KEY_REWARD + GOAL_REWARD
        } else {
            gained
        }
    }

    /// Shortest action sequence to the goal, or else to the most keys reachable.
    pub fn plan(&self, pos: Pos, keys: u8, budget: u32) -> Vec<Action> {
        let s = self.search(pos, keys, budget);
        let mut actions = Vec::new();
        let mut cursor = match s.goal {
            Some((i, a, _)) => {
                actions.push(a);
                i
            }
            None => s.best.1,
        };
        while let Some((prev, a)) = s.parent[cursor] {
            actions.push(a);
            cursor = prev;
        }
        actions.reverse();
        actions
    }
}

struct Search {
    parent: Vec<Option<(usize, Action)>>,
    best: (u8, usize),
    goal: Option<(usize, Action, u32)>,
}

/// Maximum return achievable from `state` within the remaining step budget.
pub fn optimal_return_oracle(config: &EnvConfig, state: &EnvState) -> f64 {
    let model = OracleModel::new(config, state);
    let budget = config.max_episode_steps.saturating_sub(state.steps);
    model.optimal_return(state.agent, state.keys_collected, budget)
}

/// Acts along a BFS-optimal path.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleActor;

impl OracleActor {
    pub fn act(&self, env: &FetchTheKey) -> Action {
        let state = env.state();
        let config = env.config();
        let model = OracleModel::new(config, state);
        let budget = config.max_episode_steps.saturating_sub(state.steps);
        model
            .plan(state.agent, state.keys_collected, budget)
            .first()
            .copied()
            .unwrap_or(Action::Up)
    }
}
