//! Micro-scale Overcooked: two cooks, ingredient sources, pots, dishes and
//! a serving window on a small grid.
//!
//! Actions are `N, E, S, W, STAY, INTERACT`. A move turns the agent to face
//! the direction and, if the target is free floor, steps into it; facing a
//! counter or any other non-floor tile just rotates. Two agents moving into
//! the same cell, or swapping cells, both stay put. Interactions resolve in
//! agent order, after pots advance their cooking countdown.
//!
//! A recipe is `recipe_size` ingredients of one kind. With a nonzero
//! explosion penalty the step that mixes two kinds in a pot pays the
//! penalty to both agents and leaves the pot exploded and inert. Without
//! it a mixed pot can still be cooked and served, for no reward.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameBuilder, MarkovGame, Simulator};

pub const MAX_POTS: usize = 4;
pub const NUM_ACTIONS: usize = 6;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["N", "E", "S", "W", "STAY", "INTERACT"];
pub const STAY: usize = 4;
pub const INTERACT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tile {
    Floor,
    Counter,
    Onion,
    Tomato,
    Pot,
    Dish,
    Serve,
}

impl Tile {
    fn symbol(self) -> char {
        match self {
            Tile::Floor => '.',
            Tile::Counter => '#',
            Tile::Onion => 'O',
            Tile::Tomato => 'T',
            Tile::Pot => 'P',
            Tile::Dish => 'D',
            Tile::Serve => 'S',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    fn delta(self) -> (isize, isize) {
        match self {
            Dir::N => (-1, 0),
            Dir::E => (0, 1),
            Dir::S => (1, 0),
            Dir::W => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Held {
    Nothing,
    Onion,
    Tomato,
    Dish,
    Soup { onions: u8, tomatoes: u8 },
}

impl Held {
    fn code(self) -> u128 {
        match self {
            Held::Nothing => 0,
            Held::Onion => 1,
            Held::Tomato => 2,
            Held::Dish => 3,
            Held::Soup { onions, .. } => 4 + onions as u128,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pot {
    pub onions: u8,
    pub tomatoes: u8,
    /// Steps left until ready; zero when not cooking.
    pub cooking: u8,
    pub ready: bool,
    pub exploded: bool,
}

impl Pot {
    pub fn count(&self) -> u8 {
        self.onions + self.tomatoes
    }

    pub fn is_mixed(&self) -> bool {
        self.onions > 0 && self.tomatoes > 0
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn code(&self) -> u128 {
        self.onions as u128
            | (self.tomatoes as u128) << 2
            | (self.cooking as u128) << 4
            | (self.ready as u128) << 8
            | (self.exploded as u128) << 9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Agent {
    /// Row-major cell index.
    pub cell: usize,
    pub facing: Dir,
    pub held: Held,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OvercookedState {
    pub agents: [Agent; 2],
    /// Pots in row-major order of their cells; unused slots stay empty.
    pub pots: [Pot; MAX_POTS],
    pub time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<Tile>,
    pub starts: [usize; 2],
    pub cook_time: u8,
    pub recipe_reward: f64,
    pub recipe_size: u8,
    /// Zero disables the explosion rule.
    pub explosion_penalty: f64,
    pub horizon: usize,
    pub gamma: f64,
}

const MICRO_CPFP: &str = "\
####
O0D#
S.P#
#P##
S.P#
T1D#
####
---
cook_time=2
recipe_reward=20
recipe_size=2
explosion_penalty=0
horizon=24
gamma=0.95
";

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

impl Layout {
    /// Top cook (agent 0) reaches only onions, bottom cook (agent 1) only
    /// tomatoes. The middle pot is shared; each cook also has a private pot
    /// that takes one more turn to face.
    pub fn micro_cpfp() -> Layout {
        Layout::parse(MICRO_CPFP).expect("bundled layout is valid")
    }

    pub fn micro_cpfp_explosion() -> Layout {
        Layout {
            explosion_penalty: -100_000.0,
            ..Layout::micro_cpfp()
        }
    }

    pub fn bundled(name: &str) -> Option<Layout> {
        match name {
            "micro-cpfp" => Some(Layout::micro_cpfp()),
            "micro-cpfp-explosion" => Some(Layout::micro_cpfp_explosion()),
            _ => None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Layout> {
        Layout::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses an ASCII grid, a `---` line and `key=value` parameters.
    pub fn parse(text: &str) -> Result<Layout> {
        let lines: Vec<&str> = text.lines().collect();
        let sep = lines
            .iter()
            .position(|l| l.trim() == "---")
            .unwrap_or(lines.len());
        let grid: Vec<&str> = lines[..sep].iter().map(|l| l.trim_end()).collect();
        if grid.is_empty() || grid.iter().all(|l| l.is_empty()) {
            return Err(parse_err(1, 1, "empty grid"));
        }
        let width = grid[0].chars().count();
        let height = grid.len();
        if width * height > 256 {
            return Err(parse_err(1, 1, "grid larger than 256 cells"));
        }
        let mut tiles = Vec::with_capacity(width * height);
        let mut starts = [None, None];
        for (r, line) in grid.iter().enumerate() {
            let n = line.chars().count();
            if n != width {
                return Err(parse_err(
                    r + 1,
                    n.min(width) + 1,
                    format!("row has {n} cells, expected {width}"),
                ));
            }
            for (c, ch) in line.chars().enumerate() {
                let tile = match ch {
                    '#' => Tile::Counter,
                    '.' => Tile::Floor,
                    'O' => Tile::Onion,
                    'T' => Tile::Tomato,
                    'P' => Tile::Pot,
                    'D' => Tile::Dish,
                    'S' => Tile::Serve,
                    '0' | '1' => {
                        let i = (ch as u8 - b'0') as usize;
                        if starts[i].is_some() {
                            return Err(parse_err(r + 1, c + 1, format!("second start cell for agent {i}")));
                        }
                        starts[i] = Some(r * width + c);
                        Tile::Floor
                    }
                    other => {
                        return Err(parse_err(r + 1, c + 1, format!("unknown tile '{other}'")))
                    }
                };
                let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
                if border && tile == Tile::Floor {
                    return Err(parse_err(r + 1, c + 1, "floor on the border"));
                }
                tiles.push(tile);
            }
        }
        let mut layout = Layout {
            width,
            height,
            tiles,
            starts: [0, 0],
            cook_time: 3,
            recipe_reward: 20.0,
            recipe_size: 3,
            explosion_penalty: 0.0,
            horizon: 40,
            gamma: 0.95,
        };
        for (i, s) in starts.iter().enumerate() {
            layout.starts[i] = s.ok_or_else(|| parse_err(height, 1, format!("no start cell for agent {i}")))?;
        }
        let count = |t: Tile| layout.tiles.iter().filter(|&&x| x == t).count();
        for (t, what) in [(Tile::Pot, "pot"), (Tile::Dish, "dish source"), (Tile::Serve, "serving window")] {
            if count(t) == 0 {
                return Err(parse_err(height, 1, format!("layout has no {what}")));
            }
        }
        if count(Tile::Onion) + count(Tile::Tomato) == 0 {
            return Err(parse_err(height, 1, "layout has no ingredient source"));
        }
        if count(Tile::Pot) > MAX_POTS {
            return Err(parse_err(height, 1, format!("more than {MAX_POTS} pots")));
        }

        for (i, raw) in lines.iter().enumerate().skip(sep + 1) {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, 1, "expected key=value"))?;
            let column = raw.find('=').map_or(1, |p| p + 2);
            let value = value.trim();
            let bad = |what: &str| parse_err(line_no, column, format!("invalid {what} '{value}'"));
            match key.trim() {
                "cook_time" => {
                    layout.cook_time = value.parse().ok().filter(|&c: &u8| c <= 15).ok_or_else(|| bad("cook_time"))?
                }
                "recipe_reward" => {
                    layout.recipe_reward = value.parse().ok().filter(|r: &f64| r.is_finite()).ok_or_else(|| bad("recipe_reward"))?
                }
                "recipe_size" => {
                    layout.recipe_size = value
                        .parse()
                        .ok()
                        .filter(|s: &u8| (1..=3).contains(s))
                        .ok_or_else(|| bad("recipe_size"))?
                }
                "explosion_penalty" => {
                    layout.explosion_penalty = value.parse().ok().filter(|p: &f64| p.is_finite()).ok_or_else(|| bad("explosion_penalty"))?
                }
                "horizon" => {
                    layout.horizon = value.parse().ok().filter(|&h: &usize| h >= 1).ok_or_else(|| bad("horizon"))?
                }
                "gamma" => {
                    layout.gamma = value
                        .parse()
                        .ok()
                        .filter(|g: &f64| (0.0..=1.0).contains(g))
                        .ok_or_else(|| bad("gamma"))?
                }
                other => return Err(parse_err(line_no, 1, format!("unknown parameter '{other}'"))),
            }
        }
        Ok(layout)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = r * self.width + c;
                let ch = match self.starts.iter().position(|&s| s == cell) {
                    Some(i) => char::from(b'0' + i as u8),
                    None => self.tiles[cell].symbol(),
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out.push_str("---\n");
        out.push_str(&format!(
            "cook_time={}\nrecipe_reward={}\nrecipe_size={}\nexplosion_penalty={}\nhorizon={}\ngamma={}\n",
            self.cook_time, self.recipe_reward, self.recipe_size, self.explosion_penalty, self.horizon, self.gamma
        ));
        out
    }

    pub fn tile(&self, cell: usize) -> Tile {
        self.tiles[cell]
    }

    pub fn neighbor(&self, cell: usize, dir: Dir) -> Option<usize> {
        let (dr, dc) = dir.delta();
        let r = (cell / self.width) as isize + dr;
        let c = (cell % self.width) as isize + dc;
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            None
        } else {
            Some(r as usize * self.width + c as usize)
        }
    }

    /// Cells of all pots, row-major.
    pub fn pot_cells(&self) -> Vec<usize> {
        (0..self.tiles.len()).filter(|&c| self.tiles[c] == Tile::Pot).collect()
    }

    /// `(row, column)` of a cell.
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }
}

/// A pose an agent can be in: cell and facing.
pub type Pose = (usize, Dir);

/// The Overcooked simulator for one layout.
#[derive(Debug, Clone)]
pub struct Overcooked {
    layout: Layout,
    pot_cells: Vec<usize>,
    /// Floor cells reachable from each start, ignoring the other agent.
    regions: [Vec<usize>; 2],
    /// Indices of the pots each agent can reach.
    reach_pots: [Vec<usize>; 2],
    regions_overlap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Delivery,
    Explosion,
}

impl Overcooked {
    pub fn new(layout: Layout) -> Self {
        let pot_cells = layout.pot_cells();
        let regions = [0, 1].map(|i| {
            let mut seen = vec![false; layout.tiles.len()];
            let mut queue = VecDeque::from([layout.starts[i]]);
            seen[layout.starts[i]] = true;
            let mut out = Vec::new();
            while let Some(c) = queue.pop_front() {
                out.push(c);
                for d in Dir::ALL {
                    if let Some(n) = layout.neighbor(c, d) {
                        if !seen[n] && layout.tiles[n] == Tile::Floor {
                            seen[n] = true;
                            queue.push_back(n);
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        });
        let mut sim = Overcooked {
            layout,
            pot_cells,
            regions,
            reach_pots: [Vec::new(), Vec::new()],
            regions_overlap: false,
        };
        sim.reach_pots = [0, 1].map(|i| {
            sim.reachable_tiles(i, Tile::Pot)
                .into_iter()
                .filter_map(|c| sim.pot_index(c))
                .collect()
        });
        sim.regions_overlap = sim.regions[0].iter().any(|c| sim.regions[1].contains(c));
        sim
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn region(&self, agent: usize) -> &[usize] {
        &self.regions[agent]
    }

    pub fn pot_cells(&self) -> &[usize] {
        &self.pot_cells
    }

    /// Index of the pot on `cell`, if any.
    pub fn pot_index(&self, cell: usize) -> Option<usize> {
        self.pot_cells.iter().position(|&c| c == cell)
    }

    pub fn faced_cell(&self, agent: &Agent) -> Option<usize> {
        self.layout.neighbor(agent.cell, agent.facing)
    }

    pub fn new_state(&self) -> OvercookedState {
        OvercookedState {
            agents: [0, 1].map(|i| Agent {
                cell: self.layout.starts[i],
                facing: Dir::N,
                held: Held::Nothing,
            }),
            pots: [Pot::default(); MAX_POTS],
            time: 0,
        }
    }

    /// Deterministic transition; also reports what happened on the step.
    pub fn transition(&self, state: &OvercookedState, joint: &[usize]) -> Result<(OvercookedState, f64, Vec<Event>)> {
        if joint.len() != 2 {
            return Err(Error::argument(format!("joint action has {} entries, expected 2", joint.len())));
        }
        if let Some(&a) = joint.iter().find(|&&a| a >= NUM_ACTIONS) {
            return Err(Error::argument(format!("action {a} out of range")));
        }
        let mut next = state.clone();
        next.time += 1;
        let lay = &self.layout;

        let mut target = [None; 2];
        for i in 0..2 {
            if joint[i] < 4 {
                let d = Dir::ALL[joint[i]];
                next.agents[i].facing = d;
                if let Some(n) = lay.neighbor(state.agents[i].cell, d) {
                    if lay.tiles[n] == Tile::Floor {
                        target[i] = Some(n);
                    }
                }
            }
        }
        let (a, b) = (state.agents[0].cell, state.agents[1].cell);
        if target[0].is_some() && target[0] == target[1] {
            target = [None, None];
        }
        if target[0] == Some(b) && target[1] == Some(a) {
            target = [None, None];
        }
        // A move into a cell whose occupant stays is blocked; one pass
        // settles two agents.
        for _ in 0..2 {
            if target[0] == Some(b) && target[1].is_none() {
                target[0] = None;
            }
            if target[1] == Some(a) && target[0].is_none() {
                target[1] = None;
            }
        }
        for i in 0..2 {
            if let Some(t) = target[i] {
                next.agents[i].cell = t;
            }
        }

        for pot in next.pots.iter_mut() {
            if pot.cooking > 0 {
                pot.cooking -= 1;
                if pot.cooking == 0 {
                    pot.ready = true;
                }
            }
        }

        let mut reward = 0.0;
        let mut events = Vec::new();
        for i in 0..2 {
            if joint[i] != INTERACT {
                continue;
            }
            let Some(cell) = lay.neighbor(next.agents[i].cell, next.agents[i].facing) else {
                continue;
            };
            let held = next.agents[i].held;
            match (lay.tiles[cell], held) {
                (Tile::Onion, Held::Nothing) => next.agents[i].held = Held::Onion,
                (Tile::Tomato, Held::Nothing) => next.agents[i].held = Held::Tomato,
                (Tile::Dish, Held::Nothing) => next.agents[i].held = Held::Dish,
                (Tile::Serve, Held::Soup { onions, tomatoes }) => {
                    next.agents[i].held = Held::Nothing;
                    let n = lay.recipe_size;
                    if onions == n || tomatoes == n {
                        reward += lay.recipe_reward;
                        events.push(Event::Delivery);
                    }
                }
                (Tile::Pot, _) => {
                    let p = self.pot_index(cell).expect("pot cell is indexed");
                    let pot = &mut next.pots[p];
                    if pot.exploded {
                        continue;
                    }
                    let idle = pot.cooking == 0 && !pot.ready;
                    match held {
                        Held::Onion | Held::Tomato if idle && pot.count() < lay.recipe_size => {
                            if held == Held::Onion {
                                pot.onions += 1;
                            } else {
                                pot.tomatoes += 1;
                            }
                            next.agents[i].held = Held::Nothing;
                            if pot.is_mixed() && lay.explosion_penalty != 0.0 {
                                pot.exploded = true;
                                reward += lay.explosion_penalty;
                                events.push(Event::Explosion);
                            }
                        }
                        Held::Nothing if idle && pot.count() == lay.recipe_size => {
                            if lay.cook_time == 0 {
                                pot.ready = true;
                            } else {
                                pot.cooking = lay.cook_time;
                            }
                        }
                        Held::Dish if pot.ready => {
                            next.agents[i].held = Held::Soup {
                                onions: pot.onions,
                                tomatoes: pot.tomatoes,
                            };
                            *pot = Pot::default();
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        Ok((next, reward, events))
    }

    /// Packs everything but the clock into one integer.
    pub fn pack(&self, state: &OvercookedState) -> u128 {
        let mut key = 0u128;
        for a in &state.agents {
            key = key << 14 | (a.cell as u128) << 6 | (a.facing as u128) << 4 | a.held.code();
        }
        for pot in &state.pots[..self.pot_cells.len()] {
            key = key << 10 | pot.code();
        }
        key
    }

    /// Agent `i`'s view of the state: its own pose and held item and the pots
    /// it can reach, plus the co-player's cell when their regions overlap.
    pub fn observation(&self, state: &OvercookedState, i: usize) -> u128 {
        let a = &state.agents[i];
        let mut key = (a.cell as u128) << 6 | (a.facing as u128) << 4 | a.held.code();
        if self.regions_overlap {
            key = key << 8 | state.agents[1 - i].cell as u128;
        }
        for &p in &self.reach_pots[i] {
            key = key << 10 | state.pots[p].code();
        }
        key
    }

    /// Minimal number of actions for a lone agent to go from `from` to any
    /// pose facing a tile satisfying `goal`; `None` if impossible.
    pub fn pose_distance(&self, agent: usize, from: Pose, goal: impl Fn(usize) -> bool) -> Option<usize> {
        let lay = &self.layout;
        let idx = |p: Pose| p.0 * 4 + p.1 as usize;
        let mut dist = vec![usize::MAX; lay.tiles.len() * 4];
        let mut queue = VecDeque::from([from]);
        dist[idx(from)] = 0;
        while let Some(pose) = queue.pop_front() {
            let d = dist[idx(pose)];
            if lay.neighbor(pose.0, pose.1).is_some_and(&goal) {
                return Some(d);
            }
            for dir in Dir::ALL {
                let cell = match lay.neighbor(pose.0, dir) {
                    Some(n) if lay.tiles[n] == Tile::Floor && self.regions[agent].contains(&n) => n,
                    _ => pose.0,
                };
                let nxt = (cell, dir);
                if dist[idx(nxt)] == usize::MAX {
                    dist[idx(nxt)] = d + 1;
                    queue.push_back(nxt);
                }
            }
        }
        None
    }

    /// Tiles of kind `tile` that some floor cell of the agent's region faces.
    pub fn reachable_tiles(&self, agent: usize, tile: Tile) -> Vec<usize> {
        let mut out: Vec<usize> = self.regions[agent]
            .iter()
            .flat_map(|&c| Dir::ALL.into_iter().filter_map(move |d| self.layout.neighbor(c, d)))
            .filter(|&n| self.layout.tiles[n] == tile)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Pots both agents can reach.
    pub fn shared_pots(&self) -> Vec<usize> {
        let a = self.reachable_tiles(0, Tile::Pot);
        let b = self.reachable_tiles(1, Tile::Pot);
        a.into_iter().filter(|c| b.contains(c)).collect()
    }

    /// Pots only `agent` can reach.
    pub fn private_pots(&self, agent: usize) -> Vec<usize> {
        let shared = self.shared_pots();
        self.reachable_tiles(agent, Tile::Pot)
            .into_iter()
            .filter(|c| !shared.contains(c))
            .collect()
    }

    fn ingredients(&self, agent: usize) -> Vec<Held> {
        let mut out = Vec::new();
        if !self.reachable_tiles(agent, Tile::Onion).is_empty() {
            out.push(Held::Onion);
        }
        if !self.reachable_tiles(agent, Tile::Tomato).is_empty() {
            out.push(Held::Tomato);
        }
        out
    }

    fn feeds(&self, pot_cell: usize) -> Vec<Held> {
        let mut out = Vec::new();
        for i in 0..2 {
            if self.reachable_tiles(i, Tile::Pot).contains(&pot_cell) {
                for h in self.ingredients(i) {
                    if !out.contains(&h) {
                        out.push(h);
                    }
                }
            }
        }
        out.sort_by_key(|h| h.code());
        out
    }

    fn soup_of(&self, ingredient: Held) -> Held {
        let n = self.layout.recipe_size;
        match ingredient {
            Held::Onion => Held::Soup { onions: n, tomatoes: 0 },
            _ => Held::Soup { onions: 0, tomatoes: n },
        }
    }

    /// Runs a deterministic joint policy from `state` for `k` steps and
    /// returns the shared undiscounted and discounted returns.
    pub fn rollout_return(
        &self,
        state: &OvercookedState,
        k: usize,
        mut policy: impl FnMut(&OvercookedState, usize) -> [usize; 2],
    ) -> (f64, f64) {
        let mut s = state.clone();
        let (mut total, mut disc, mut g) = (0.0, 0.0, 1.0);
        for left in (1..=k).rev() {
            let joint = policy(&s, left);
            let (n, r, _) = self.transition(&s, &joint).expect("valid joint action");
            total += r;
            disc += g * r;
            g *= self.layout.gamma;
            s = n;
        }
        (total, disc)
    }

    /// Best shared return over `k` steps from `state` with the given
    /// discount, by exhaustive search over joint actions. `allowed[i]` lists
    /// the pots agent `i` may interact with; `None` allows all.
    pub fn plan(
        &self,
        state: &OvercookedState,
        k: usize,
        allowed: Option<&[Vec<usize>; 2]>,
        discount: f64,
    ) -> Plan {
        let mut memo: HashMap<(u128, usize), f64> = HashMap::new();
        let value = self.plan_rec(state, k, allowed, discount, &mut memo);
        Plan {
            value,
            states_searched: memo.len(),
        }
    }

    fn plan_rec(
        &self,
        state: &OvercookedState,
        k: usize,
        allowed: Option<&[Vec<usize>; 2]>,
        discount: f64,
        memo: &mut HashMap<(u128, usize), f64>,
    ) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let key = (self.pack(state), k);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut best = f64::NEG_INFINITY;
        for a in 0..NUM_ACTIONS {
            if !self.allowed(state, 0, a, allowed) {
                continue;
            }
            for b in 0..NUM_ACTIONS {
                if !self.allowed(state, 1, b, allowed) {
                    continue;
                }
                let (n, r, _) = self.transition(state, &[a, b]).expect("valid joint action");
                let v = r + discount * self.plan_rec(&n, k - 1, allowed, discount, memo);
                if v > best {
                    best = v;
                }
            }
        }
        memo.insert(key, best);
        best
    }

    fn allowed(&self, state: &OvercookedState, i: usize, action: usize, allowed: Option<&[Vec<usize>; 2]>) -> bool {
        let Some(allowed) = allowed else { return true };
        if action != INTERACT {
            return true;
        }
        match self.faced_cell(&state.agents[i]) {
            Some(c) if self.layout.tiles[c] == Tile::Pot => allowed[i].contains(&c),
            _ => true,
        }
    }

    /// Every state reachable from the initial one within the horizon, as
    /// a [`MarkovGame`] with one state per packed key. Fails when more than
    /// `cap` states are reachable.
    pub fn enumerate(&self, cap: usize) -> Result<MarkovGame> {
        let start = self.new_state();
        let mut index: HashMap<u128, usize> = HashMap::new();
        let mut states = vec![start.clone()];
        index.insert(self.pack(&start), 0);
        let mut edges: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut frontier = vec![0usize];
        for _ in 0..self.layout.horizon {
            let mut next_frontier = Vec::new();
            for &s in &frontier {
                if edges.len() <= s {
                    edges.resize(s + 1, Vec::new());
                }
                if !edges[s].is_empty() {
                    continue;
                }
                let mut out = Vec::with_capacity(NUM_ACTIONS * NUM_ACTIONS);
                for j in 0..NUM_ACTIONS * NUM_ACTIONS {
                    let (n, r, _) = self.transition(&states[s], &[j / NUM_ACTIONS, j % NUM_ACTIONS])?;
                    let key = self.pack(&n);
                    let id = match index.get(&key) {
                        Some(&id) => id,
                        None => {
                            if states.len() >= cap {
                                return Err(Error::capability(format!(
                                    "more than {cap} reachable states"
                                )));
                            }
                            let id = states.len();
                            index.insert(key, id);
                            states.push(n);
                            next_frontier.push(id);
                            id
                        }
                    };
                    out.push((id, r));
                }
                edges[s] = out;
            }
            frontier = next_frontier;
        }
        edges.resize(states.len(), Vec::new());
        let mut b = GameBuilder::new(2, self.layout.gamma, self.layout.horizon);
        let names: Vec<String> = ACTION_NAMES.iter().map(|s| s.to_string()).collect();
        for s in &states {
            b.add_state(self.describe(s), vec![names.clone(), names.clone()]);
        }
        for (s, out) in edges.iter().enumerate() {
            for j in 0..NUM_ACTIONS * NUM_ACTIONS {
                let joint = [j / NUM_ACTIONS, j % NUM_ACTIONS];
                // States first seen on the last layer keep a self-loop.
                let (next, r) = out.get(j).copied().unwrap_or((s, 0.0));
                b.set_outcome(s, &joint, vec![(next, 1.0)], vec![r, r])?;
            }
        }
        b.build()
    }

    /// Compact human-readable state label (clock omitted).
    pub fn describe(&self, state: &OvercookedState) -> String {
        let mut out = String::new();
        for (i, a) in state.agents.iter().enumerate() {
            let (r, c) = self.layout.coords(a.cell);
            let held = match a.held {
                Held::Nothing => "-".to_string(),
                Held::Onion => "o".to_string(),
                Held::Tomato => "t".to_string(),
                Held::Dish => "d".to_string(),
                Held::Soup { onions, tomatoes } => format!("s{onions}{tomatoes}"),
            };
            out.push_str(&format!("a{i}@{r},{c}{:?}{held} ", a.facing));
        }
        for (p, pot) in state.pots[..self.pot_cells.len()].iter().enumerate() {
            let flag = if pot.exploded {
                "x"
            } else if pot.ready {
                "r"
            } else {
                ""
            };
            out.push_str(&format!("p{p}:{}{}c{}{flag} ", pot.onions, pot.tomatoes, pot.cooking));
        }
        out.trim_end().to_string()
    }
}

/// Result of [`Overcooked::plan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub value: f64,
    pub states_searched: usize,
}

/// Optimal shared values with a memo kept across queries.
#[derive(Debug)]
pub struct Planner<'a> {
    sim: &'a Overcooked,
    discount: f64,
    memo: HashMap<(u128, usize), f64>,
}

impl<'a> Planner<'a> {
    pub fn new(sim: &'a Overcooked, discount: f64) -> Self {
        Planner {
            sim,
            discount,
            memo: HashMap::new(),
        }
    }

    /// Best discounted shared return over `k` steps from `state`.
    pub fn value(&mut self, state: &OvercookedState, k: usize) -> f64 {
        self.sim.plan_rec(state, k, None, self.discount, &mut self.memo)
    }

    /// Lowest-index joint action achieving [`Planner::value`].
    pub fn best_joint(&mut self, state: &OvercookedState, k: usize) -> [usize; 2] {
        let mut best = ([STAY, STAY], f64::NEG_INFINITY);
        for a in 0..NUM_ACTIONS {
            for b in 0..NUM_ACTIONS {
                let (n, r, _) = self.sim.transition(state, &[a, b]).expect("valid joint action");
                let v = r + self.discount * self.value(&n, k.saturating_sub(1));
                if v > best.1 + 1e-12 {
                    best = ([a, b], v);
                }
            }
        }
        best.0
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Simulator for Overcooked {
    type State = OvercookedState;
    type Key = u128;

    fn num_players(&self) -> usize {
        2
    }

    fn num_actions(&self, _state: &OvercookedState, _player: usize) -> usize {
        NUM_ACTIONS
    }

    fn horizon(&self) -> usize {
        self.layout.horizon
    }

    fn gamma(&self) -> f64 {
        self.layout.gamma
    }

    fn initial_state(&self) -> OvercookedState {
        self.new_state()
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &OvercookedState,
        joint: &[usize],
        _rng: &mut R,
    ) -> Result<(OvercookedState, Vec<f64>)> {
        let (next, r, _) = self.transition(state, joint)?;
        Ok((next, vec![r, r]))
    }

    fn key(&self, state: &OvercookedState, _steps_remaining: usize) -> u128 {
        self.pack(state)
    }

    fn observation_key(&self, state: &OvercookedState, steps_remaining: usize, player: usize) -> u128 {
        let _ = steps_remaining;
        self.observation(state, player)
    }

    fn partial_observations(&self) -> bool {
        true
    }

    fn key_tracks_time(&self) -> bool {
        false
    }

    /// Agents anywhere in their regions, facing anywhere, holding anything
    /// they could obtain; pots hold a single ingredient kind their users can
    /// supply, at any fill level and cooking stage.
    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(OvercookedState, usize)> {
        let mut s = self.new_state();
        loop {
            for i in 0..2 {
                let region = &self.regions[i];
                s.agents[i].cell = region[rng.gen_range(0..region.len())];
                s.agents[i].facing = Dir::ALL[rng.gen_range(0..4)];
            }
            if s.agents[0].cell != s.agents[1].cell {
                break;
            }
        }
        for i in 0..2 {
            let mut options = vec![Held::Nothing];
            let ingredients = self.ingredients(i);
            options.extend(ingredients.iter().copied());
            if !self.reachable_tiles(i, Tile::Dish).is_empty() {
                options.push(Held::Dish);
                for &p in &self.reachable_tiles(i, Tile::Pot) {
                    for h in self.feeds(p) {
                        let soup = self.soup_of(h);
                        if !options.contains(&soup) {
                            options.push(soup);
                        }
                    }
                }
            }
            s.agents[i].held = options[rng.gen_range(0..options.len())];
        }
        let size = self.layout.recipe_size;
        for (p, &cell) in self.pot_cells.iter().enumerate() {
            let feeds = self.feeds(cell);
            if feeds.is_empty() {
                continue;
            }
            let kind = feeds[rng.gen_range(0..feeds.len())];
            let n = rng.gen_range(0..=size);
            let pot = &mut s.pots[p];
            if kind == Held::Onion {
                pot.onions = n;
            } else {
                pot.tomatoes = n;
            }
            if n == size {
                let stage = rng.gen_range(0..=self.layout.cook_time + 1);
                if stage == self.layout.cook_time + 1 {
                    pot.ready = true;
                } else {
                    pot.cooking = stage;
                }
            }
        }
        let k = rng.gen_range(1..=self.layout.horizon);
        s.time = self.layout.horizon - k;
        Some((s, k))
    }

    fn action_name(&self, _player: usize, action: usize) -> String {
        ACTION_NAMES.get(action).map_or_else(|| action.to_string(), |s| s.to_string())
    }

    fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.layout.to_text().as_bytes()))
    }
}
