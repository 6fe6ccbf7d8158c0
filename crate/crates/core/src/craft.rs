//! The 12×12 Craft gridworld: map generation, crafting rules, the local
//! observation encoding and the option-template wiring of the get-gem and
//! get-gold task hierarchies.
//!
//! Map text legend (one character per cell, one row per line):
//!
//! ```text
//! .  empty       w  wood       i  iron       #  stone
//! ~  water       g  gold       *  gem        B  workbench
//! A  anvil       F  factory    X  boundary
//! ```

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templates::{Curriculum, Stage};
use crate::smdp::{
    derive_seed, seeded_rng, ActionEntry, Encoding, Environment, OptionTemplate, SimRng, StateSpace,
    TerminationCondition,
};

pub const GRID: usize = 12;
/// Side of the egocentric observation window.
pub const VIEW: usize = 5;
pub const OBSERVATION_LEN: usize = VIEW * VIEW * Cell::COUNT + Item::COUNT;
pub const DISCOUNT: f64 = 0.99;

const GENERATION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Wood,
    Iron,
    Stone,
    Water,
    Gold,
    Gem,
    Workbench,
    Anvil,
    Factory,
    Boundary,
}

impl Cell {
    pub const COUNT: usize = 11;
    pub const ALL: [Cell; Cell::COUNT] = [
        Cell::Empty,
        Cell::Wood,
        Cell::Iron,
        Cell::Stone,
        Cell::Water,
        Cell::Gold,
        Cell::Gem,
        Cell::Workbench,
        Cell::Anvil,
        Cell::Factory,
        Cell::Boundary,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Wood => 'w',
            Cell::Iron => 'i',
            Cell::Stone => '#',
            Cell::Water => '~',
            Cell::Gold => 'g',
            Cell::Gem => '*',
            Cell::Workbench => 'B',
            Cell::Anvil => 'A',
            Cell::Factory => 'F',
            Cell::Boundary => 'X',
        }
    }

    pub fn from_symbol(c: char) -> Option<Cell> {
        Cell::ALL.into_iter().find(|cell| cell.symbol() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Item {
    Wood,
    Iron,
    Stick,
    Axe,
    Bridge,
    Gold,
    Gem,
}

impl Item {
    pub const COUNT: usize = 7;
    pub const ALL: [Item; Item::COUNT] = [
        Item::Wood,
        Item::Iron,
        Item::Stick,
        Item::Axe,
        Item::Bridge,
        Item::Gold,
        Item::Gem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Item::Wood => "wood",
            Item::Iron => "iron",
            Item::Stick => "stick",
            Item::Axe => "axe",
            Item::Bridge => "bridge",
            Item::Gold => "gold",
            Item::Gem => "gem",
        }
    }

    /// The task whose goal is to hold this item.
    pub fn producer(self) -> Task {
        match self {
            Item::Wood => Task::GetWood,
            Item::Iron => Task::GetIron,
            Item::Stick => Task::MakeStick,
            Item::Axe => Task::MakeAxe,
            Item::Bridge => Task::MakeBridge,
            Item::Gold => Task::GetGold,
            Item::Gem => Task::GetGem,
        }
    }
}

/// Item counts held by the agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Inventory([u8; Item::COUNT]);

impl Inventory {
    pub fn count(&self, item: Item) -> u8 {
        self.0[item as usize]
    }

    pub fn has(&self, item: Item) -> bool {
        self.count(item) > 0
    }

    pub fn add(&mut self, item: Item) {
        self.0[item as usize] = self.0[item as usize].saturating_add(1);
    }

    /// Removes one unit; false if none was held.
    pub fn take(&mut self, item: Item) -> bool {
        let slot = &mut self.0[item as usize];
        if *slot == 0 {
            return false;
        }
        *slot -= 1;
        true
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn counts(&self) -> [u8; Item::COUNT] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "get_gem", alias = "gem")]
    Gem,
    #[serde(rename = "get_gold", alias = "gold")]
    Gold,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gem => "get_gem",
            Family::Gold => "get_gold",
        }
    }

    pub fn top_task(self) -> Task {
        match self {
            Family::Gem => Task::GetGem,
            Family::Gold => Task::GetGold,
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        match name {
            "get_gem" | "gem" => Some(Family::Gem),
            "get_gold" | "gold" => Some(Family::Gold),
            _ => None,
        }
    }

    /// Tasks in top-down learning order, grouped by learning level (level 1 first).
    pub fn levels(self) -> Vec<Vec<Task>> {
        match self {
            Family::Gem => vec![
                vec![Task::GetGem],
                vec![Task::MakeAxe],
                vec![Task::MakeStick, Task::GetIron],
                vec![Task::GetWood],
            ],
            Family::Gold => vec![
                vec![Task::GetGold],
                vec![Task::MakeBridge],
                vec![Task::GetWood, Task::GetIron],
            ],
        }
    }

    /// Top-down learning order with each task's learning level.
    pub fn learning_order(self) -> Vec<(Task, usize)> {
        self.levels()
            .into_iter()
            .enumerate()
            .flat_map(|(i, tasks)| tasks.into_iter().map(move |t| (t, i + 1)))
            .collect()
    }

    /// Order in which bottom-up option-value iteration learns the same tasks.
    pub fn bottom_up_order(self) -> Vec<Task> {
        self.learning_order().into_iter().rev().map(|(t, _)| t).collect()
    }

    /// WOOD and IRON cells placed on each generated map. Bridges are consumed
    /// and one can be spent on any water cell, so gold maps carry spares.
    pub fn raw_resource_count(self) -> usize {
        match self {
            Family::Gem => 2,
            Family::Gold => 4,
        }
    }

    /// Tasks reported in the headline comparison tables.
    pub fn headline_tasks(self) -> Vec<Task> {
        match self {
            Family::Gem => vec![Task::GetGem, Task::MakeAxe, Task::MakeStick],
            Family::Gold => vec![Task::GetGold, Task::MakeBridge],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    GetWood,
    GetIron,
    MakeStick,
    MakeAxe,
    GetGem,
    MakeBridge,
    GetGold,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::GetWood,
        Task::GetIron,
        Task::MakeStick,
        Task::MakeAxe,
        Task::GetGem,
        Task::MakeBridge,
        Task::GetGold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::GetWood => "get_wood",
            Task::GetIron => "get_iron",
            Task::MakeStick => "make_stick",
            Task::MakeAxe => "make_axe",
            Task::GetGem => "get_gem",
            Task::MakeBridge => "make_bridge",
            Task::GetGold => "get_gold",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn goal_item(self) -> Item {
        match self {
            Task::GetWood => Item::Wood,
            Task::GetIron => Item::Iron,
            Task::MakeStick => Item::Stick,
            Task::MakeAxe => Item::Axe,
            Task::GetGem => Item::Gem,
            Task::MakeBridge => Item::Bridge,
            Task::GetGold => Item::Gold,
        }
    }

    pub fn step_limit(self) -> usize {
        match self {
            Task::GetWood | Task::GetIron => 100,
            Task::MakeStick => 200,
            Task::MakeBridge => 300,
            Task::MakeAxe | Task::GetGold => 400,
            Task::GetGem => 500,
        }
    }

    /// Expected task horizon `d` (template discount γ^d, memory 20·d).
    pub fn horizon(self) -> usize {
        match self {
            Task::GetGem | Task::GetGold => 100,
            Task::MakeAxe | Task::MakeBridge => 50,
            Task::MakeStick => 40,
            Task::GetWood | Task::GetIron => 20,
        }
    }

    /// Tasks whose episodes count towards this task's total.
    pub fn subtree(self) -> Vec<Task> {
        let mut out = vec![self];
        match self {
            Task::GetGem => out.extend([Task::MakeAxe, Task::MakeStick, Task::GetIron, Task::GetWood]),
            Task::MakeAxe => out.extend([Task::MakeStick, Task::GetIron, Task::GetWood]),
            Task::MakeStick => out.push(Task::GetWood),
            Task::GetGold => out.extend([Task::MakeBridge, Task::GetWood, Task::GetIron]),
            Task::MakeBridge => out.extend([Task::GetWood, Task::GetIron]),
            Task::GetWood | Task::GetIron => {}
        }
        out
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A task as played on a particular family's maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub task: Task,
    pub family: Family,
    pub step_limit: usize,
    pub horizon: usize,
}

impl TaskSpec {
    pub fn new(task: Task, family: Family) -> Self {
        Self {
            task,
            family,
            step_limit: task.step_limit(),
            horizon: task.horizon(),
        }
    }

    pub fn goal_reached(&self, state: &CraftState) -> bool {
        state.inventory.has(self.task.goal_item())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CraftMap {
    grid: [[Cell; GRID]; GRID],
    pub seed: u64,
}

impl CraftMap {
    fn walled(seed: u64) -> Self {
        let mut grid = [[Cell::Empty; GRID]; GRID];
        for (r, row) in grid.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                if r == 0 || c == 0 || r == GRID - 1 || c == GRID - 1 {
                    *cell = Cell::Boundary;
                }
            }
        }
        Self { grid, seed }
    }

    pub fn get(&self, row: usize, col: usize) -> Cell {
        self.grid[row][col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        self.grid[row][col] = cell;
    }

    /// Cell at a signed offset; anything outside the grid reads as boundary.
    pub fn get_signed(&self, row: isize, col: isize) -> Cell {
        if row < 0 || col < 0 || row >= GRID as isize || col >= GRID as isize {
            Cell::Boundary
        } else {
            self.grid[row as usize][col as usize]
        }
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.grid.iter().flatten().filter(|&&c| c == cell).count()
    }

    pub fn positions(&self, cell: Cell) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..GRID {
            for c in 0..GRID {
                if self.grid[r][c] == cell {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(GRID * (GRID + 1));
        for row in &self.grid {
            s.extend(row.iter().map(|c| c.symbol()));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, seed: u64) -> Result<Self> {
        let mut grid = [[Cell::Empty; GRID]; GRID];
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != GRID {
            return Err(Error::Parse {
                line: lines.len(),
                message: format!("expected {GRID} rows, found {}", lines.len()),
            });
        }
        for (r, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.trim_end().chars().collect();
            if chars.len() != GRID {
                return Err(Error::Parse {
                    line: r + 1,
                    message: format!("expected {GRID} cells, found {}", chars.len()),
                });
            }
            for (c, ch) in chars.into_iter().enumerate() {
                grid[r][c] = Cell::from_symbol(ch).ok_or_else(|| Error::Parse {
                    line: r + 1,
                    message: format!("unknown cell symbol `{ch}`"),
                })?;
            }
        }
        Ok(Self { grid, seed })
    }

    /// Empty cells reachable from `start` by four-connected moves.
    pub fn reachable_from(&self, start: (usize, usize)) -> Vec<Vec<bool>> {
        let mut seen = vec![vec![false; GRID]; GRID];
        if self.get(start.0, start.1) != Cell::Empty {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start.0][start.1] = true;
        while let Some((r, c)) = queue.pop_front() {
            for (nr, nc) in neighbours(r, c) {
                if !seen[nr][nc] && self.get(nr, nc) == Cell::Empty {
                    seen[nr][nc] = true;
                    queue.push_back((nr, nc));
                }
            }
        }
        seen
    }
}

/// Orthogonal neighbours in the fixed order up, down, left, right.
fn neighbours(r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
        .into_iter()
        .filter_map(move |(dr, dc)| {
            let nr = r as isize + dr;
            let nc = c as isize + dc;
            (nr >= 0 && nc >= 0 && nr < GRID as isize && nc < GRID as isize).then_some((nr as usize, nc as usize))
        })
}

fn touches(region: &[Vec<bool>], pos: (usize, usize)) -> bool {
    neighbours(pos.0, pos.1).any(|(r, c)| region[r][c])
}

/// Column of the water band on gold maps, if any.
pub fn water_column(map: &CraftMap) -> Option<usize> {
    (1..GRID - 1).find(|&c| (1..GRID - 1).all(|r| map.get(r, c) == Cell::Water))
}

fn random_empty(map: &CraftMap, cols: std::ops::Range<usize>, rng: &mut SimRng) -> Option<(usize, usize)> {
    let cells: Vec<(usize, usize)> = (1..GRID - 1)
        .flat_map(|r| cols.clone().map(move |c| (r, c)))
        .filter(|&(r, c)| map.get(r, c) == Cell::Empty)
        .collect();
    if cells.is_empty() {
        None
    } else {
        Some(cells[rng.random_range(0..cells.len())])
    }
}

/// Columns in which the agent may start (left of the water on gold maps).
pub fn agent_columns(map: &CraftMap) -> std::ops::Range<usize> {
    match water_column(map) {
        Some(w) => 1..w,
        None => 1..GRID - 1,
    }
}

fn try_generate(seed: u64, family: Family) -> Option<CraftMap> {
    let mut rng = seeded_rng(seed);
    let mut map = CraftMap::walled(seed);
    let home = match family {
        Family::Gem => {
            let r = rng.random_range(2..GRID - 2);
            let c = rng.random_range(2..GRID - 2);
            map.set(r, c, Cell::Gem);
            for (nr, nc) in neighbours(r, c) {
                map.set(nr, nc, Cell::Stone);
            }
            1..GRID - 1
        }
        Family::Gold => {
            let w = rng.random_range(7..9);
            for r in 1..GRID - 1 {
                map.set(r, w, Cell::Water);
            }
            let (r, c) = random_empty(&map, w + 1..GRID - 1, &mut rng)?;
            map.set(r, c, Cell::Gold);
            1..w
        }
    };
    let mut place = |cell: Cell, n: usize, map: &mut CraftMap| -> Option<()> {
        for _ in 0..n {
            let (r, c) = random_empty(map, home.clone(), &mut rng)?;
            map.set(r, c, cell);
        }
        Some(())
    };
    let raw = family.raw_resource_count();
    place(Cell::Wood, raw, &mut map)?;
    place(Cell::Iron, raw, &mut map)?;
    match family {
        Family::Gem => {
            place(Cell::Anvil, 1, &mut map)?;
            place(Cell::Workbench, 1, &mut map)?;
        }
        Family::Gold => place(Cell::Factory, 1, &mut map)?,
    }
    layout_is_solvable(&map, family).then_some(map)
}

/// Structural reachability check used to accept generated maps: the agent
/// region is one connected component touching every ingredient, and the
/// goal is accessible once the family's tool is crafted.
pub fn layout_is_solvable(map: &CraftMap, family: Family) -> bool {
    let home = agent_columns(map);
    let empties: Vec<(usize, usize)> = (1..GRID - 1)
        .flat_map(|r| home.clone().map(move |c| (r, c)))
        .filter(|&(r, c)| map.get(r, c) == Cell::Empty)
        .collect();
    let Some(&first) = empties.first() else {
        return false;
    };
    let region = map.reachable_from(first);
    if !empties.iter().all(|&(r, c)| region[r][c]) {
        return false;
    }
    let ingredients: &[Cell] = match family {
        Family::Gem => &[Cell::Wood, Cell::Iron, Cell::Anvil, Cell::Workbench],
        Family::Gold => &[Cell::Wood, Cell::Iron, Cell::Factory],
    };
    for &cell in ingredients {
        let spots = map.positions(cell);
        if spots.is_empty() || !spots.iter().all(|&p| touches(&region, p)) {
            return false;
        }
    }
    match family {
        Family::Gem => {
            if map.count(Cell::Gem) != 1 || map.count(Cell::Gold) != 0 {
                return false;
            }
            map.positions(Cell::Stone).iter().any(|&p| touches(&region, p))
        }
        Family::Gold => {
            let Some(w) = water_column(map) else {
                return false;
            };
            if map.count(Cell::Gold) != 1 || map.count(Cell::Gem) != 0 {
                return false;
            }
            let far: Vec<(usize, usize)> = (1..GRID - 1)
                .flat_map(|r| (w + 1..GRID - 1).map(move |c| (r, c)))
                .filter(|&(r, c)| map.get(r, c) == Cell::Empty)
                .collect();
            let Some(&far_first) = far.first() else {
                return false;
            };
            let far_region = map.reachable_from(far_first);
            far.iter().all(|&(r, c)| far_region[r][c])
                && touches(&far_region, map.positions(Cell::Gold)[0])
                && (1..GRID - 1).any(|r| region[r][w - 1] && far_region[r][w + 1])
        }
    }
}

/// Generates a solvable map for the task's family; identical seeds give
/// identical maps. Rejected layouts are re-rolled with a derived sub-seed.
pub fn generate_map(seed: u64, task: &TaskSpec) -> Result<CraftMap> {
    for attempt in 0..GENERATION_ATTEMPTS {
        let sub = derive_seed(seed, "craft-map", attempt as u64);
        if let Some(mut map) = try_generate(sub, task.family) {
            map.seed = seed;
            return Ok(map);
        }
    }
    Err(Error::GenerationFailure {
        seed,
        attempts: GENERATION_ATTEMPTS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Use,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; Action::COUNT] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Use];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Use => "use",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CraftState {
    pub map: CraftMap,
    pub pos: (usize, usize),
    pub inventory: Inventory,
    pub steps: usize,
}

impl CraftState {
    /// The map with the agent drawn as `@`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in 0..GRID {
            for c in 0..GRID {
                out.push(if (r, c) == self.pos { '@' } else { self.map.get(r, c).symbol() });
            }
            out.push('\n');
        }
        out
    }
}

/// Applies the crafting rule for the targeted cell, if one matches.
fn interact(state: &mut CraftState, (r, c): (usize, usize)) -> bool {
    let inv = &mut state.inventory;
    match state.map.get(r, c) {
        cell @ (Cell::Wood | Cell::Iron | Cell::Gold | Cell::Gem) => {
            inv.add(match cell {
                Cell::Wood => Item::Wood,
                Cell::Iron => Item::Iron,
                Cell::Gold => Item::Gold,
                _ => Item::Gem,
            });
            state.map.set(r, c, Cell::Empty);
            true
        }
        Cell::Anvil if inv.has(Item::Wood) => {
            inv.take(Item::Wood);
            inv.add(Item::Stick);
            true
        }
        Cell::Workbench if inv.has(Item::Stick) && inv.has(Item::Iron) => {
            inv.take(Item::Stick);
            inv.take(Item::Iron);
            inv.add(Item::Axe);
            true
        }
        Cell::Factory if inv.has(Item::Wood) && inv.has(Item::Iron) => {
            inv.take(Item::Wood);
            inv.take(Item::Iron);
            inv.add(Item::Bridge);
            true
        }
        // The axe is a tool and survives breaking stone.
        Cell::Stone if inv.has(Item::Axe) => {
            state.map.set(r, c, Cell::Empty);
            true
        }
        Cell::Water if inv.has(Item::Bridge) => {
            inv.take(Item::Bridge);
            state.map.set(r, c, Cell::Empty);
            true
        }
        _ => false,
    }
}

/// Deterministic successor. Blocked moves are no-ops; `Use` fires the rule
/// of the first neighbour (up, down, left, right) that has one.
pub fn apply(state: &CraftState, action: Action) -> CraftState {
    let mut next = state.clone();
    next.steps += 1;
    let (r, c) = state.pos;
    let target = match action {
        Action::Up => Some((r - 1, c)),
        Action::Down => Some((r + 1, c)),
        Action::Left => Some((r, c - 1)),
        Action::Right => Some((r, c + 1)),
        Action::Use => None,
    };
    match target {
        Some((tr, tc)) => {
            if next.map.get(tr, tc) == Cell::Empty {
                next.pos = (tr, tc);
            }
        }
        None => {
            for n in neighbours(r, c) {
                if interact(&mut next, n) {
                    break;
                }
            }
        }
    }
    next
}

/// Egocentric features: a 5×5 window (boundary-padded) one-hot over cell
/// kinds, followed by one presence bit per inventory item.
pub fn observe_into(state: &CraftState, out: &mut Vec<f64>) {
    out.clear();
    out.resize(OBSERVATION_LEN, 0.0);
    let half = (VIEW / 2) as isize;
    let (r, c) = (state.pos.0 as isize, state.pos.1 as isize);
    let mut k = 0;
    for dr in -half..=half {
        for dc in -half..=half {
            let cell = state.map.get_signed(r + dr, c + dc);
            out[k * Cell::COUNT + cell.index()] = 1.0;
            k += 1;
        }
    }
    let base = VIEW * VIEW * Cell::COUNT;
    for (i, item) in Item::ALL.into_iter().enumerate() {
        if state.inventory.has(item) {
            out[base + i] = 1.0;
        }
    }
}

pub fn observe(state: &CraftState) -> Vec<f64> {
    let mut out = Vec::with_capacity(OBSERVATION_LEN);
    observe_into(state, &mut out);
    out
}

/// Craft played on one task: sparse 0/1 reward for obtaining the goal item,
/// episodes end on the goal or at the task's step limit.
#[derive(Debug, Clone)]
pub struct CraftEnv {
    pub spec: TaskSpec,
}

impl CraftEnv {
    pub fn new(task: Task, family: Family) -> Self {
        Self {
            spec: TaskSpec::new(task, family),
        }
    }

    pub fn step(&self, state: &CraftState, action: Action) -> (CraftState, bool) {
        let next = apply(state, action);
        let done = self.spec.goal_reached(&next) || next.steps >= self.spec.step_limit;
        (next, done)
    }

    /// Fresh state on `map` with the agent at `pos`.
    pub fn state_on(&self, map: CraftMap, pos: (usize, usize)) -> CraftState {
        CraftState {
            map,
            pos,
            inventory: Inventory::default(),
            steps: 0,
        }
    }
}

impl Environment for CraftEnv {
    type State = CraftState;

    fn state_space(&self) -> StateSpace {
        StateSpace {
            dimension: OBSERVATION_LEN,
            encoding: Encoding::OneHot,
        }
    }

    fn action_count(&self) -> usize {
        Action::COUNT
    }

    fn discount(&self) -> f64 {
        DISCOUNT
    }

    fn initial_state(&self, rng: &mut SimRng) -> CraftState {
        let seed: u64 = rng.random();
        // Placement counts are far below grid capacity, so generation only
        // fails if every one of the re-rolls is rejected.
        let map = generate_map(seed, &self.spec).expect("craft map generation exhausted its re-rolls");
        let pos = random_empty(&map, agent_columns(&map), rng).expect("generated map has an empty start cell");
        self.state_on(map, pos)
    }

    fn reward(&self, state: &CraftState, next: &CraftState) -> f64 {
        if self.spec.goal_reached(next) && !self.spec.goal_reached(state) {
            1.0
        } else {
            0.0
        }
    }

    fn transition(&self, state: &CraftState, action: usize, _rng: &mut SimRng) -> CraftState {
        apply(state, Action::from_index(action))
    }

    fn is_terminal(&self, state: &CraftState) -> bool {
        self.spec.goal_reached(state) || state.steps >= self.spec.step_limit
    }

    fn max_episode_steps(&self) -> usize {
        self.spec.step_limit
    }

    fn observe_into(&self, state: &CraftState, out: &mut Vec<f64>) {
        observe_into(state, out);
    }
}

/// Template whose goal is holding `item`. It is masked while the item is
/// held; teleporting inserts the item and leaves map and position alone.
pub fn item_template(id: impl Into<String>, item: Item, level: usize) -> OptionTemplate<CraftState> {
    OptionTemplate::new(
        id,
        level,
        Arc::new(move |s: &CraftState| !s.inventory.has(item)),
        TerminationCondition {
            predicate: Arc::new(move |s: &CraftState| s.inventory.has(item)),
            timeout: item.producer().step_limit(),
        },
        Arc::new(move |s: &CraftState, _rng: &mut SimRng| {
            let mut next = s.clone();
            next.inventory.add(item);
            next
        }),
    )
}

pub fn give_template(item: Item, level: usize) -> OptionTemplate<CraftState> {
    item_template(format!("give_{}", item.name()), item, level)
}

/// The level-0 template pursuing the family's original goal.
pub fn top_template(family: Family) -> OptionTemplate<CraftState> {
    let task = family.top_task();
    item_template(task.name(), task.goal_item(), 0)
}

/// Template trained for `task` at `level` (the top-level template at level 1).
pub fn trainee_template(task: Task, family: Family, level: usize) -> OptionTemplate<CraftState> {
    if level <= 1 && task == family.top_task() {
        top_template(family)
    } else {
        give_template(task.goal_item(), level - 1)
    }
}

fn primitives() -> impl Iterator<Item = ActionEntry<CraftState>> {
    (0..Action::COUNT).map(ActionEntry::Primitive)
}

/// Action set used to train `task` at learning `level`: the hierarchy's
/// helper templates followed by up, down, left, right, use.
pub fn craft_template_set(task: Task, level: usize) -> Result<Vec<ActionEntry<CraftState>>> {
    let helpers: &[Item] = match (task, level) {
        (Task::GetGem, 1) => &[Item::Axe],
        (Task::MakeAxe, 2) => &[Item::Stick, Item::Iron],
        (Task::MakeStick, 3) => &[Item::Wood],
        (Task::GetIron, 3) | (Task::GetWood, 3) | (Task::GetWood, 4) => &[],
        (Task::GetGold, 1) => &[Item::Bridge],
        (Task::MakeBridge, 2) => &[Item::Wood, Item::Iron],
        _ => {
            return Err(Error::UnknownLevel {
                task: task.name().to_string(),
                level,
            })
        }
    };
    Ok(helpers
        .iter()
        .map(|&item| ActionEntry::Template(give_template(item, level)))
        .chain(primitives())
        .collect())
}

/// Top-down learning stages for a family, played on the family's
/// top-level environment.
pub fn curriculum(family: Family) -> Result<Curriculum<CraftEnv>> {
    let stages = family
        .learning_order()
        .into_iter()
        .map(|(task, level)| {
            Ok(Stage {
                name: task.name().to_string(),
                level,
                template: trainee_template(task, family, level),
                actions: craft_template_set(task, level)?,
                horizon: task.horizon(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curriculum {
        env: CraftEnv::new(family.top_task(), family),
        stages,
    })
}

/// Labels of an action set, e.g. `["give_axe", "up", ..., "use"]`.
pub fn entry_labels(actions: &[ActionEntry<CraftState>]) -> Vec<String> {
    actions
        .iter()
        .map(|e| match e {
            ActionEntry::Primitive(a) => Action::from_index(*a).name().to_string(),
            ActionEntry::Template(t) => t.id.clone(),
        })
        .collect()
}
