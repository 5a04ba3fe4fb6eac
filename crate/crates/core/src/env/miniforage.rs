//! A 9x9 grid-survival world with text observations.
//!
//! The manual names every action and achievement but never states crafting
//! quantities, so an agent has to discover them by failing.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{EnvError, Environment, StepOutcome};

pub const SIZE: i32 = 9;
pub const MAX_VITAL: u8 = 9;
pub const MAX_ITEM: u32 = 9;

pub const ACTIONS: [&str; 9] =
    ["noop", "move_west", "move_east", "move_north", "move_south", "do", "sleep", "place_table", "place_furnace"];

pub const ACHIEVEMENTS: [&str; 6] =
    ["collect_wood", "place_table", "collect_drink", "collect_sapling", "collect_stone", "place_furnace"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Grass,
    Tree,
    Water,
    Stone,
    Table,
    Furnace,
}

impl Cell {
    pub fn name(self) -> &'static str {
        match self {
            Cell::Grass => "grass",
            Cell::Tree => "tree",
            Cell::Water => "water",
            Cell::Stone => "stone",
            Cell::Table => "table",
            Cell::Furnace => "furnace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    West,
    East,
}

impl Direction {
    fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
            Direction::East => (1, 0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::West => "west",
            Direction::East => "east",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Inventory {
    pub wood: u32,
    pub stone: u32,
    pub sapling: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vitals {
    pub health: u8,
    pub food: u8,
    pub drink: u8,
    pub energy: u8,
}

impl Default for Vitals {
    fn default() -> Self {
        Vitals { health: MAX_VITAL, food: MAX_VITAL, drink: MAX_VITAL, energy: MAX_VITAL }
    }
}

/// Quantities the world enforces. The manual mentions none of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ruleset {
    pub table_wood: u32,
    pub furnace_stone: u32,
    pub wood_per_do: u32,
}

impl Default for Ruleset {
    fn default() -> Self {
        Ruleset { table_wood: 2, furnace_stone: 4, wood_per_do: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    /// Row-major, `SIZE * SIZE` cells; y grows southwards.
    pub grid: Vec<Cell>,
    pub pos: (i32, i32),
    pub facing: Direction,
    pub inventory: Inventory,
    pub vitals: Vitals,
    /// Primitive actions taken, including failed ones.
    pub step: u64,
    pub achievements: Vec<String>,
    pub last_action: Option<(String, u32)>,
    pub wood_gained: u32,
    pub wood_spent: u32,
}

impl WorldState {
    fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = Vec::with_capacity((SIZE * SIZE) as usize);
        for _ in 0..SIZE * SIZE {
            let r: f64 = rng.random();
            grid.push(match r {
                r if r < 0.14 => Cell::Tree,
                r if r < 0.22 => Cell::Stone,
                r if r < 0.27 => Cell::Water,
                _ => Cell::Grass,
            });
        }
        let pos = (SIZE / 2, SIZE / 2);
        let mut world = WorldState {
            grid,
            pos,
            facing: Direction::North,
            inventory: Inventory::default(),
            vitals: Vitals::default(),
            step: 0,
            achievements: Vec::new(),
            last_action: None,
            wood_gained: 0,
            wood_spent: 0,
        };
        // A clear strip around the start with a landmark tree two cells west.
        for dy in -2..=2 {
            for dx in -1..=1 {
                world.set((pos.0 + dx, pos.1 + dy), Cell::Grass);
            }
        }
        world.set((pos.0 - 2, pos.1), Cell::Tree);
        world
    }

    pub fn cell(&self, (x, y): (i32, i32)) -> Option<Cell> {
        if (0..SIZE).contains(&x) && (0..SIZE).contains(&y) {
            Some(self.grid[(y * SIZE + x) as usize])
        } else {
            None
        }
    }

    fn set(&mut self, (x, y): (i32, i32), cell: Cell) {
        self.grid[(y * SIZE + x) as usize] = cell;
    }

    fn target(&self) -> (i32, i32) {
        let (dx, dy) = self.facing.delta();
        (self.pos.0 + dx, self.pos.1 + dy)
    }

    fn unlock(&mut self, name: &str, unlocked: &mut Vec<String>) {
        if !self.achievements.iter().any(|a| a == name) {
            self.achievements.push(name.to_string());
            unlocked.push(name.to_string());
        }
    }

    fn tick(&mut self, sleeping: bool) {
        self.step += 1;
        let t = self.step;
        let v = &mut self.vitals;
        if t % 25 == 0 {
            v.food = v.food.saturating_sub(1);
        }
        if t % 20 == 0 {
            v.drink = v.drink.saturating_sub(1);
        }
        if !sleeping && t % 30 == 0 {
            v.energy = v.energy.saturating_sub(1);
        }
        if v.food == 0 || v.drink == 0 || v.energy == 0 {
            if t % 5 == 0 {
                v.health = v.health.saturating_sub(1);
            }
        } else if t % 10 == 0 {
            v.health = (v.health + 1).min(MAX_VITAL);
        }
    }

    /// Renders the observation text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== Gamestep {} ==\n", self.step);
        out.push_str("* Observation (1-step):\n");
        for dir in [Direction::West, Direction::East, Direction::North, Direction::South] {
            let (dx, dy) = dir.delta();
            let name = self.cell((self.pos.0 + dx, self.pos.1 + dy)).map_or("boundary", Cell::name);
            let facing = if dir == self.facing { " (facing)" } else { "" };
            let _ = writeln!(out, "  - {name}: {}, {}{facing}", dir.name(), offset_text(dx, dy));
        }
        out.push_str("\n* Near-by objects (7x9 grid):\n");
        let nearby = self.nearby();
        if nearby.is_empty() {
            out.push_str("  - none\n");
        }
        for (cell, dx, dy) in nearby {
            let _ = writeln!(
                out,
                "  - {} {} steps to {}, {}",
                cell.name(),
                dx.abs() + dy.abs(),
                direction_text(dx, dy),
                offset_text(dx, dy)
            );
        }
        let v = &self.vitals;
        let _ = write!(
            out,
            "\n* Vitals:\n  - health: {}/9\n  - food: {}/9\n  - drink: {}/9\n  - energy: {}/9\n",
            v.health, v.food, v.drink, v.energy
        );
        out.push_str("\n* Inventory:\n");
        let inv = &self.inventory;
        let items = [("wood", inv.wood), ("stone", inv.stone), ("sapling", inv.sapling)];
        if items.iter().all(|(_, n)| *n == 0) {
            out.push_str("  - empty\n");
        }
        for (name, n) in items.iter().filter(|(_, n)| *n > 0) {
            let _ = writeln!(out, "  - {name}: {n}");
        }
        if let Some((action, n)) = &self.last_action {
            let _ = write!(out, "\nAction:\n{action} {n} step(s)\n");
        }
        out
    }

    /// The two closest non-grass cells of each kind in the 7-row, 9-column
    /// window, nearest first.
    fn nearby(&self) -> Vec<(Cell, i32, i32)> {
        let mut found: Vec<(i32, usize, i32, i32, Cell)> = Vec::new();
        for dy in -3..=3 {
            for dx in -4..=4 {
                if (dx, dy) == (0, 0) {
                    continue;
                }
                let Some(cell) = self.cell((self.pos.0 + dx, self.pos.1 + dy)) else { continue };
                if cell != Cell::Grass {
                    found.push((dx.abs() + dy.abs(), cell as usize, dy, dx, cell));
                }
            }
        }
        found.sort();
        let mut per_kind = [0u8; 6];
        found
            .into_iter()
            .filter(|(.., cell)| {
                per_kind[*cell as usize] += 1;
                per_kind[*cell as usize] <= 2
            })
            .map(|(_, _, dy, dx, cell)| (cell, dx, dy))
            .collect()
    }
}

fn offset_text(dx: i32, dy: i32) -> String {
    let mut parts = Vec::new();
    if dy != 0 {
        parts.push(format!("{}{}", dy.abs(), if dy < 0 { 'N' } else { 'S' }));
    }
    if dx != 0 {
        parts.push(format!("{}{}", dx.abs(), if dx < 0 { 'W' } else { 'E' }));
    }
    parts.join(" ")
}

fn direction_text(dx: i32, dy: i32) -> String {
    let v = match dy {
        0 => "",
        d if d < 0 => "north",
        _ => "south",
    };
    let h = match dx {
        0 => "",
        d if d < 0 => "west",
        _ => "east",
    };
    match (v.is_empty(), h.is_empty()) {
        (false, false) => format!("{v}-{h}"),
        (true, _) => h.to_string(),
        (_, true) => v.to_string(),
    }
}

/// The environment: a seeded world plus the rules.
#[derive(Debug, Clone)]
pub struct MiniForage {
    seed: u64,
    rules: Ruleset,
    state: WorldState,
    rng: ChaCha8Rng,
}

impl MiniForage {
    pub fn new(seed: u64) -> Self {
        MiniForage {
            seed,
            rules: Ruleset::default(),
            state: WorldState::generate(seed),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED),
        }
    }

    pub fn with_rules(mut self, rules: Ruleset) -> Self {
        self.rules = rules;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rules(&self) -> &Ruleset {
        &self.rules
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn manual_text() -> String {
        MANUAL.to_string()
    }

    /// One primitive action; `Err` carries the failure reason.
    fn apply(&mut self, action: &str, unlocked: &mut Vec<String>) -> Result<(), String> {
        let rules = self.rules;
        let s = &mut self.state;
        let dir = match action {
            "move_north" => Some(Direction::North),
            "move_south" => Some(Direction::South),
            "move_west" => Some(Direction::West),
            "move_east" => Some(Direction::East),
            _ => None,
        };
        if let Some(dir) = dir {
            s.facing = dir;
            let to = s.target();
            return match s.cell(to) {
                Some(Cell::Grass) => {
                    s.pos = to;
                    Ok(())
                }
                Some(c) => Err(format!("blocked by {}", c.name())),
                None => Err("blocked by the boundary".into()),
            };
        }
        let target = s.target();
        match action {
            "noop" => Ok(()),
            "sleep" => {
                if s.vitals.energy >= MAX_VITAL {
                    return Err("energy is already full".into());
                }
                s.vitals.energy += 1;
                Ok(())
            }
            "do" => match s.cell(target) {
                Some(Cell::Tree) => {
                    if s.inventory.wood + rules.wood_per_do > MAX_ITEM {
                        return Err("cannot carry more wood".into());
                    }
                    s.inventory.wood += rules.wood_per_do;
                    s.wood_gained += rules.wood_per_do;
                    s.unlock("collect_wood", unlocked);
                    Ok(())
                }
                Some(Cell::Stone) => {
                    if s.inventory.stone >= MAX_ITEM {
                        return Err("cannot carry more stone".into());
                    }
                    s.inventory.stone += 1;
                    s.set(target, Cell::Grass);
                    s.unlock("collect_stone", unlocked);
                    Ok(())
                }
                Some(Cell::Water) => {
                    s.vitals.drink = (s.vitals.drink + 1).min(MAX_VITAL);
                    s.unlock("collect_drink", unlocked);
                    Ok(())
                }
                Some(Cell::Grass) => {
                    if s.inventory.sapling < MAX_ITEM && self.rng.random::<f64>() < 0.1 {
                        s.inventory.sapling += 1;
                        s.unlock("collect_sapling", unlocked);
                        Ok(())
                    } else {
                        Err("nothing collected from grass".into())
                    }
                }
                Some(c) => Err(format!("nothing to collect from {}", c.name())),
                None => Err("facing the boundary".into()),
            },
            "place_table" => {
                if s.inventory.wood < rules.table_wood {
                    return Err("not enough wood".into());
                }
                if s.cell(target) != Some(Cell::Grass) {
                    return Err("the target cell is not grass".into());
                }
                s.inventory.wood -= rules.table_wood;
                s.wood_spent += rules.table_wood;
                s.set(target, Cell::Table);
                s.unlock("place_table", unlocked);
                Ok(())
            }
            "place_furnace" => {
                if s.inventory.stone < rules.furnace_stone {
                    return Err("not enough stone".into());
                }
                if s.cell(target) != Some(Cell::Grass) {
                    return Err("the target cell is not grass".into());
                }
                s.inventory.stone -= rules.furnace_stone;
                s.set(target, Cell::Furnace);
                s.unlock("place_furnace", unlocked);
                Ok(())
            }
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

impl Environment for MiniForage {
    fn reset(&mut self) -> Result<String, EnvError> {
        *self = MiniForage::new(self.seed).with_rules(self.rules);
        Ok(self.state.render())
    }

    fn step(&mut self, action: &str, repeats: u32) -> Result<StepOutcome, EnvError> {
        if !ACTIONS.contains(&action) {
            return Err(EnvError(format!("unknown action `{action}`")));
        }
        if repeats == 0 {
            return Err(EnvError("repeats must be at least 1".into()));
        }
        let mut unlocked = Vec::new();
        let mut executed = 0;
        let mut failure = None;
        for _ in 0..repeats {
            let outcome = self.apply(action, &mut unlocked);
            self.state.tick(action == "sleep");
            match outcome {
                Ok(()) => executed += 1,
                Err(reason) => {
                    failure = Some(reason);
                    break;
                }
            }
            if self.state.vitals.health == 0 {
                break;
            }
        }
        self.state.last_action = Some((action.to_string(), repeats));
        let s = &self.state;
        let info = json!({
            "success": failure.is_none(),
            "failure": failure,
            "executed": executed,
            "unlocked": unlocked,
            "inventory": s.inventory,
            "position": [s.pos.0, s.pos.1],
        });
        Ok(StepOutcome {
            observation: s.render(),
            reward: unlocked.len() as f64,
            done: s.vitals.health == 0,
            info,
        })
    }

    fn actions(&self) -> Vec<String> {
        ACTIONS.iter().map(|a| a.to_string()).collect()
    }

    fn manual(&self) -> String {
        Self::manual_text()
    }
}

const MANUAL: &str = "\
List of game achievements and their requirements:
1. Collect Wood: No requirements
2. Place Table: Requires Collect Wood
3. Collect Drink: No requirements
4. Collect Sapling: No requirements
5. Collect Stone: No requirements
6. Place Furnace: Requires Collect Stone

List of all actions and their requirements:
1. Noop: Always applicable.
2. Move West: Flat ground to the west of the agent.
3. Move East: Flat ground to the east of the agent.
4. Move North: Flat ground to the north of the agent.
5. Move South: Flat ground to the south of the agent.
6. Do: Facing a tree, stone, water or grass.
7. Sleep: Energy level is below maximum.
8. Place Table: Wood in inventory; facing grass.
9. Place Furnace: Stone in inventory; facing grass.

Action names are written in lower case with underscores, e.g. move_west or place_table.

Notes:
 - Diagonal actions are not supported, only use the four cardinal directions.
 - The world is a 9x9 field surrounded by an impassable boundary.
 - There are no creatures.
 - Food, drink and energy slowly decrease; health recovers while none of them is empty.";
