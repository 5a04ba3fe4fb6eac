//! Built-in environments.

mod miniforage;

pub use miniforage::{Cell, Direction, Inventory, MiniForage, Ruleset, Vitals, WorldState, ACTIONS, ACHIEVEMENTS};
