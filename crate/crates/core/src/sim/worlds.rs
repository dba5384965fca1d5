//! Built-in scenario worlds.

use serde::{Deserialize, Serialize};

use super::world::{BoxObstacle, Heightfield, WorldModel};
use crate::error::Result;
use crate::geom::Configuration;

/// Default heightfield spacing for built-in worlds.
pub const SPACING: f64 = 0.05;

/// What counts as success in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    ReachGoal,
    SurviveUntilTimeout,
}

/// A world with its nominal start, goal and success rule.
#[derive(Debug, Clone)]
pub struct BuiltinWorld {
    pub world: WorldModel,
    pub start: Configuration,
    pub goal: [f64; 2],
    pub success: SuccessRule,
}

pub const BUILTIN_NAMES: [&str; 3] = ["trench", "ramp", "cliff_with_bypass"];

/// Corridor side walls spanning `x0..x1` at `y = ±half_width`.
fn side_walls(x0: f64, x1: f64, y_lo: f64, y_hi: f64, z0: f64, z1: f64) -> Vec<BoxObstacle> {
    vec![
        BoxObstacle::new([x0, y_lo - 0.4, z0], [x1, y_lo, z1]),
        BoxObstacle::new([x0, y_hi, z0], [x1, y_hi + 0.4, z1]),
    ]
}

fn grid(x0: f64, x1: f64, y0: f64, y1: f64, f: impl Fn(f64, f64) -> f64) -> Result<Heightfield> {
    let cols = ((x1 - x0) / SPACING).round() as usize;
    let rows = ((y1 - y0) / SPACING).round() as usize;
    Heightfield::from_fn([x0, y0], SPACING, cols, rows, f)
}

/// Flat apron ending in a 2 m deep, 3 m wide vertical-walled trench inside a corridor.
pub fn trench() -> Result<BuiltinWorld> {
    let hf = grid(-8.0, 14.0, -6.0, 6.0, |x, _| if (3.0..6.0).contains(&x) { -2.0 } else { 0.0 })?;
    let boxes = side_walls(-8.0, 14.0, -2.5, 2.5, -2.5, 1.5);
    Ok(BuiltinWorld {
        world: WorldModel::new("trench", hf, boxes)?,
        start: Configuration::new(0.0, 0.0, 0.0),
        goal: [8.5, 0.0],
        success: SuccessRule::SurviveUntilTimeout,
    })
}

/// Height of the ramp world: upper level for x > -1, a 20° descent toward -x,
/// lower level 1.5 m down.
pub fn ramp_height(x: f64) -> f64 {
    let crest = -1.0;
    let drop = 1.5;
    let slope = 20f64.to_radians().tan();
    if x >= crest {
        0.0
    } else {
        (-(crest - x) * slope).max(-drop)
    }
}

/// Dead-end plateau with a walled ramp descending behind the start pose.
pub fn ramp() -> Result<BuiltinWorld> {
    let hf = grid(-12.0, 6.0, -6.0, 6.0, |x, _| ramp_height(x))?;
    let mut boxes = side_walls(-12.0, 3.0, -2.5, 2.5, -2.0, 1.5);
    boxes.push(BoxObstacle::new([2.5, -2.9, -0.5], [2.9, 2.9, 1.5]));
    Ok(BuiltinWorld {
        world: WorldModel::new("ramp", hf, boxes)?,
        start: Configuration::new(0.0, 0.0, 0.0),
        goal: [-7.0, 0.0],
        success: SuccessRule::ReachGoal,
    })
}

/// Cliff for y < 0.5 and a traversable 20° slope beside it for y in [0.5, 4.5].
pub fn cliff_with_bypass_height(x: f64, y: f64) -> f64 {
    let edge = 3.0;
    let drop = 1.5;
    if x < edge {
        return 0.0;
    }
    if y < 0.5 {
        return -drop;
    }
    let slope = 20f64.to_radians().tan();
    (-(x - edge) * slope).max(-drop)
}

pub fn cliff_with_bypass() -> Result<BuiltinWorld> {
    let hf = grid(-6.0, 14.0, -6.0, 8.0, cliff_with_bypass_height)?;
    let boxes = side_walls(-6.0, 14.0, -2.5, 4.5, -2.0, 1.5);
    Ok(BuiltinWorld {
        world: WorldModel::new("cliff_with_bypass", hf, boxes)?,
        start: Configuration::new(0.0, 0.0, 0.0),
        goal: [8.0, 0.0],
        success: SuccessRule::ReachGoal,
    })
}

/// Flat open ground, handy for smoke tests.
pub fn flat() -> Result<BuiltinWorld> {
    let hf = grid(-10.0, 10.0, -10.0, 10.0, |_, _| 0.0)?;
    Ok(BuiltinWorld {
        world: WorldModel::new("flat", hf, vec![])?,
        start: Configuration::new(0.0, 0.0, 0.0),
        goal: [4.0, 0.0],
        success: SuccessRule::ReachGoal,
    })
}

pub fn builtin_world(name: &str) -> Option<Result<BuiltinWorld>> {
    match name {
        "trench" => Some(trench()),
        "ramp" => Some(ramp()),
        "cliff_with_bypass" => Some(cliff_with_bypass()),
        "flat" => Some(flat()),
        _ => None,
    }
}

/// The three named scenario worlds.
pub fn builtin_worlds() -> Result<Vec<BuiltinWorld>> {
    BUILTIN_NAMES.iter().map(|n| builtin_world(n).expect("known name")).collect()
}
