use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AmlError, AmssDescription, Level, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanSide {
    Left,
    Right,
}

/// DSP primitive and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    /// Zero the targets.
    Mask,
    /// Zero every vocabulary source that is not a target.
    MaskOthers,
    Gain { factor: f64 },
    Pan { side: PanSide, amount: f64 },
    Lowpass { cutoff_hz: f64 },
    Highpass { cutoff_hz: f64 },
    Reverb { decay_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Apply,
    Remove,
}

/// What to do to which stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationPlan {
    pub transform: Transform,
    pub targets: Vec<String>,
    pub direction: Direction,
}

impl ManipulationPlan {
    /// The same edit with `Direction::Apply`; removal tasks are produced by
    /// applying the effect and swapping input and target.
    pub fn forward(&self) -> ManipulationPlan {
        ManipulationPlan {
            direction: Direction::Apply,
            ..self.clone()
        }
    }
}

/// Numeric parameters behind the light/medium/heavy options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub lowpass_hz: BTreeMap<Level, f64>,
    pub highpass_hz: BTreeMap<Level, f64>,
    pub gain_increase: BTreeMap<Level, f64>,
    pub gain_decrease: BTreeMap<Level, f64>,
    pub pan_amount: BTreeMap<Level, f64>,
    pub reverb_decay_s: BTreeMap<Level, f64>,
}

fn levels(light: f64, medium: f64, heavy: f64) -> BTreeMap<Level, f64> {
    BTreeMap::from([
        (Level::Light, light),
        (Level::Medium, medium),
        (Level::Heavy, heavy),
    ])
}

impl Default for LevelTable {
    fn default() -> Self {
        LevelTable {
            lowpass_hz: levels(6000.0, 3000.0, 1500.0),
            highpass_hz: levels(200.0, 500.0, 1000.0),
            gain_increase: levels(1.25, 1.5, 2.0),
            gain_decrease: levels(1.0 / 1.25, 1.0 / 1.5, 1.0 / 2.0),
            pan_amount: levels(0.25, 0.5, 0.75),
            reverb_decay_s: levels(0.3, 0.6, 1.0),
        }
    }
}

impl LevelTable {
    pub fn from_json(text: &str) -> Result<Self, AmlError> {
        serde_json::from_str(text).map_err(|e| AmlError::Config(format!("level table: {e}")))
    }

    fn lookup(&self, task: Task, level: Level) -> Result<f64, AmlError> {
        let table = match task {
            Task::Lowpass => &self.lowpass_hz,
            Task::Highpass => &self.highpass_hz,
            Task::IncreaseVol => &self.gain_increase,
            Task::DecreaseVol => &self.gain_decrease,
            Task::PanLeft | Task::PanRight => &self.pan_amount,
            Task::Dereverb => &self.reverb_decay_s,
            Task::Separate | Task::Mute => unreachable!("masking tasks have no level"),
        };
        table
            .get(&level)
            .copied()
            .ok_or(AmlError::MissingLevelEntry { task, level })
    }
}

/// Maps a description to the DSP edit it denotes.
pub fn interpret(desc: &AmssDescription, table: &LevelTable) -> Result<ManipulationPlan, AmlError> {
    let transform = match desc.task {
        Task::Separate => Transform::MaskOthers,
        Task::Mute => Transform::Mask,
        Task::IncreaseVol | Task::DecreaseVol => Transform::Gain {
            factor: table.lookup(desc.task, desc.level)?,
        },
        Task::PanLeft => Transform::Pan {
            side: PanSide::Left,
            amount: table.lookup(desc.task, desc.level)?,
        },
        Task::PanRight => Transform::Pan {
            side: PanSide::Right,
            amount: table.lookup(desc.task, desc.level)?,
        },
        Task::Lowpass => Transform::Lowpass {
            cutoff_hz: table.lookup(desc.task, desc.level)?,
        },
        Task::Highpass => Transform::Highpass {
            cutoff_hz: table.lookup(desc.task, desc.level)?,
        },
        Task::Dereverb => Transform::Reverb {
            decay_s: table.lookup(desc.task, desc.level)?,
        },
    };
    let direction = if desc.task.is_removal() {
        Direction::Remove
    } else {
        Direction::Apply
    };
    Ok(ManipulationPlan {
        transform,
        targets: desc.targets.clone(),
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aml::{parse, Aml};

    #[test]
    fn table_one_rows() {
        let t = LevelTable::default();
        let p = interpret(&parse("separate vocals").unwrap(), &t).unwrap();
        assert_eq!(p.transform, Transform::MaskOthers);
        assert_eq!(p.targets, vec!["vocals"]);
        assert_eq!(p.direction, Direction::Apply);

        let p = interpret(&parse("remove reverb from drums").unwrap(), &t).unwrap();
        assert_eq!(p.transform, Transform::Reverb { decay_s: 0.6 });
        assert_eq!(p.targets, vec!["drums"]);
        assert_eq!(p.direction, Direction::Remove);

        let p = interpret(&parse("increase the heavy volume of bass").unwrap(), &t).unwrap();
        assert_eq!(p.transform, Transform::Gain { factor: 2.0 });
        assert_eq!(p.direction, Direction::Apply);
    }

    #[test]
    fn decrease_is_reciprocal_of_increase() {
        let t = LevelTable::default();
        for l in Level::ALL {
            assert_eq!(t.gain_decrease[&l], 1.0 / t.gain_increase[&l]);
        }
    }

    #[test]
    fn only_dereverb_removes() {
        let lang = Aml::default();
        let t = LevelTable::default();
        for q in lang.enumerate_queries().unwrap() {
            let d = lang.parse(&q).unwrap();
            let p = interpret(&d, &t).unwrap();
            assert_eq!(p.direction == Direction::Remove, d.task == Task::Dereverb, "{q}");
        }
    }

    #[test]
    fn missing_entry() {
        let mut t = LevelTable::default();
        t.lowpass_hz.remove(&Level::Heavy);
        let d = parse("apply heavy lowpass to bass").unwrap();
        assert_eq!(
            interpret(&d, &t),
            Err(AmlError::MissingLevelEntry {
                task: Task::Lowpass,
                level: Level::Heavy
            })
        );
    }

    #[test]
    fn level_table_json() {
        let t = LevelTable::default();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"medium\":3000.0"));
        assert_eq!(LevelTable::from_json(&text).unwrap(), t);
    }
}
