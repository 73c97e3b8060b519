//! Audio Manipulation Language: a small finite context-free language for
//! describing which sources of a mixture to edit and how.
//!
//! A query such as `apply medium lowpass to vocals, drums` is parsed into an
//! [`AmssDescription`], which [`interpret`] turns into a [`ManipulationPlan`]
//! that the DSP engine can execute.

mod grammar;
mod parse;
mod plan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grammar::{Grammar, Production, Symbol};
pub use parse::{generate_random, parse, render, tokenize, Aml};
pub use plan::{interpret, Direction, LevelTable, ManipulationPlan, PanSide, Transform};

/// Default source vocabulary.
pub const DEFAULT_SOURCES: [&str; 3] = ["vocals", "drums", "bass"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmlError {
    #[error("unknown word {token:?} at token {position}")]
    UnknownWord { token: String, position: usize },
    #[error("syntax error at token {position}: expected one of [{}], got {got:?}", expected.join(", "))]
    SyntaxError {
        expected: Vec<String>,
        got: String,
        position: usize,
    },
    #[error("unknown source {0:?}")]
    UnknownSource(String),
    #[error("source {0:?} listed more than once")]
    DuplicateSource(String),
    #[error("query {0:?} does not name a task")]
    MissingTask(String),
    #[error("query {text:?} has {count} derivations")]
    Ambiguous { text: String, count: usize },
    #[error("grammar is not finite: non-terminal <{0}> is recursive")]
    GrammarNotFinite(String),
    #[error("grammar references undefined non-terminal <{0}>")]
    UndefinedSymbol(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("level table has no entry for {task} at level {level}")]
    MissingLevelEntry { task: Task, level: Level },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskClass {
    VolumeControl,
    VolumeControlMulti,
    Filter,
    Delay,
}

/// The nine manipulation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Separate,
    Mute,
    IncreaseVol,
    DecreaseVol,
    PanLeft,
    PanRight,
    Lowpass,
    Highpass,
    Dereverb,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Separate,
        Task::Mute,
        Task::IncreaseVol,
        Task::DecreaseVol,
        Task::PanLeft,
        Task::PanRight,
        Task::Lowpass,
        Task::Highpass,
        Task::Dereverb,
    ];

    pub fn class(self) -> TaskClass {
        match self {
            Task::Separate | Task::Mute | Task::IncreaseVol | Task::DecreaseVol => {
                TaskClass::VolumeControl
            }
            Task::PanLeft | Task::PanRight => TaskClass::VolumeControlMulti,
            Task::Lowpass | Task::Highpass => TaskClass::Filter,
            Task::Dereverb => TaskClass::Delay,
        }
    }

    /// Whether the query can carry a light/medium/heavy option.
    pub fn is_leveled(self) -> bool {
        !matches!(self, Task::Separate | Task::Mute)
    }

    /// Tasks whose training triples are produced by applying the effect and
    /// swapping input and target.
    pub fn is_removal(self) -> bool {
        self == Task::Dereverb
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Separate => "separate",
            Task::Mute => "mute",
            Task::IncreaseVol => "increase-vol",
            Task::DecreaseVol => "decrease-vol",
            Task::PanLeft => "pan-left",
            Task::PanRight => "pan-right",
            Task::Lowpass => "lowpass",
            Task::Highpass => "highpass",
            Task::Dereverb => "dereverb",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = AmlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let alias = match key.as_str() {
            "increase" | "increase-volume" => "increase-vol",
            "decrease" | "decrease-volume" => "decrease-vol",
            other => other,
        };
        Task::ALL
            .into_iter()
            .find(|t| t.name() == alias)
            .ok_or_else(|| AmlError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Light,
    #[default]
    Medium,
    Heavy,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Light, Level::Medium, Level::Heavy];

    pub fn word(self) -> &'static str {
        match self {
            Level::Light => "light",
            Level::Medium => "medium",
            Level::Heavy => "heavy",
        }
    }

    pub fn from_word(word: &str) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.word() == word)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// Parsed query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AmssDescription {
    pub task_class: TaskClass,
    pub task: Task,
    pub level: Level,
    /// Target sources in query order.
    pub targets: Vec<String>,
}

impl AmssDescription {
    /// Builds a description, normalising the level of tasks that take no option to `Medium`.
    pub fn new<S: Into<String>>(
        task: Task,
        level: Level,
        targets: impl IntoIterator<Item = S>,
    ) -> Result<Self, AmlError> {
        let targets: Vec<String> = targets.into_iter().map(Into::into).collect();
        let mut seen = std::collections::HashSet::new();
        for t in &targets {
            if !seen.insert(t.as_str()) {
                return Err(AmlError::DuplicateSource(t.clone()));
            }
        }
        if targets.is_empty() {
            return Err(AmlError::SyntaxError {
                expected: vec!["source".into()],
                got: "end of input".into(),
                position: 0,
            });
        }
        Ok(AmssDescription {
            task_class: task.class(),
            task,
            level: if task.is_leveled() { level } else { Level::Medium },
            targets,
        })
    }

    /// Checks targets against a source vocabulary.
    pub fn check_sources<S: AsRef<str>>(&self, vocabulary: &[S]) -> Result<(), AmlError> {
        for t in &self.targets {
            if !vocabulary.iter().any(|v| v.as_ref() == t) {
                return Err(AmlError::UnknownSource(t.clone()));
            }
        }
        Ok(())
    }
}
