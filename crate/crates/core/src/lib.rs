pub mod config;
pub mod error;
pub mod fault;
pub mod filter;
pub mod lie;
pub mod metrics;
pub mod multirobot;
pub mod oracle;
pub mod sim;
pub mod slam2d;
pub mod slam3d;
pub mod utias;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/lie-groups.md")]
    struct LieGroups;
    #[doc = include_str!("../../../book/src/invariant-error.md")]
    struct InvariantError;
    #[doc = include_str!("../../../book/src/filter-engine.md")]
    struct FilterEngine;
    #[doc = include_str!("../../../book/src/consistency.md")]
    struct Consistency;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/multi-robot.md")]
    struct MultiRobot;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../docs/config.md")]
    struct Config;
    #[doc = include_str!("../../../docs/dataset-format.md")]
    struct DatasetFormat;
}
pub use filter::ErrorStateModel;

use std::fmt;
use std::str::FromStr;

/// Which error definition a filter uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Invariant error, corrections applied through the `SE_{1+K}` exponential.
    Proposed,
    /// Plain difference of positions and headings.
    Standard,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Proposed, Variant::Standard];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Standard => "standard",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" | "invariant" => Ok(Variant::Proposed),
            "standard" | "std" => Ok(Variant::Standard),
            other => Err(Error::InvalidInput(format!("unknown filter variant `{other}`"))),
        }
    }
}
