//! One entry point per subcommand.

mod calibrate;
mod cv;
mod describe;
mod evaluate;
mod synth;

use anyhow::Result;

pub use calibrate::calibrate;
pub use cv::cv;
pub use describe::describe;
pub use evaluate::evaluate;
pub use synth::synth_validate;

use crate::config::RunConfig;
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Describe,
    Evaluate,
    Cv,
    Calibrate,
    SynthValidate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Describe => "describe",
            Command::Evaluate => "evaluate",
            Command::Cv => "cv",
            Command::Calibrate => "calibrate",
            Command::SynthValidate => "synth-validate",
        }
    }
}

pub fn run(command: Command, config: &RunConfig) -> Result<Report> {
    match command {
        Command::Describe => describe(config),
        Command::Evaluate => evaluate(config),
        Command::Cv => cv(config),
        Command::Calibrate => calibrate(config),
        Command::SynthValidate => synth_validate(config),
    }
}
