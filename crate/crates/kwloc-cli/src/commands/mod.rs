pub mod compare;
pub mod eval_cmd;
pub mod gradcheck_cmd;
pub mod localise;
pub mod synth;
pub mod train;

use crate::{validation, CliResult};
use kwloc_core::model::Preset;

pub fn parse_preset(s: &str) -> CliResult<Preset> {
    match s {
        "desk" => Ok(Preset::Desk),
        "paper" => Ok(Preset::Paper),
        other => Err(validation(format!(
            "unknown preset '{other}' (expected desk | paper)"
        ))),
    }
}
