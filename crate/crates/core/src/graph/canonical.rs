//! The two generator specs shipped with the workbench.

use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::parse::parse_spec;
use crate::graph::spec::GeneratorSpec;

pub const WAV2LIP_FULL_TEXT: &str = include_str!("../../specs/wav2lip_full.gspec");
pub const WAV2LIP_TOY_TEXT: &str = include_str!("../../specs/wav2lip_toy.gspec");

pub fn canonical_names() -> Vec<&'static str> {
    alloc::vec!["wav2lip_full", "wav2lip_toy"]
}

/// Look up a shipped spec by name.
pub fn canonical(name: &str) -> Option<Result<GeneratorSpec>> {
    match name {
        "wav2lip_full" => Some(parse_spec(WAV2LIP_FULL_TEXT)),
        "wav2lip_toy" => Some(parse_spec(WAV2LIP_TOY_TEXT)),
        _ => None,
    }
}

pub fn wav2lip_full() -> GeneratorSpec {
    parse_spec(WAV2LIP_FULL_TEXT).expect("shipped spec parses")
}

pub fn wav2lip_toy() -> GeneratorSpec {
    parse_spec(WAV2LIP_TOY_TEXT).expect("shipped spec parses")
}
