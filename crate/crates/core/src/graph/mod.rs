//! Generator graphs: spec types, the text format, canonical architectures,
//! weight building, forward execution, and computation accounting.

mod aux;
mod build;
mod canonical;
mod count;
mod parse;
mod spec;

pub use aux::{
    build_discriminator, build_sync_expert, normalize_rows, normalize_rows_traced, ConvStack,
    Discriminator, StackLayer, SyncExpert, EMBED_DIM,
};
pub use build::{
    apply_act, apply_stat_updates, build_model, run_generator, BnState, BuiltModel, GenExec,
    LayerVars, LayerWeights, ParamRole, RunOut, TapeExec, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE,
};
pub use canonical::{canonical, canonical_names, wav2lip_full, wav2lip_toy, WAV2LIP_FULL_TEXT, WAV2LIP_TOY_TEXT};
pub use count::{count_macs, count_params, layer_macs, layer_params, per_layer};
pub use parse::parse_spec;
pub use spec::{
    Act, Block, GeneratorSpec, LayerKind, LayerSpec, Norm, ResolvedLayer, ResolvedModel, Section,
};
