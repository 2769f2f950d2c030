//! Architecture descriptions and network builders for the residual, dense
//! and dual path families.

mod network;
mod presets;
mod spec;
mod verify;

pub use network::{
    BlockForm, BnLayer, ConvLayer, DualPathState, Init, MicroBlock, Mode, Network, ParamId, Parameter, PreActConv,
    Session, Stage, Transition,
};
pub use presets::{preset, preset_text, reference, Reference, PRESET_NAMES, PUBLISHED};
pub use spec::{
    parse_spec, ArchSpec, ClassifierSpec, Family, Pooling, StageSpec, StemConv, StemPool, DEFAULT_DENSE_INIT,
    INPUT_CHANNELS,
};
pub use verify::{compare_block_forms, compare_network_forms, dual_vs_split_suite, FormComparison, FormReport, DPN92_SAMPLES};
