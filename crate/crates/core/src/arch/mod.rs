//! Network assembly, attention and stabilization blocks, checkpoints.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod lss;
pub mod network;

pub use attention::{apply_gate, channel_attention, channel_attention_backward, CaParams};
pub use checkpoint::{parse_checkpoint, read_checkpoint, serialize_checkpoint, write_checkpoint};
pub use config::{ann_flops, Domain, LayerKind, LayerSpec, NetworkConfig, StageExtents};
pub use lss::{lss_filter, lss_filter_backward, LssParams};
pub use network::{argmax_rows, ForwardOptions, ForwardOutput, Mode, Network, Probes, SpikeRecord};
