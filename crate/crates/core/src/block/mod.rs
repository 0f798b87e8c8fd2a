//! The UniFormer block: DPE, MHRA (local, global or windowed) and FFN, each
//! wrapped in a residual connection.

mod config;
mod forward;
mod ops;
pub mod reference;

pub use config::{BlockConfig, BlockType};
pub use forward::{uniformer_block, uniformer_block_with, BlockParts};
pub use ops::{
    affinity_weight, attention, dpe, ffn, from_tokens, global_mhra, init_block, local_mhra, to_tokens,
    window_attention, window_mhra, Attention, Grid,
};
