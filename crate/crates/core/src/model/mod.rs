//! Forward computation of attention blocks and models.

mod attention;
mod block;
mod config;
mod jacobian;

pub use attention::{
    attention_head_dot, attention_head_l2, attention_head_scsa, dot_attention_probs, l2_attention_probs,
    multi_head_attention, scsa_layer,
};
pub use block::{attention_block, backbone, center_norm, center_norm_factor, ffn, forward};
pub use config::{sample_bounded_input, HeadWeights, LayerWeights, ModelConfig, ScsaParams, Variant};
pub use jacobian::{analytic_attention_jacobian, attention_map, bilinear_form, AttentionJacobian};
