//! Differentiable kernels with hand-written forward and backward passes.

pub mod attention;
pub mod checkpoint;
pub mod decoder;
pub mod gru;
pub mod mail;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod time_enc;

pub use attention::{attention_backward, attention_forward, AttnCache, AttnInputGrads, AttnParams, NeighborInput};
pub use decoder::{decode_link, decode_link_backward, DecoderCache, DecoderParams};
pub use gru::{gru_backward, gru_forward, GruCache, GruParams};
pub use mail::{combine_static, expand_mail, make_mail, make_raw_mail};
pub use optim::Adam;
pub use params::{ModelDims, ModelParams};
pub use tensor::Tensor;
pub use time_enc::{time_encode, time_encode_backward};
