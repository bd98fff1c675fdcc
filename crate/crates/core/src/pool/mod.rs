//! Wound-level attention pooling head and its self-supervised training.

mod forward;
mod loss;
mod params;
mod train;

pub use forward::{
    attention_pool, backward_wound, forward_embed, forward_wound, sample_wound_tokens, TokenSet, WoundForward,
};
pub use loss::{ssl_loss, ssl_loss_and_grad, LossGrad, LossKind, LossParts, SslConfig};
pub use params::{HeadParams, HeadShape, Pooling};
pub use train::{
    batch_loss_and_grad, embed_containers, embed_image, embed_wound, per_dim_std, train_head, wound_pairs,
    HeadTraining, WoundPair,
};
