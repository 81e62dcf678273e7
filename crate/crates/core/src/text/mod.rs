//! Deterministic tokenization and the micro-transformer text encoder.

pub mod encoder;
pub mod vocab;

pub use encoder::{encode, encoder_param_count, EncoderConfig, EncoderOutput, Pooling};
pub use vocab::{tokenize, TokenSequence, Vocab, CLS_ID, PAD_ID, RESERVED_TOKENS, UNK_ID};
