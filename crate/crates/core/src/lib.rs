//! Nested named-entity recognition over a heterogeneous star graph.
//!
//! Text tokens and entity types are nodes of one graph; type nodes see the
//! whole sentence while text nodes see a local window plus every type node.
//! Each type then labels the sentence with its own BIOES layer under a
//! constrained CRF, and the per-type layers are decoded into nested spans.

pub mod encoder;
pub mod entities;
pub mod labeler;
pub mod model;
pub mod numerics;
pub mod stargraph;

use entities::{EntityError, TypeId};
use numerics::NumericsError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error("type {type_id}: {source}")]
    TypeDecode {
        type_id: TypeId,
        #[source]
        source: EntityError,
    },
    #[error("illegal gold transition {from} -> {to} at position {position}")]
    IllegalTransition { position: usize, from: String, to: String },
    #[error("{0}")]
    Config(String),
}
