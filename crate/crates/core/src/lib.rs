//! Class-prototype selection and prototype-based re-identification retrieval.
//!
//! The gallery is an [`store::EmbeddingSet`] of labelled vectors. A selector
//! summarizes each class by a few prototypes ([`prototypes::PrototypeSet`]);
//! queries are ranked against those prototypes and scored with CMC and mAP
//! ([`retrieval`]). Besides the classic selectors in [`selectors`], [`model`]
//! provides a small transformer decoder that generates prototypes from a
//! class's gallery vectors. [`bench`] ties everything into reproducible
//! experiments on synthetic or loaded data.

pub mod bench;
pub mod error;
pub mod model;
pub mod prototypes;
pub mod retrieval;
pub mod selectors;
pub mod store;
pub mod vector;

pub use error::Error;
