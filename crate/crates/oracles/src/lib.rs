//! Reference implementations the gridsign test suites compare against.
//!
//! Nothing in here calls the gridsign encoder, COSE layer or crypto code.
//! CBOR goes through `ciborium`, COSE through `coset`, and signatures and
//! digests through `ring`. The only gridsign type used is [`CborValue`], as
//! the common data model for generated test corpora.

pub mod cbor;
pub mod cose;
pub mod strategy;
pub mod vectors;

pub use gridsign_core::CborValue;
