//! Vision transformers with patchify and convolutional stems, their exact
//! complexity accounting, the training recipe, and optimizability metrics.

pub mod augment;
pub mod complexity;
pub mod error;
pub mod experiment;
pub mod models;
pub mod optim;
pub mod stability;
pub mod tensor;

pub use error::{Error, Result};

/// CSV writer with `,` separators and LF line endings.
pub fn csv_writer<W: std::io::Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}
