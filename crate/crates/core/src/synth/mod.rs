//! Ground-truth workloads: a declarative loop-nest spec, a trace generator
//! that runs it, and an oracle that derives the expected analysis results.

mod generate;
pub mod oracle;
pub mod random;
mod spec;
mod walk;

pub use generate::{generate_into, generate_trace, write_trace, GenerateError};
pub use oracle::{expected_results, Expected, ExpectedLoop, ExpectedReference};
pub use spec::{
    Item, LoopSpec, Noise, Perturbation, RefSpec, SpecError, ValidSpec, WorkloadSpec, DEFAULT_PERTURB_RANGE,
    SPEC_VERSION,
};
pub use walk::AddressOutOfRange;
