//! The versioned story graph: story → scene → shot.

#[doc(hidden)]
pub mod fixtures;
mod mutation;
mod session;
mod types;
mod validate;
mod version;

pub use mutation::{apply_mutation, diff, Applied, Mutation, Patch, ShotSlot, StoryError};
pub use session::{Commit, ProjectSession, SessionError};
pub use types::*;
pub use validate::{check_segments, check_spans, validate, Invariant, InvariantViolation};
pub use version::duplicate_version;
