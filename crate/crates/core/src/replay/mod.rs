//! Experience storage: uniform and proportional prioritized replay, plus
//! N-step transition assembly.

mod buffers;
mod nstep;
mod persist;
mod sum_tree;
mod transition;

pub use buffers::{PrioritizedBatch, PrioritizedBuffer, PrioritizedConfig, PriorityIndex, ReplayBuffer};
pub use nstep::NStepAssembler;
pub use persist::{read_transition, write_transition};
pub use sum_tree::SumTree;
pub use transition::Transition;
