//! Extensions of the base model: higher-order memory and online updates.

pub mod inc;
pub mod mem;

pub use inc::{inc_from_fit, inc_init, inc_labels, update, IncState, StreamMode, UpdateRecord};
pub use mem::{decode_state, encode_state, index_set, mem_fit, transition_allowed, MemConfig};
