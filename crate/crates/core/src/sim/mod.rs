//! Dense, seedable statevector engine.

mod layout;
mod rng;
mod statevector;

pub use layout::RegisterLayout;
pub use rng::RandomStream;
pub use statevector::{GateCount, Statevector, MAX_QUBITS, ZERO_BRANCH};
