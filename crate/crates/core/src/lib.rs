//! Mass-action chemical reaction networks as ODE systems: simulation,
//! periodic-orbit search, Floquet analysis relative to stoichiometry classes,
//! and the construction that extends an oscillating network by reversible
//! reactions on new species while keeping a stable orbit.

pub mod inheritance;
pub mod kinetics;
pub mod model;
pub mod odeint;
pub mod orbit;
pub mod stoich;

pub use model::{parse_network, serialize_network, Network};

#[cfg(test)]
pub(crate) mod testing;
