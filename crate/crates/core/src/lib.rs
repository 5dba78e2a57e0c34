//! Training engine for networks with asymmetric Hebbian feedback (BP, FRFB,
//! URFB), a linear-dynamics integrator, and simulators for the local
//! error-signal circuits.

pub mod circuits;
pub mod data;
pub mod feedback;
pub mod layers;
pub mod lindyn;
pub mod netspec;
pub mod tensor;
