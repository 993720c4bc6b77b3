//! Concrete mechanical systems.

pub mod pendulum;

pub use pendulum::{
    constrained_pendulum_energies, pendulum_constrained, pendulum_energies, pendulum_minimal, EnergySample,
    PendulumConstrained, PendulumMinimal, PendulumParams,
};
