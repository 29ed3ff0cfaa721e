//! Measure representations and the distances between them.

mod empirical;
mod grid;
mod mixture;
mod net;

pub use empirical::EmpiricalMeasure;
pub use grid::{oscillation, sup_distance, tv_distance, tv_norm_masses, GridDensity, Support};
pub use mixture::{Component, GaussianMixture, MixtureSampler};
pub use net::{build_net, build_net_capped, net_distance, FunctionNet, NetIntegrable, DEFAULT_NET_CAP};
