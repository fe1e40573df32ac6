//! Learning-based funnel control for control-affine systems.
//!
//! The crate learns unknown drift dynamics from noisy samples with
//! per-dimension Gaussian process regression ([`gp`]), calibrates uniform
//! error envelopes around the learned model ([`bounds`]), synthesizes a
//! performance funnel from a start box to a goal box ([`funnel`]), and wraps
//! everything into a prescribed-performance feedback law whose closed loop
//! can be simulated and audited.

pub mod bounds;
pub mod controller;
pub mod funnel;
pub mod gp;
pub mod sim;

pub use bounds::{BoundKind, BoundSet, CoverageReport, Envelope, InfoGain, RkhsBound};
pub use controller::{ControlLaw, InputMap};
pub use sim::{Plant, SimConfig, Trajectory};
pub use funnel::{EtaPolicy, FunnelDim, FunnelSpec, SynthesisResult, TransformedError};
pub use gp::{Dataset, GpModel, KernelParams, SeKernel, StateBox};
