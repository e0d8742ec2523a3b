//! Score-based SDE models between molecular topologies and 3D conformations.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: reverse-mode differentiation, Adam, checkpoints
//! * [`moldata`]: molecule types, featurization, masking, record format
//! * [`geom3d`]: local frames, projection, radial bases, Kabsch alignment
//! * [`sde`]: noise schedules, perturbation kernels, samplers
//! * [`scorenets`]: encoders and the two score networks
//! * [`objectives`]: denoising and contrastive losses, training
//! * [`pipeline`], [`metrics`], [`synthetic`], [`config`]: the pieces the CLI drives

pub mod autodiff;
pub mod config;
pub mod geom3d;
pub mod metrics;
pub mod moldata;
pub mod objectives;
pub mod pipeline;
pub mod scorenets;
pub mod sde;
pub mod synthetic;
