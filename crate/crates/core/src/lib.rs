//! Wideband 3D radio imaging through a reconfigurable intelligent surface.
//!
//! The pipeline: simulate pilot measurements through the RIS ([`channel`]),
//! recover the per-element equivalent channel response ([`ecr`]), then form a
//! 3D image either with the FFT-based synthetic-aperture method ([`saa`]) or a
//! sparse solver ([`cs`]). [`resolution`] holds the analytical limits and PSF
//! measurement; [`harness`] has configs, presets, metrics and file formats.

pub mod channel;
pub mod cs;
pub mod ecr;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod harness;
pub mod phase;
pub mod resolution;
pub mod saa;

pub use error::{Error, Result};
pub use geometry::{ComplexVolume, Point3, Scatterer, Scene, SystemConfig, VoxelGrid, C64};
