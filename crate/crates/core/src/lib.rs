//! Fibre orientation distributions from scattered-light-imaging patterns,
//! estimated on the HEALPix sphere by a per-pattern solver or a spherical
//! graph U-Net trained without labels.

pub mod error;
pub mod estimation;
pub mod forward;
pub mod harness;
pub mod healpix;
pub mod net;
pub mod projection;
pub mod sh;
pub mod signal;
