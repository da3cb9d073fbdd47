//! Control and navigation testbed for a planar thrust-vectored electric rocket.

pub mod acceptance;
pub mod analysis;
pub mod control;
pub mod linmodel;
pub mod navigation;
pub mod plant;
pub mod plot;
pub mod riccati;
pub mod sim;
