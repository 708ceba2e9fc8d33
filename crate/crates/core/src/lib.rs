//! Conservative finite-volume simulation of the minimal Keller-Segel system
//! `u_t = Lap u - div(u grad v)`, `v_t = Lap v - v + u` with zero-flux
//! boundaries on circular sectors and discs.

pub mod config;
pub mod experiments;
pub mod fields;
pub mod geometry;
pub mod graph;
pub mod initial;
pub mod linalg;
pub mod radial1d;
pub mod scheme;
pub mod solver2d;
