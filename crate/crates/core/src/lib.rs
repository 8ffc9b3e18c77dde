//! Mapping of quantum circuits onto a tiled ion-trap fabric: dependency
//! analysis, scheduling, placement, routing, and fabric sizing.

pub mod commands;
pub mod config;
pub mod emulator;
pub mod fabric;
pub mod flow;
pub mod qasm;
pub mod placer;
pub mod qidg;
pub mod router;
pub mod scheduler;
pub mod sizer;
