pub mod diffraction;
pub mod geometry;
pub mod rng;
pub mod arrayproc;
pub mod cvae;
pub mod dataset;
pub mod bench;
