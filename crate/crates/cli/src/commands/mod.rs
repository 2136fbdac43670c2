pub mod bench;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod traj;
pub mod train;
