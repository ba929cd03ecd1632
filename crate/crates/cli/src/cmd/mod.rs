pub mod ablate;
pub mod bench_time;
pub mod eval;
pub mod synth;
pub mod train;
