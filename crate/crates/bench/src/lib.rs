//! Fixtures shared by the criterion benches.

use ihn_core::datagen::{synth_static, texture::value_noise, SynthParams};
use ihn_core::datagen::WarpPair;
use ihn_core::rng::SplitMix64;

/// A deterministic static pair of the given size.
pub fn pair(size: usize, rho: f64, seed: u64) -> WarpPair {
    let mut rng = SplitMix64::new(seed);
    let params = SynthParams { size, rho };
    let base = value_noise(size + 2 * rho.ceil() as usize + 8, 8.0, 4, &mut rng);
    synth_static(&base, params, &mut rng).expect("synthesis")
}
