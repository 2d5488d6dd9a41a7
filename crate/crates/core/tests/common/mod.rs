#![allow(dead_code)]

use mcd_core::data::{synth_samples, BiTemporalSample, SynthSpec};
use mcd_core::Config;

/// A narrow network that trains in milliseconds on 32×32 pairs.
pub fn tiny_config() -> Config {
    let mut c = Config::default();
    for (k, v) in [
        ("k", "2"),
        ("stage_channels", "8,8,16,16"),
        ("blocks_per_stage", "1,1,1,1"),
        ("lora_r", "4"),
        ("lora_alpha", "8"),
        ("prompt_count", "2"),
        ("common_dim", "8"),
        ("batch", "2"),
        ("epochs", "2"),
    ] {
        c.set(k, v).unwrap();
    }
    c.validate().unwrap();
    c
}

pub fn tiny_data(count: usize, seed: u64) -> Vec<BiTemporalSample> {
    let spec = SynthSpec::parse(&format!("count={count},size=32,k=2,seed={seed}")).unwrap();
    synth_samples(&spec).unwrap().1
}
