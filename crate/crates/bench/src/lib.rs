//! Shared fixtures for the criterion benchmarks.

use std::collections::HashMap;

use vlase_core::synth::{generate_pass, CaptureNoise, SynthConfig};
use vlase_core::{EdgeFeatureMap, GeoTag};

/// A small noisy synthetic pass of `locations` images with their geotags.
pub fn synthetic_pass(locations: usize, seed: u64, pass: u32) -> (Vec<EdgeFeatureMap>, HashMap<String, GeoTag>) {
    let cfg = SynthConfig {
        seed,
        num_locations: locations,
        noise: CaptureNoise {
            prob_sigma: 0.02,
            pixel_sigma: 1.0,
            gps_sigma_m: 1.0,
        },
        ..SynthConfig::default()
    };
    let pass = generate_pass(&cfg, pass).expect("valid synthetic config");
    let tags = pass.iter().map(|(m, t)| (m.image_id().to_owned(), *t)).collect();
    (pass.into_iter().map(|(m, _)| m).collect(), tags)
}
