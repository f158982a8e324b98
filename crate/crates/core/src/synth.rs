//! Deterministic synthetic capture passes over a geo-tagged route.
//!
//! Each location owns a base edge layout derived only from `(seed, location)`:
//! a handful of straight edge segments, each labelled with one or two strong
//! classes, plus sub-threshold clutter. A capture pass perturbs that layout
//! with probability, pixel and GPS noise drawn from ChaCha streams keyed by
//! `(seed, location, pass, pixel)`, so any pass can be regenerated exactly.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{EdgeFeatureMap, EdgePixel};
use crate::geoeval::EARTH_RADIUS_M;
use crate::index::{cosine_distance_slices, GeoTag};

const BASE_PASS: u64 = u64::MAX;
const GPS_STREAM: u64 = u64::MAX;
const SIGNATURE_GRID: usize = 4;
/// Minimum pairwise signature distance between distinct base layouts.
const MIN_LAYOUT_DISTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Generic,
    /// Two locations share the same multiset of class vectors with
    /// horizontally mirrored positions.
    SpatialTwin,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CaptureNoise {
    /// Std-dev of additive probability noise.
    pub prob_sigma: f64,
    /// Std-dev of pixel position jitter, in pixels.
    pub pixel_sigma: f64,
    /// Std-dev of GPS error per axis, in meters.
    pub gps_sigma_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_locations: usize,
    pub start: GeoTag,
    /// Initial heading, degrees clockwise from north.
    pub bearing_deg: f64,
    /// Heading change applied after every step.
    pub turn_deg: f64,
    pub step_m: f64,
    pub width: u32,
    pub height: u32,
    pub num_classes: usize,
    /// Expected number of stored pixels per image.
    pub edge_density: usize,
    pub noise: CaptureNoise,
    pub scenario: Scenario,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_locations: 200,
            start: GeoTag::new(40.7608, -111.8910).expect("valid start"),
            bearing_deg: 90.0,
            turn_deg: 0.0,
            step_m: 10.0,
            width: 160,
            height: 120,
            num_classes: 19,
            edge_density: 300,
            noise: CaptureNoise::default(),
            scenario: Scenario::Generic,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_locations < 2 {
            return bad(format!("need at least 2 locations, got {}", self.num_locations));
        }
        if self.width < 2 || self.height < 2 {
            return bad(format!("image size {}x{} too small", self.width, self.height));
        }
        if self.num_classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.edge_density == 0 {
            return bad("edge density must be positive".into());
        }
        let n = &self.noise;
        for (name, v) in [
            ("probability", n.prob_sigma),
            ("pixel", n.pixel_sigma),
            ("gps", n.gps_sigma_m),
            ("step", self.step_m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} parameter must be finite and >= 0, got {v}"));
            }
        }
        if !self.bearing_deg.is_finite() || !self.turn_deg.is_finite() {
            return bad("route bearing and turn must be finite".into());
        }
        Ok(())
    }

    /// The designated twin pair in the spatial-twin scenario.
    pub fn twin_pair(&self) -> Option<(usize, usize)> {
        match self.scenario {
            Scenario::SpatialTwin => Some((0, self.num_locations / 2)),
            Scenario::Generic => None,
        }
    }

    pub fn image_id(location: usize) -> String {
        format!("loc{location:05}")
    }
}

/// Noise-free route positions, one per location.
pub fn route(cfg: &SynthConfig) -> Vec<GeoTag> {
    let mut out = Vec::with_capacity(cfg.num_locations);
    let mut here = cfg.start;
    let mut heading = cfg.bearing_deg;
    for _ in 0..cfg.num_locations {
        out.push(here);
        here = destination(here, heading, cfg.step_m);
        heading += cfg.turn_deg;
    }
    out
}

/// Point reached by travelling `meters` from `from` along `bearing_deg`.
pub fn destination(from: GeoTag, bearing_deg: f64, meters: f64) -> GeoTag {
    let delta = meters / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let lat1 = from.lat().to_radians();
    let lon1 = from.lon().to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).asin();
    let lon2 = lon1
        + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    geotag_clamped(lat2.to_degrees(), wrap_longitude(lon2.to_degrees()))
}

fn wrap_longitude(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped == -180.0 && lon > 0.0 {
        180.0
    } else {
        wrapped
    }
}

fn geotag_clamped(lat: f64, lon: f64) -> GeoTag {
    GeoTag::new(lat.clamp(-90.0, 90.0), lon.clamp(-180.0, 180.0)).expect("clamped coordinates")
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha stream keyed by `(seed, location, pass)` at stream position `pixel`.
fn keyed_rng(seed: u64, location: u64, pass: u64, pixel: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let words = [
        splitmix(&mut state) ^ location.wrapping_mul(0xD6E8_FEB8_6659_FD93),
        splitmix(&mut state) ^ pass.wrapping_mul(0xA076_1D64_78BD_642F),
        splitmix(&mut state),
        splitmix(&mut state),
    ];
    let mut mix = words[0] ^ words[1].rotate_left(17);
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&(w ^ splitmix(&mut mix)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(pixel);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Base pixel layout of `location`, before any capture noise.
pub fn base_layout(cfg: &SynthConfig, location: usize) -> Vec<EdgePixel> {
    match cfg.twin_pair() {
        Some((a, b)) if location == b => mirrored(cfg, &layout_from_seed(cfg, a, true)),
        Some((a, _)) if location == a => layout_from_seed(cfg, a, true),
        _ => layout_from_seed(cfg, location, false),
    }
}

fn mirrored(cfg: &SynthConfig, pixels: &[EdgePixel]) -> Vec<EdgePixel> {
    pixels
        .iter()
        .map(|p| EdgePixel {
            x: cfg.width - 1 - p.x,
            y: p.y,
            probs: p.probs.clone(),
        })
        .collect()
}

fn layout_from_seed(cfg: &SynthConfig, location: usize, left_half: bool) -> Vec<EdgePixel> {
    let mut rng = keyed_rng(cfg.seed, location as u64, BASE_PASS, 0);
    let (w, h, k) = (cfg.width as f64, cfg.height as f64, cfg.num_classes);
    let x_max = if left_half { 0.45 * w } else { w };
    let segments = rng.random_range(3..=7usize);
    let clutter = cfg.edge_density / 10;
    let per_segment = ((cfg.edge_density - clutter) / segments).max(1);

    let mut seen = HashSet::new();
    let mut pixels = Vec::with_capacity(cfg.edge_density);
    for _ in 0..segments {
        let p0 = (rng.random_range(0.0..x_max), rng.random_range(0.0..h));
        let p1 = (rng.random_range(0.0..x_max), rng.random_range(0.0..h));
        let primary = rng.random_range(0..k);
        let secondary = rng.random_bool(0.5).then(|| (primary + rng.random_range(1..k)) % k);
        let strong = rng.random_range(0.6..1.0);
        let second = rng.random_range(0.5..0.9);
        let background: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.1)).collect();
        let mut placed = 0;
        for _ in 0..per_segment * 4 {
            if placed == per_segment {
                break;
            }
            let t: f64 = rng.random();
            let x = (p0.0 + t * (p1.0 - p0.0) + rng.random_range(-1.0..1.0)).clamp(0.0, x_max - 1.0);
            let y = (p0.1 + t * (p1.1 - p0.1) + rng.random_range(-1.0..1.0)).clamp(0.0, h - 1.0);
            let (x, y) = (x.round() as u32, y.round() as u32);
            if !seen.insert((x, y)) {
                continue;
            }
            let mut probs: Vec<f32> = background
                .iter()
                .map(|b| (b + rng.random_range(0.0..0.03)) as f32)
                .collect();
            probs[primary] = (strong + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0) as f32;
            if let Some(c) = secondary {
                probs[c] = (second + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0) as f32;
            }
            pixels.push(EdgePixel { x, y, probs });
            placed += 1;
        }
    }
    let mut attempts = 0;
    let mut placed = 0;
    while placed < clutter && attempts < clutter * 4 {
        attempts += 1;
        let x = rng.random_range(0.0..x_max).floor() as u32;
        let y = rng.random_range(0..cfg.height);
        if !seen.insert((x, y)) {
            continue;
        }
        let probs = (0..k).map(|_| rng.random_range(0.0..0.4) as f32).collect();
        pixels.push(EdgePixel { x, y, probs });
        placed += 1;
    }
    pixels
}

fn perturb(cfg: &SynthConfig, location: usize, pass: u64, base: &[EdgePixel]) -> Vec<EdgePixel> {
    let n = &cfg.noise;
    let mut seen = HashSet::with_capacity(base.len());
    let mut out = Vec::with_capacity(base.len());
    for (i, p) in base.iter().enumerate() {
        let mut rng = keyed_rng(cfg.seed, location as u64, pass, i as u64);
        let dx = (n.pixel_sigma * gauss(&mut rng)).round();
        let dy = (n.pixel_sigma * gauss(&mut rng)).round();
        let x = (p.x as f64 + dx).clamp(0.0, (cfg.width - 1) as f64) as u32;
        let y = (p.y as f64 + dy).clamp(0.0, (cfg.height - 1) as f64) as u32;
        if !seen.insert((x, y)) {
            continue;
        }
        let probs = p
            .probs
            .iter()
            .map(|&v| (v as f64 + n.prob_sigma * gauss(&mut rng)).clamp(0.0, 1.0) as f32)
            .collect();
        out.push(EdgePixel { x, y, probs });
    }
    out
}

fn jitter_geotag(cfg: &SynthConfig, location: usize, pass: u64, tag: GeoTag) -> GeoTag {
    let mut rng = keyed_rng(cfg.seed, location as u64, pass, GPS_STREAM);
    let north = cfg.noise.gps_sigma_m * gauss(&mut rng);
    let east = cfg.noise.gps_sigma_m * gauss(&mut rng);
    let dlat = (north / EARTH_RADIUS_M).to_degrees();
    let dlon = (east / (EARTH_RADIUS_M * tag.lat().to_radians().cos().max(1e-9))).to_degrees();
    geotag_clamped(tag.lat() + dlat, wrap_longitude(tag.lon() + dlon))
}

/// Codebook-free layout signature: per-cell class mass on a coarse grid.
fn layout_signature(cfg: &SynthConfig, pixels: &[EdgePixel]) -> Vec<f64> {
    let k = cfg.num_classes;
    let mut sig = vec![0.0; SIGNATURE_GRID * SIGNATURE_GRID * k];
    for p in pixels {
        let gx = p.x as usize * SIGNATURE_GRID / cfg.width as usize;
        let gy = p.y as usize * SIGNATURE_GRID / cfg.height as usize;
        let cell = (gy * SIGNATURE_GRID + gx) * k;
        for (s, &v) in sig[cell..cell + k].iter_mut().zip(&p.probs) {
            *s += v as f64;
        }
    }
    sig
}

fn check_distinct_layouts(cfg: &SynthConfig, layouts: &[Vec<EdgePixel>]) -> Result<()> {
    let sigs: Vec<Vec<f64>> = layouts.iter().map(|l| layout_signature(cfg, l)).collect();
    let twins = cfg.twin_pair();
    let clash = (0..sigs.len()).into_par_iter().find_map_first(|i| {
        (i + 1..sigs.len()).find_map(|j| {
            if twins == Some((i, j)) {
                return None;
            }
            let d = cosine_distance_slices(&sigs[i], &sigs[j]);
            (d <= MIN_LAYOUT_DISTANCE).then_some((i, j, d))
        })
    });
    match clash {
        Some((i, j, d)) => Err(Error::Input(format!(
            "synthetic locations {i} and {j} have near-identical layouts (distance {d:.2e})"
        ))),
        None => Ok(()),
    }
}

/// One capture pass over every location, in location order.
pub fn generate_pass(cfg: &SynthConfig, pass_id: u32) -> Result<Vec<(EdgeFeatureMap, GeoTag)>> {
    cfg.validate()?;
    let layouts: Vec<Vec<EdgePixel>> = (0..cfg.num_locations)
        .into_par_iter()
        .map(|l| base_layout(cfg, l))
        .collect();
    check_distinct_layouts(cfg, &layouts)?;
    let route = route(cfg);
    layouts
        .into_par_iter()
        .enumerate()
        .map(|(l, base)| {
            let mut pixels = perturb(cfg, l, pass_id as u64, &base);
            pixels.sort_by_key(|p| (p.y, p.x));
            let map = EdgeFeatureMap::new(
                SynthConfig::image_id(l),
                cfg.width,
                cfg.height,
                cfg.num_classes,
                pixels,
            )?;
            Ok((map, jitter_geotag(cfg, l, pass_id as u64, route[l])))
        })
        .collect()
}
