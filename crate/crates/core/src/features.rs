//! Semantic edge feature maps and their conversion into augmented features.
//!
//! A map holds, for each edge pixel, the K per-class boundary probabilities
//! produced by an upstream multi-label edge detector. Features are built by
//! thresholding on the kept classes, projecting onto a [`ClassMask`] and
//! appending the normalized pixel position `[x / W, y / H]`.

use std::collections::HashSet;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Class names in Cityscapes-19 training-id order.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic-light",
    "traffic-sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// Number of static scene-structure classes (road through sky).
pub const NUM_STATIC_CLASSES: usize = 11;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.1;

const BUILDING: usize = 2;
const VEGETATION: usize = 8;
const SKY: usize = 10;

/// One edge pixel: column `x`, row `y` and its K class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePixel {
    pub x: u32,
    pub y: u32,
    pub probs: Vec<f32>,
}

/// Sparse multi-label semantic edge probabilities for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureMap {
    image_id: String,
    width: u32,
    height: u32,
    num_classes: usize,
    pixels: Vec<EdgePixel>,
}

impl EdgeFeatureMap {
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        num_classes: usize,
        pixels: Vec<EdgePixel>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if width == 0 || height == 0 {
            return Err(Error::Input(format!(
                "{image_id}: image size must be positive, got {width}x{height}"
            )));
        }
        if num_classes == 0 {
            return Err(Error::Input(format!("{image_id}: num_classes must be positive")));
        }
        let mut seen = HashSet::with_capacity(pixels.len());
        for (i, p) in pixels.iter().enumerate() {
            if p.x >= width || p.y >= height {
                return Err(Error::Input(format!(
                    "{image_id}: pixel {i} at ({}, {}) outside {width}x{height}",
                    p.x, p.y
                )));
            }
            if p.probs.len() != num_classes {
                return Err(Error::Input(format!(
                    "{image_id}: pixel {i} has {} probabilities, expected {num_classes}",
                    p.probs.len()
                )));
            }
            if let Some(bad) = p.probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Input(format!(
                    "{image_id}: pixel {i} probability {bad} outside [0, 1]"
                )));
            }
            if !seen.insert((p.x, p.y)) {
                return Err(Error::Input(format!(
                    "{image_id}: duplicate pixel ({}, {})",
                    p.x, p.y
                )));
            }
        }
        Ok(Self {
            image_id,
            width,
            height,
            num_classes,
            pixels,
        })
    }

    /// Converts a dense row-major `H x W x K` probability volume, keeping the
    /// pixels whose largest probability is at least `min_prob`.
    pub fn from_dense(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        num_classes: usize,
        data: &[f32],
        min_prob: f32,
    ) -> Result<Self> {
        let expected = width as usize * height as usize * num_classes;
        if data.len() != expected {
            return Err(Error::Input(format!(
                "dense map has {} values, expected {expected}",
                data.len()
            )));
        }
        let mut pixels = Vec::new();
        if num_classes > 0 {
            for (i, probs) in data.chunks_exact(num_classes).enumerate() {
                if probs.iter().any(|&p| p >= min_prob) {
                    pixels.push(EdgePixel {
                        x: (i % width as usize) as u32,
                        y: (i / width as usize) as u32,
                        probs: probs.to_vec(),
                    });
                }
            }
        }
        Self::new(image_id, width, height, num_classes, pixels)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> &[EdgePixel] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<EdgePixel> {
        self.pixels
    }

    /// Sorts pixels by `(y, x)`, the canonical on-disk order.
    pub fn sort_canonical(&mut self) {
        self.pixels.sort_by_key(|p| (p.y, p.x));
    }
}

/// Ordered, duplicate-free, non-empty subset of class indices to keep.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMask {
    keep: Vec<usize>,
}

impl ClassMask {
    /// Builds a mask from arbitrary indices; they are sorted, duplicates rejected.
    pub fn new(mut keep: Vec<usize>) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::Config("class mask must keep at least one class".into()));
        }
        keep.sort_unstable();
        if keep.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("class mask has duplicate indices: {keep:?}")));
        }
        Ok(Self { keep })
    }

    pub fn all(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).collect())
    }

    /// Road through sky.
    pub fn static_classes() -> Self {
        Self {
            keep: (0..NUM_STATIC_CLASSES).collect(),
        }
    }

    pub fn building_sky() -> Self {
        Self {
            keep: vec![BUILDING, SKY],
        }
    }

    pub fn vegetation_sky() -> Self {
        Self {
            keep: vec![VEGETATION, SKY],
        }
    }

    pub fn vegetation_building_sky() -> Self {
        Self {
            keep: vec![BUILDING, VEGETATION, SKY],
        }
    }

    /// Every class except `class`.
    pub fn remove(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::Config(format!(
                "cannot remove class {class} from a {num_classes}-class map"
            )));
        }
        Self::new((0..num_classes).filter(|&c| c != class).collect())
    }

    /// Parses a mask name against a `num_classes`-class label set.
    ///
    /// Accepted forms: `all`, `static`, `bld-sky`, `veg-sky`, `veg-bld-sky`,
    /// `no-<class>` (class name or index), or explicit indices joined with `+`
    /// such as `2+8+10`.
    pub fn parse(name: &str, num_classes: usize) -> Result<Self> {
        let name = name.trim();
        let mask = match name.to_ascii_lowercase().as_str() {
            "all" => Self::all(num_classes)?,
            "static" => Self::static_classes(),
            "bld-sky" => Self::building_sky(),
            "veg-sky" => Self::vegetation_sky(),
            "veg-bld-sky" => Self::vegetation_building_sky(),
            other => {
                if let Some(class) = other.strip_prefix("no-") {
                    Self::remove(class_index(class)?, num_classes)?
                } else {
                    let keep = other
                        .split('+')
                        .map(|s| {
                            s.trim()
                                .parse::<usize>()
                                .map_err(|_| Error::Config(format!("unknown class mask '{name}'")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Self::new(keep)?
                }
            }
        };
        mask.validate_for(num_classes)?;
        Ok(mask)
    }

    pub fn keep(&self) -> &[usize] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn validate_for(&self, num_classes: usize) -> Result<()> {
        if self.keep.is_empty() {
            return Err(Error::Config("class mask must keep at least one class".into()));
        }
        match self.keep.last() {
            Some(&max) if max >= num_classes => Err(Error::Config(format!(
                "class mask references class {max} but the map has {num_classes} classes"
            ))),
            _ => Ok(()),
        }
    }

    /// Short human-readable name, e.g. `all`, `no-car` or `2+8+10`.
    pub fn label(&self, num_classes: usize) -> String {
        let is_prefix = |n: usize| self.keep.len() == n && self.keep.iter().enumerate().all(|(i, &c)| i == c);
        if is_prefix(num_classes) {
            return "all".into();
        }
        if is_prefix(NUM_STATIC_CLASSES) {
            return "static".into();
        }
        if self.keep.len() + 1 == num_classes {
            if let Some(missing) = (0..num_classes).find(|c| !self.keep.contains(c)) {
                return match CITYSCAPES_CLASSES.get(missing) {
                    Some(name) if num_classes == CITYSCAPES_CLASSES.len() => format!("no-{name}"),
                    _ => format!("no-{missing}"),
                };
            }
        }
        match self.keep.as_slice() {
            [BUILDING, SKY] => "bld-sky".into(),
            [VEGETATION, SKY] => "veg-sky".into(),
            [BUILDING, VEGETATION, SKY] => "veg-bld-sky".into(),
            keep => keep
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

fn class_index(name: &str) -> Result<usize> {
    if let Ok(i) = name.parse::<usize>() {
        return Ok(i);
    }
    CITYSCAPES_CLASSES
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown class name '{name}'")))
}

/// Edge selection and augmentation settings. Changing any field invalidates
/// codebooks trained under another configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub threshold: f64,
    pub alpha: f64,
    pub spatial: bool,
    pub mask: ClassMask,
}

impl AugmentConfig {
    pub fn new(threshold: f64, alpha: f64, spatial: bool, mask: ClassMask) -> Result<Self> {
        let cfg = Self {
            threshold,
            alpha,
            spatial,
            mask,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default threshold and alpha, spatial augmentation on, all classes kept.
    pub fn with_defaults(num_classes: usize) -> Result<Self> {
        Self::new(DEFAULT_THRESHOLD, DEFAULT_ALPHA, true, ClassMask::all(num_classes)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "edge threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.mask.is_empty() {
            return Err(Error::Config("class mask must keep at least one class".into()));
        }
        Ok(())
    }

    /// Feature dimension produced under this configuration.
    pub fn feature_dim(&self) -> usize {
        self.mask.len() + if self.spatial { 2 } else { 0 }
    }

    /// Stable little-endian encoding used for hashing and persistence.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + 4 * self.mask.len());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.push(self.spatial as u8);
        out.extend_from_slice(&(self.mask.len() as u32).to_le_bytes());
        for &c in self.mask.keep() {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out
    }

    /// SHA-256 of [`canonical_bytes`](Self::canonical_bytes).
    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }
}

impl fmt::Display for AugmentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "threshold={} alpha={} spatial={} mask={:?}",
            self.threshold,
            self.alpha,
            self.spatial,
            self.mask.keep()
        )
    }
}

/// A D-dimensional local feature: kept class probabilities, optionally followed
/// by the two normalized pixel coordinates. Arbitrary local descriptors (e.g.
/// 128-d gradient histograms) can be wrapped directly with [`AugmentedFeature::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeature {
    values: Vec<f64>,
}

impl AugmentedFeature {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for AugmentedFeature {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Emits one feature per pixel whose largest kept-class probability is at
/// least the threshold, in input pixel order. No alpha weighting is applied.
pub fn select_edge_pixels(map: &EdgeFeatureMap, cfg: &AugmentConfig) -> Result<Vec<AugmentedFeature>> {
    cfg.validate()?;
    cfg.mask.validate_for(map.num_classes())?;
    let keep = cfg.mask.keep();
    let (w, h) = (map.width() as f64, map.height() as f64);
    let features = map
        .pixels()
        .iter()
        .filter(|p| keep.iter().any(|&c| p.probs[c] as f64 >= cfg.threshold))
        .map(|p| {
            let mut values = Vec::with_capacity(cfg.feature_dim());
            values.extend(keep.iter().map(|&c| p.probs[c] as f64));
            if cfg.spatial {
                values.push(p.x as f64 / w);
                values.push(p.y as f64 / h);
            }
            AugmentedFeature::new(values)
        })
        .collect();
    Ok(features)
}

/// Scales the class block by `alpha` and the trailing two spatial
/// components by `1 - alpha`.
///
/// Panics if the feature has fewer than two components.
pub fn apply_alpha(feature: &AugmentedFeature, alpha: f64) -> AugmentedFeature {
    let n = feature.dim();
    assert!(n >= 2, "alpha weighting needs the two spatial components");
    let values = feature
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < n - 2 { alpha * v } else { (1.0 - alpha) * v })
        .collect();
    AugmentedFeature::new(values)
}

/// Projects every pixel's probabilities onto the kept classes, in mask order.
/// Pixels are retained regardless of their remaining probabilities.
pub fn apply_mask(map: &EdgeFeatureMap, mask: &ClassMask) -> Result<EdgeFeatureMap> {
    mask.validate_for(map.num_classes())?;
    let pixels = map
        .pixels()
        .iter()
        .map(|p| EdgePixel {
            x: p.x,
            y: p.y,
            probs: mask.keep().iter().map(|&c| p.probs[c]).collect(),
        })
        .collect();
    Ok(EdgeFeatureMap {
        image_id: map.image_id.clone(),
        width: map.width,
        height: map.height,
        num_classes: mask.len(),
        pixels,
    })
}

/// Full per-image extraction: selection followed by alpha weighting when the
/// spatial block is enabled.
pub fn extract_features(map: &EdgeFeatureMap, cfg: &AugmentConfig) -> Result<Vec<AugmentedFeature>> {
    let selected = select_edge_pixels(map, cfg)?;
    if !cfg.spatial {
        return Ok(selected);
    }
    Ok(selected.iter().map(|f| apply_alpha(f, cfg.alpha)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: u32, h: u32, k: usize) -> EdgeFeatureMap {
        let mut pixels = Vec::new();
        for y in 0..h {
            for x in 0..w {
                pixels.push(EdgePixel {
                    x,
                    y,
                    probs: (0..k).map(|_| rng.random::<f32>()).collect(),
                });
            }
        }
        EdgeFeatureMap::new("r", w, h, k, pixels).unwrap()
    }

    fn cfg(threshold: f64, mask: ClassMask) -> AugmentConfig {
        AugmentConfig::new(threshold, DEFAULT_ALPHA, true, mask).unwrap()
    }

    #[test]
    fn all_zero_map_yields_nothing() {
        let pixels = (0..4)
            .map(|i| EdgePixel {
                x: i % 2,
                y: i / 2,
                probs: vec![0.0; 3],
            })
            .collect();
        let map = EdgeFeatureMap::new("z", 2, 2, 3, pixels).unwrap();
        let out = select_edge_pixels(&map, &cfg(0.5, ClassMask::all(3).unwrap())).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn boundary_pixel_normalizes_by_width() {
        let map = EdgeFeatureMap::new(
            "b",
            2,
            2,
            1,
            vec![EdgePixel {
                x: 0,
                y: 0,
                probs: vec![1.0],
            }],
        )
        .unwrap();
        let out = select_edge_pixels(&map, &cfg(0.5, ClassMask::all(1).unwrap())).unwrap();
        assert_eq!(out, vec![AugmentedFeature::new(vec![1.0, 0.0, 0.0])]);
    }

    #[test]
    fn selection_matches_per_pixel_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let map = random_map(&mut rng, 4, 4, 3);
        let out = select_edge_pixels(&map, &cfg(0.5, ClassMask::all(3).unwrap())).unwrap();

        // Independent scan over the 16 grid cells.
        let mut expected = Vec::new();
        for y in 0..4u32 {
            for x in 0..4u32 {
                let p = map.pixels().iter().find(|p| p.x == x && p.y == y).unwrap();
                let mut hit = false;
                for &v in &p.probs {
                    if v as f64 >= 0.5 {
                        hit = true;
                    }
                }
                if hit {
                    let mut v: Vec<f64> = p.probs.iter().map(|&q| q as f64).collect();
                    v.push(x as f64 / 4.0);
                    v.push(y as f64 / 4.0);
                    expected.push(v);
                }
            }
        }
        let got: Vec<Vec<f64>> = out.into_iter().map(AugmentedFeature::into_vec).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn no_spatial_drops_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 3, 3, 4);
        let mut c = cfg(0.3, ClassMask::all(4).unwrap());
        c.spatial = false;
        let out = select_edge_pixels(&map, &c).unwrap();
        assert!(!out.is_empty());
        assert!(out.iter().all(|f| f.dim() == 4));
    }

    #[test]
    fn thresholding_uses_kept_classes_only() {
        let map = EdgeFeatureMap::new(
            "t",
            4,
            4,
            3,
            vec![
                EdgePixel {
                    x: 0,
                    y: 0,
                    probs: vec![0.9, 0.1, 0.1],
                },
                EdgePixel {
                    x: 1,
                    y: 0,
                    probs: vec![0.1, 0.8, 0.1],
                },
            ],
        )
        .unwrap();
        let out = select_edge_pixels(&map, &cfg(0.5, ClassMask::new(vec![1, 2]).unwrap())).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].as_slice()[0], 0.8f32 as f64);
    }

    #[test]
    fn mask_out_of_range_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = random_map(&mut rng, 2, 2, 3);
        let bad = cfg(0.5, ClassMask::new(vec![0, 3]).unwrap());
        assert!(matches!(select_edge_pixels(&map, &bad), Err(Error::Config(_))));
        assert!(matches!(apply_mask(&map, &bad.mask), Err(Error::Config(_))));
    }

    #[test]
    fn alpha_extremes() {
        let f = AugmentedFeature::new(vec![0.6, 0.2, 0.3, 0.7]);
        assert_eq!(apply_alpha(&f, 1.0).as_slice(), &[0.6, 0.2, 0.0, 0.0]);
        assert_eq!(apply_alpha(&f, 0.0).as_slice(), &[0.0, 0.0, 0.3, 0.7]);
        assert_eq!(DEFAULT_ALPHA, 0.1);
    }

    #[test]
    fn mask_all_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_map(&mut rng, 3, 2, 19);
        assert_eq!(apply_mask(&map, &ClassMask::all(19).unwrap()).unwrap(), map);
    }

    #[test]
    fn remove_car_drops_its_column() {
        assert_eq!(CITYSCAPES_CLASSES[13], "car");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = random_map(&mut rng, 2, 2, 19);
        let mask = ClassMask::parse("no-car", 19).unwrap();
        assert_eq!(mask, ClassMask::remove(13, 19).unwrap());
        let out = apply_mask(&map, &mask).unwrap();
        assert_eq!(out.num_classes(), 18);
        for (a, b) in map.pixels().iter().zip(out.pixels()) {
            assert_eq!(&b.probs[..13], &a.probs[..13]);
            assert_eq!(&b.probs[13..], &a.probs[14..]);
        }
    }

    #[test]
    fn static_mask_projection_matches_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_map(&mut rng, 5, 3, 19);
        let out = apply_mask(&map, &ClassMask::static_classes()).unwrap();
        for (a, b) in map.pixels().iter().zip(out.pixels()) {
            assert_eq!(b.probs.len(), 11);
            for i in 0..11 {
                assert_eq!(b.probs[i], a.probs[i]);
            }
        }
    }

    #[test]
    fn mask_parsing_and_labels() {
        for name in ["all", "static", "bld-sky", "veg-sky", "veg-bld-sky", "no-car", "no-road"] {
            let m = ClassMask::parse(name, 19).unwrap();
            assert_eq!(m.label(19), name);
        }
        assert_eq!(ClassMask::parse("2+10", 19).unwrap(), ClassMask::building_sky());
        assert_eq!(ClassMask::parse("1+0", 4).unwrap().keep(), &[0, 1]);
        assert!(ClassMask::parse("static", 5).is_err());
        assert!(ClassMask::parse("no-unicorn", 19).is_err());
        assert!(ClassMask::new(vec![]).is_err());
        assert!(ClassMask::new(vec![1, 1]).is_err());
    }

    #[test]
    fn invalid_maps_rejected() {
        let px = |x, y, p: f32| EdgePixel { x, y, probs: vec![p] };
        assert!(EdgeFeatureMap::new("a", 2, 2, 1, vec![px(2, 0, 0.5)]).is_err());
        assert!(EdgeFeatureMap::new("a", 2, 2, 1, vec![px(0, 0, 1.5)]).is_err());
        assert!(EdgeFeatureMap::new("a", 2, 2, 1, vec![px(0, 0, f32::NAN)]).is_err());
        assert!(EdgeFeatureMap::new("a", 2, 2, 1, vec![px(0, 0, 0.5), px(0, 0, 0.1)]).is_err());
        assert!(EdgeFeatureMap::new("a", 0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn dense_ingestion_keeps_edge_pixels() {
        let data = [0.0, 0.1, 0.9, 0.2, 0.0, 0.0, 0.6, 0.6];
        let map = EdgeFeatureMap::from_dense("d", 2, 2, 2, &data, 0.5).unwrap();
        let coords: Vec<_> = map.pixels().iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(coords, vec![(1, 0), (1, 1)]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = ClassMask::all(3).unwrap();
        assert!(AugmentConfig::new(0.0, 0.1, true, m.clone()).is_err());
        assert!(AugmentConfig::new(1.0, 0.1, true, m.clone()).is_ok());
        assert!(AugmentConfig::new(0.5, 1.1, true, m.clone()).is_err());
        assert!(AugmentConfig::new(0.5, -0.1, true, m).is_err());
    }

    #[test]
    fn config_hash_tracks_every_field() {
        let base = AugmentConfig::with_defaults(19).unwrap();
        let mut variants = vec![base.clone()];
        variants.push(AugmentConfig { threshold: 0.6, ..base.clone() });
        variants.push(AugmentConfig { alpha: 0.2, ..base.clone() });
        variants.push(AugmentConfig { spatial: false, ..base.clone() });
        variants.push(AugmentConfig { mask: ClassMask::static_classes(), ..base.clone() });
        let hashes: HashSet<_> = variants.iter().map(|c| c.config_hash()).collect();
        assert_eq!(hashes.len(), variants.len());
        assert_eq!(base.config_hash(), base.clone().config_hash());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds(seed in any::<u64>(), t1 in 0.01f64..1.0, dt in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(&mut rng, 4, 3, 3);
            let t2 = (t1 + dt).min(1.0);
            let lo = select_edge_pixels(&map, &cfg(t1, ClassMask::all(3).unwrap())).unwrap();
            let hi = select_edge_pixels(&map, &cfg(t2, ClassMask::all(3).unwrap())).unwrap();
            prop_assert!(hi.len() <= lo.len());
            prop_assert!(lo.len() <= map.pixels().len());
            for f in &lo {
                let s = &f.as_slice()[3..];
                prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn alpha_blocks_are_linear(values in prop::collection::vec(0.0f64..1.0, 2..12), alpha in 0.0f64..1.0) {
            let f = AugmentedFeature::new(values.clone());
            let a = apply_alpha(&f, alpha);
            let b = apply_alpha(&f, 1.0 - alpha);
            let n = values.len();
            for i in 0..n {
                // Weights sum to one across the two calls, so the sum recovers the input.
                prop_assert!((a.as_slice()[i] + b.as_slice()[i] - values[i]).abs() < 1e-12);
            }
            let half = apply_alpha(&f, 0.5);
            for i in 0..n {
                prop_assert_eq!(half.as_slice()[i], values[i] * 0.5);
            }
        }

        #[test]
        fn masking_all_commutes_with_selection(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(&mut rng, 3, 3, 5);
            let all = ClassMask::all(5).unwrap();
            let c = cfg(0.5, all.clone());
            let masked = apply_mask(&map, &all).unwrap();
            prop_assert_eq!(select_edge_pixels(&masked, &c).unwrap(), select_edge_pixels(&map, &c).unwrap());
        }
    }
}
