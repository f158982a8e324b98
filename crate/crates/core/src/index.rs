//! Geo-tagged descriptor database with exact cosine top-N search.

use std::collections::HashSet;

use sha2::{Digest, Sha256};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::vlad::{VladDescriptor, DEFAULT_POWER};

/// Distance reported whenever either side is a zero descriptor.
pub const EMPTY_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTag {
    lat: f64,
    lon: f64,
}

impl GeoTag {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Input(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Input(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Binds descriptors to the exact codebook and feature configuration that
/// produced them.
pub fn fingerprint(codebook: &Codebook) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"vlase-fingerprint");
    h.update((codebook.clusters() as u32).to_le_bytes());
    h.update((codebook.dim() as u32).to_le_bytes());
    for v in codebook.as_flat() {
        h.update(v.to_le_bytes());
    }
    match codebook.augment() {
        Some(cfg) => {
            h.update([1]);
            h.update(cfg.canonical_bytes());
        }
        None => h.update([0]),
    }
    h.finalize().into()
}

/// `1 - cos(a, b)`, or [`EMPTY_DISTANCE`] if either descriptor is zero.
pub fn cosine_distance(a: &VladDescriptor, b: &VladDescriptor) -> Result<f64> {
    if a.clusters() != b.clusters() || a.dim() != b.dim() {
        return Err(Error::Input(format!(
            "descriptor shapes differ: {}x{} vs {}x{}",
            a.clusters(),
            a.dim(),
            b.clusters(),
            b.dim()
        )));
    }
    Ok(cosine_distance_slices(a.values(), b.values()))
}

pub(crate) fn cosine_distance_slices(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return EMPTY_DISTANCE;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub descriptor: VladDescriptor,
    pub geotag: GeoTag,
}

impl IndexRecord {
    pub fn image_id(&self) -> &str {
        self.descriptor.image_id()
    }
}

/// One retrieved database entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub image_id: String,
    pub distance: f64,
    pub geotag: GeoTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoIndex {
    fingerprint: [u8; 32],
    clusters: usize,
    dim: usize,
    power: f64,
    records: Vec<IndexRecord>,
    ids: HashSet<String>,
}

impl GeoIndex {
    /// Empty index for descriptors built with `codebook` and the default power.
    pub fn for_codebook(codebook: &Codebook) -> Self {
        Self::new(fingerprint(codebook), codebook.clusters(), codebook.dim(), DEFAULT_POWER)
    }

    pub fn new(fingerprint: [u8; 32], clusters: usize, dim: usize, power: f64) -> Self {
        Self {
            fingerprint,
            clusters,
            dim,
            power,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    pub fn insert(&mut self, descriptor: VladDescriptor, geotag: GeoTag) -> Result<()> {
        if descriptor.clusters() != self.clusters || descriptor.dim() != self.dim {
            return Err(Error::Input(format!(
                "descriptor {} is {}x{}, index holds {}x{}",
                descriptor.image_id(),
                descriptor.clusters(),
                descriptor.dim(),
                self.clusters,
                self.dim
            )));
        }
        if !self.ids.insert(descriptor.image_id().to_owned()) {
            return Err(Error::Input(format!(
                "duplicate image id '{}' in index",
                descriptor.image_id()
            )));
        }
        self.records.push(IndexRecord { descriptor, geotag });
        Ok(())
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Power-normalization exponent the stored descriptors were built with.
    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn check_codebook(&self, codebook: &Codebook) -> Result<()> {
        self.check_fingerprint(&fingerprint(codebook))
    }

    pub fn check_fingerprint(&self, fp: &[u8; 32]) -> Result<()> {
        if fp != &self.fingerprint {
            return Err(Error::Config(
                "codebook fingerprint does not match the one the index was built with".into(),
            ));
        }
        Ok(())
    }

    /// The `n` closest records in nondecreasing cosine distance; equal
    /// distances keep insertion order.
    pub fn query_top_n(&self, query: &VladDescriptor, n: usize, fp: &[u8; 32]) -> Result<Vec<Match>> {
        self.check_fingerprint(fp)?;
        if n == 0 {
            return Err(Error::Config("top-N must be at least 1".into()));
        }
        let mut scored = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Ok((cosine_distance(query, &r.descriptor)?, i)))
            .collect::<Result<Vec<_>>>()?;
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, by_rank);
            scored.truncate(n);
        }
        scored.sort_unstable_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(distance, i)| {
                let r = &self.records[i];
                Match {
                    image_id: r.image_id().to_owned(),
                    distance,
                    geotag: r.geotag,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desc(id: &str, v: Vec<f64>) -> VladDescriptor {
        let n = v.len();
        VladDescriptor::new(id, 1, n, v, false).unwrap()
    }

    fn unit(rng: &mut ChaCha8Rng, id: &str, d: usize) -> VladDescriptor {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        desc(id, crate::vlad::l2_normalize(&v))
    }

    fn tag(i: usize) -> GeoTag {
        GeoTag::new(40.0 + i as f64 * 1e-4, -111.0).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = desc("a", vec![0.6, 0.8]);
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
        let b = desc("b", vec![0.8, -0.6]);
        assert!((cosine_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let z = VladDescriptor::empty("z", 1, 2);
        assert_eq!(cosine_distance(&a, &z).unwrap(), 2.0);
        let zero = desc("0", vec![0.0, 0.0]);
        assert_eq!(cosine_distance(&zero, &a).unwrap(), 2.0);
        assert!(cosine_distance(&a, &desc("c", vec![1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn cosine_matches_dot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for i in 0..9 {
                dot += a[i] * b[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            let expected = 1.0 - dot / (na.sqrt() * nb.sqrt());
            let got = cosine_distance(&desc("a", a), &desc("b", b)).unwrap();
            assert!((got - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn self_match_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut idx = GeoIndex::new([7; 32], 1, 6, 0.5);
        let descs: Vec<_> = (0..20).map(|i| unit(&mut rng, &format!("d{i}"), 6)).collect();
        for (i, d) in descs.iter().enumerate() {
            idx.insert(d.clone(), tag(i)).unwrap();
        }
        let hits = idx.query_top_n(&descs[13], 3, &[7; 32]).unwrap();
        assert_eq!(hits[0].image_id, "d13");
        assert!(hits[0].distance < 1e-9);
        let all = idx.query_top_n(&descs[0], 100, &[7; 32]).unwrap();
        assert_eq!(all.len(), 20);
        assert!(all.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn top_n_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut idx = GeoIndex::new([1; 32], 1, 8, 0.5);
        let mut descs = Vec::new();
        for i in 0..50 {
            let d = unit(&mut rng, &format!("r{i}"), 8);
            descs.push(d.clone());
            idx.insert(d, tag(i)).unwrap();
        }
        let q = unit(&mut rng, "q", 8);
        let mut oracle: Vec<(f64, usize)> = descs
            .iter()
            .enumerate()
            .map(|(i, d)| (cosine_distance(&q, d).unwrap(), i))
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = idx.query_top_n(&q, 5, &[1; 32]).unwrap();
        let expected: Vec<String> = oracle[..5].iter().map(|(_, i)| format!("r{i}")).collect();
        let got_ids: Vec<String> = got.iter().map(|m| m.image_id.clone()).collect();
        assert_eq!(got_ids, expected);
    }

    #[test]
    fn ties_keep_insertion_order_and_empties_rank_last() {
        let mut idx = GeoIndex::new([0; 32], 1, 2, 0.5);
        idx.insert(VladDescriptor::empty("e", 1, 2), tag(0)).unwrap();
        idx.insert(desc("b", vec![1.0, 0.0]), tag(1)).unwrap();
        idx.insert(desc("a", vec![1.0, 0.0]), tag(2)).unwrap();
        let hits = idx.query_top_n(&desc("q", vec![1.0, 0.0]), 3, &[0; 32]).unwrap();
        let ids: Vec<_> = hits.iter().map(|m| m.image_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "e"]);
        assert_eq!(hits[2].distance, EMPTY_DISTANCE);
    }

    #[test]
    fn fingerprint_mismatch_and_bad_inputs() {
        let mut idx = GeoIndex::new([0; 32], 1, 2, 0.5);
        idx.insert(desc("a", vec![1.0, 0.0]), tag(0)).unwrap();
        assert!(matches!(
            idx.query_top_n(&desc("q", vec![1.0, 0.0]), 1, &[9; 32]),
            Err(Error::Config(_))
        ));
        assert!(idx.insert(desc("a", vec![0.0, 1.0]), tag(1)).is_err());
        assert!(idx.insert(desc("c", vec![0.0, 1.0, 0.0]), tag(1)).is_err());
        assert!(idx.query_top_n(&desc("q", vec![1.0, 0.0]), 0, &[0; 32]).is_err());
    }

    #[test]
    fn geotag_ranges() {
        assert!(GeoTag::new(90.0, 180.0).is_ok());
        assert!(GeoTag::new(90.5, 0.0).is_err());
        assert!(GeoTag::new(0.0, -180.5).is_err());
        assert!(GeoTag::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn fingerprint_depends_on_codebook() {
        let a = Codebook::from_centers(&[vec![0.0, 1.0]]).unwrap();
        let b = Codebook::from_centers(&[vec![0.0, 1.5]]).unwrap();
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_bounded(seed in any::<u64>(), d in 1usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = unit(&mut rng, "a", d);
            let b = unit(&mut rng, "b", d);
            let ab = cosine_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_distance(&b, &a).unwrap());
            prop_assert!((-1e-9..=2.0 + 1e-9).contains(&ab));
        }

        #[test]
        fn result_is_prefix_of_full_ranking(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = GeoIndex::new([0; 32], 1, 3, 0.5);
            for i in 0..10 {
                // Coarse values force frequent exact ties.
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(0..3) as f64).collect();
                idx.insert(desc(&format!("r{i}"), v), tag(i)).unwrap();
            }
            let q = desc("q", vec![1.0, 1.0, 0.0]);
            let full = idx.query_top_n(&q, 10, &[0; 32]).unwrap();
            let part = idx.query_top_n(&q, n, &[0; 32]).unwrap();
            prop_assert_eq!(&full[..n.min(10)], &part[..]);
            for w in full.windows(2) {
                prop_assert!(w[0].distance <= w[1].distance);
                if w[0].distance == w[1].distance {
                    let i0: usize = w[0].image_id[1..].parse().unwrap();
                    let i1: usize = w[1].image_id[1..].parse().unwrap();
                    prop_assert!(i0 < i1);
                }
            }
        }
    }
}
