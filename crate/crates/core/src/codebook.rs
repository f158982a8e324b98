//! Visual vocabulary training with sequential (mini-batch) k-means.
//!
//! Every image's features form one mini-batch. Batches are visited in a
//! seeded random order each epoch; each feature pulls its nearest center
//! towards itself with a per-center learning rate of `1 / n`, where `n` is
//! the number of features that center has absorbed so far.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{AugmentConfig, AugmentedFeature};

/// Cluster count for semantic edge features.
pub const DEFAULT_CLUSTERS: usize = 64;
/// Cluster count for 128-d gradient-histogram descriptors.
pub const DEFAULT_DESCRIPTOR_CLUSTERS: usize = 32;
pub const DEFAULT_MAX_EPOCHS: usize = 10;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// M distinct features drawn uniformly from the training stream.
    Uniform,
    /// Greedy D²-weighted seeding over the training stream.
    KMeansPlusPlus,
}

impl InitMethod {
    pub(crate) fn code(self) -> u8 {
        match self {
            InitMethod::Uniform => 0,
            InitMethod::KMeansPlusPlus => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InitMethod::Uniform),
            1 => Some(InitMethod::KMeansPlusPlus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub clusters: usize,
    pub seed: u64,
    pub max_epochs: usize,
    /// Stop once the largest per-epoch center displacement, relative to the
    /// RMS norm of the training features, drops below this value.
    pub tol: f64,
    pub init: InitMethod,
    /// Feature configuration the batches were extracted with, if any.
    pub augment: Option<AugmentConfig>,
}

impl TrainParams {
    pub fn new(clusters: usize, seed: u64) -> Self {
        Self {
            clusters,
            seed,
            max_epochs: DEFAULT_MAX_EPOCHS,
            tol: DEFAULT_TOL,
            init: InitMethod::KMeansPlusPlus,
            augment: None,
        }
    }
}

/// Training provenance stored with a codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInfo {
    pub seed: u64,
    pub max_epochs: usize,
    pub tol: f64,
    pub init: InitMethod,
    pub epochs_run: usize,
}

/// M cluster centers in D dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Vec<f64>,
    clusters: usize,
    dim: usize,
    info: TrainInfo,
    augment: Option<AugmentConfig>,
}

impl Codebook {
    /// Wraps explicit centers, e.g. to query against a fixed vocabulary.
    pub fn from_centers(centers: &[Vec<f64>]) -> Result<Self> {
        let info = TrainInfo {
            seed: 0,
            max_epochs: 0,
            tol: 0.0,
            init: InitMethod::Uniform,
            epochs_run: 0,
        };
        let dim = centers.first().map_or(0, Vec::len);
        let flat = centers
            .iter()
            .map(|c| {
                if c.len() == dim {
                    Ok(c.as_slice())
                } else {
                    Err(Error::Input(format!(
                        "center dimension {} differs from {dim}",
                        c.len()
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        Self::from_parts(flat, centers.len(), dim, info, None)
    }

    pub(crate) fn from_parts(
        centers: Vec<f64>,
        clusters: usize,
        dim: usize,
        info: TrainInfo,
        augment: Option<AugmentConfig>,
    ) -> Result<Self> {
        if clusters == 0 || dim == 0 {
            return Err(Error::Input(format!(
                "codebook needs M >= 1 and D >= 1, got M={clusters} D={dim}"
            )));
        }
        if centers.len() != clusters * dim {
            return Err(Error::Input(format!(
                "codebook has {} values, expected {clusters}x{dim}",
                centers.len()
            )));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("codebook centers must be finite".into()));
        }
        if let Some(cfg) = &augment {
            if cfg.feature_dim() != dim {
                return Err(Error::Config(format!(
                    "codebook dimension {dim} does not match feature config dimension {}",
                    cfg.feature_dim()
                )));
            }
        }
        Ok(Self {
            centers,
            clusters,
            dim,
            info,
            augment,
        })
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, m: usize) -> &[f64] {
        &self.centers[m * self.dim..(m + 1) * self.dim]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.centers
    }

    pub fn train_info(&self) -> &TrainInfo {
        &self.info
    }

    pub fn augment(&self) -> Option<&AugmentConfig> {
        self.augment.as_ref()
    }

    /// Hash of the feature configuration; all zeros when none is attached.
    pub fn config_hash(&self) -> [u8; 32] {
        self.augment.as_ref().map_or([0; 32], AugmentConfig::config_hash)
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn assign(&self, feature: &[f64]) -> Result<usize> {
        if feature.len() != self.dim {
            return Err(Error::Input(format!(
                "feature dimension {} does not match codebook dimension {}",
                feature.len(),
                self.dim
            )));
        }
        Ok(nearest(&self.centers, self.dim, feature).0)
    }
}

/// Nearest codebook center by squared Euclidean distance.
pub fn assign_nearest(feature: &AugmentedFeature, codebook: &Codebook) -> Result<usize> {
    codebook.assign(feature.as_slice())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(index, squared distance)` of the closest row of `centers`.
pub(crate) fn nearest(centers: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (m, c) in centers.chunks_exact(dim).enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

/// Sum of squared distances from every feature to its nearest center.
pub fn kmeans_objective(batches: &[Vec<AugmentedFeature>], centers: &[f64], dim: usize) -> f64 {
    batches
        .iter()
        .flatten()
        .map(|f| nearest(centers, dim, f.as_slice()).1)
        .sum()
}

struct TrainingSet {
    data: Vec<f64>,
    dim: usize,
    /// Feature index range of each batch.
    batches: Vec<(usize, usize)>,
}

impl TrainingSet {
    fn new(batches: &[Vec<AugmentedFeature>]) -> Result<Self> {
        let dim = batches
            .iter()
            .flatten()
            .next()
            .map(AugmentedFeature::dim)
            .ok_or_else(|| Error::Training("no training features".into()))?;
        if dim == 0 {
            return Err(Error::Input("features must have at least one dimension".into()));
        }
        let total: usize = batches.iter().map(Vec::len).sum();
        let mut data = Vec::with_capacity(total * dim);
        let mut ranges = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let start = data.len() / dim;
            for f in batch {
                if f.dim() != dim {
                    return Err(Error::Input(format!(
                        "batch {b} has a {}-d feature, expected {dim}",
                        f.dim()
                    )));
                }
                if f.as_slice().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input(format!("batch {b} has a non-finite feature")));
                }
                data.extend_from_slice(f.as_slice());
            }
            ranges.push((start, data.len() / dim));
        }
        Ok(Self {
            data,
            dim,
            batches: ranges,
        })
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Trains an M-center codebook over per-image feature batches.
///
/// Deterministic for fixed inputs and seed. Fails when fewer than M features
/// are supplied or the batches disagree on dimension.
pub fn train_codebook(batches: &[Vec<AugmentedFeature>], params: &TrainParams) -> Result<Codebook> {
    let m = params.clusters;
    if m == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    if !(params.tol >= 0.0) {
        return Err(Error::Config(format!("tolerance must be >= 0, got {}", params.tol)));
    }
    let set = TrainingSet::new(batches)?;
    let dim = set.dim;
    if set.len() < m {
        return Err(Error::Training(format!(
            "{} training features cannot seed {m} clusters",
            set.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers = match params.init {
        InitMethod::Uniform => init_uniform(&set, m, &mut rng),
        InitMethod::KMeansPlusPlus => init_plus_plus(&set, m, &mut rng),
    };

    let scale = (set.data.iter().map(|v| v * v).sum::<f64>() / set.len() as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let mut counts = vec![0u64; m];
    let mut order: Vec<usize> = (0..set.batches.len()).collect();
    let mut assigned = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let previous = centers.clone();
        let mut hits = vec![0u64; m];

        for &b in &order {
            let (start, end) = set.batches[b];
            assigned.clear();
            assigned.extend((start..end).map(|i| nearest(&centers, dim, set.point(i)).0));
            for (i, &c) in (start..end).zip(&assigned) {
                counts[c] += 1;
                hits[c] += 1;
                let eta = 1.0 / counts[c] as f64;
                let x = set.point(i);
                for (cv, xv) in centers[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *cv += eta * (xv - *cv);
                }
            }
        }

        let reseeded = reseed_starved(&set, &mut centers, &mut counts, &hits);
        let movement = previous
            .chunks_exact(dim)
            .zip(centers.chunks_exact(dim))
            .map(|(a, b)| squared_distance(a, b).sqrt() / scale)
            .fold(0.0, f64::max);
        epochs_run = epoch + 1;
        log::debug!("epoch {epochs_run}: max relative movement {movement:.3e}, reseeded {reseeded}");
        if reseeded == 0 && movement < params.tol {
            break;
        }
    }

    let info = TrainInfo {
        seed: params.seed,
        max_epochs: params.max_epochs,
        tol: params.tol,
        init: params.init,
        epochs_run,
    };
    Codebook::from_parts(centers, m, dim, info, params.augment.clone())
}

fn init_uniform(set: &TrainingSet, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(rng);
    let mut seen = HashSet::new();
    let mut picked = Vec::with_capacity(m);
    let mut leftovers = Vec::new();
    for &i in &order {
        if picked.len() == m {
            break;
        }
        let key: Vec<u64> = set.point(i).iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            picked.push(i);
        } else if leftovers.len() < m {
            leftovers.push(i);
        }
    }
    // Fewer than M distinct points: duplicates get split apart by reseeding.
    picked.extend(leftovers.into_iter().take(m - picked.len()));
    picked.iter().flat_map(|&i| set.point(i).to_vec()).collect()
}

fn init_plus_plus(set: &TrainingSet, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = set.len();
    let dim = set.dim;
    let trials = 2 + (m as f64).ln() as usize;
    let first = rng.random_range(0..n);
    let mut centers = set.point(first).to_vec();
    let mut closest: Vec<f64> = (0..n)
        .map(|i| squared_distance(set.point(i), set.point(first)))
        .collect();

    for _ in 1..m {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if potential > 0.0 {
                sample_weighted(&closest, potential, rng)
            } else {
                rng.random_range(0..n)
            };
            let c = set.point(candidate);
            let updated: Vec<f64> = (0..n)
                .map(|i| closest[i].min(squared_distance(set.point(i), c)))
                .collect();
            let total: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(t, _)| total < *t) {
                best = Some((total, c.to_vec()));
            }
        }
        let (_, c) = best.expect("at least one seeding trial");
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(squared_distance(set.point(i), &c));
        }
        centers.extend_from_slice(&c);
    }
    debug_assert_eq!(centers.len(), m * dim);
    centers
}

fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Moves every center that absorbed nothing this epoch onto the training
/// feature farthest from its nearest center. Returns the number moved.
fn reseed_starved(set: &TrainingSet, centers: &mut [f64], counts: &mut [u64], hits: &[u64]) -> usize {
    let starved: Vec<usize> = (0..hits.len()).filter(|&c| hits[c] == 0).collect();
    if starved.is_empty() {
        return 0;
    }
    let dim = set.dim;
    let mut far: Vec<(f64, usize)> = (0..set.len())
        .map(|i| (nearest(centers, dim, set.point(i)).1, i))
        .collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut used: HashSet<Vec<u64>> = HashSet::new();
    let mut candidates = far.into_iter().filter(|&(d, i)| {
        d > 0.0 && used.insert(set.point(i).iter().map(|v| v.to_bits()).collect())
    });
    let mut moved = 0;
    for c in starved {
        let Some((_, i)) = candidates.next() else { break };
        centers[c * dim..(c + 1) * dim].copy_from_slice(set.point(i));
        counts[c] = 1;
        moved += 1;
    }
    moved
}
