//! VLAD aggregation: per-cluster residual sums, signed power normalization,
//! then a single global L2 normalization.

use crate::codebook::{nearest, Codebook};
use crate::error::{Error, Result};
use crate::features::AugmentedFeature;

/// Signed square root.
pub const DEFAULT_POWER: f64 = 0.5;

const L2_EPSILON: f64 = 1e-12;

/// Normalized `M x D` descriptor of one image, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VladDescriptor {
    image_id: String,
    clusters: usize,
    dim: usize,
    values: Vec<f64>,
    is_empty: bool,
}

impl VladDescriptor {
    pub fn new(
        image_id: impl Into<String>,
        clusters: usize,
        dim: usize,
        values: Vec<f64>,
        is_empty: bool,
    ) -> Result<Self> {
        if values.len() != clusters * dim || clusters == 0 || dim == 0 {
            return Err(Error::Input(format!(
                "descriptor has {} values, expected {clusters}x{dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("descriptor values must be finite".into()));
        }
        if is_empty && values.iter().any(|&v| v != 0.0) {
            return Err(Error::Input("empty descriptor must be all zero".into()));
        }
        Ok(Self {
            image_id: image_id.into(),
            clusters,
            dim,
            values,
            is_empty,
        })
    }

    /// All-zero descriptor for an image without features.
    pub fn empty(image_id: impl Into<String>, clusters: usize, dim: usize) -> Self {
        Self {
            image_id: image_id.into(),
            clusters,
            dim,
            values: vec![0.0; clusters * dim],
            is_empty: true,
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    /// True when the source image had no features at all.
    pub fn is_empty(&self) -> bool {
        self.is_empty
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn with_image_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }
}

/// Elementwise `sign(v) * |v|^0.5`.
pub fn power_normalize(v: &[f64]) -> Vec<f64> {
    power_normalize_with(v, DEFAULT_POWER)
}

pub fn power_normalize_with(v: &[f64], exponent: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let mag = if exponent == 0.5 {
                x.abs().sqrt()
            } else {
                x.abs().powf(exponent)
            };
            if x < 0.0 {
                -mag
            } else {
                mag
            }
        })
        .collect()
}

/// Scales `v` to unit length; vectors with norm at most 1e-12 are returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > L2_EPSILON {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// Raw per-cluster residual sums `sum (x - C_m)` before any normalization.
///
/// Features are accumulated in lexicographic value order, so any permutation
/// of the same feature multiset yields bit-identical sums.
pub fn residual_sums(features: &[AugmentedFeature], codebook: &Codebook) -> Result<Vec<f64>> {
    let dim = codebook.dim();
    if let Some((i, f)) = features.iter().enumerate().find(|(_, f)| f.dim() != dim) {
        return Err(Error::Input(format!(
            "feature {i} has dimension {}, codebook expects {dim}",
            f.dim()
        )));
    }
    let mut order: Vec<&[f64]> = features.iter().map(AugmentedFeature::as_slice).collect();
    order.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let centers = codebook.as_flat();
    let mut rows = vec![0.0; codebook.clusters() * dim];
    for x in order {
        let m = nearest(centers, dim, x).0;
        let center = codebook.center(m);
        for ((r, xv), cv) in rows[m * dim..(m + 1) * dim].iter_mut().zip(x).zip(center) {
            *r += xv - cv;
        }
    }
    Ok(rows)
}

pub fn vlad_aggregate(
    image_id: impl Into<String>,
    features: &[AugmentedFeature],
    codebook: &Codebook,
) -> Result<VladDescriptor> {
    vlad_aggregate_with(image_id, features, codebook, DEFAULT_POWER)
}

/// Aggregates with an explicit power-normalization exponent.
pub fn vlad_aggregate_with(
    image_id: impl Into<String>,
    features: &[AugmentedFeature],
    codebook: &Codebook,
    power: f64,
) -> Result<VladDescriptor> {
    let (m, d) = (codebook.clusters(), codebook.dim());
    if features.is_empty() {
        return Ok(VladDescriptor::empty(image_id, m, d));
    }
    let raw = residual_sums(features, codebook)?;
    let values = l2_normalize(&power_normalize_with(&raw, power));
    VladDescriptor::new(image_id, m, d, values, false)
}
