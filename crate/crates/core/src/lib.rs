//! Place recognition from multi-label semantic edge maps.
//!
//! Edge pixels above a probability threshold become features made of their
//! per-class probabilities plus normalized image position. A mini-batch
//! k-means vocabulary turns each image's features into a power- and
//! L2-normalized VLAD descriptor, and a geo-tagged database of those
//! descriptors answers cosine top-N queries. [`geoeval`] scores the
//! retrievals by metric distance to the query's true position.
//!
//! ```
//! use vlase_core::synth::{generate_pass, SynthConfig};
//! use vlase_core::{pipeline, AugmentConfig, TrainParams};
//!
//! let cfg = SynthConfig { num_locations: 12, edge_density: 80, ..SynthConfig::default() };
//! let pass: Vec<_> = generate_pass(&cfg, 0).unwrap();
//! let maps: Vec<_> = pass.iter().map(|(m, _)| m.clone()).collect();
//! let tags = pass.iter().map(|(m, t)| (m.image_id().to_string(), *t)).collect();
//!
//! let augment = AugmentConfig::with_defaults(cfg.num_classes).unwrap();
//! let codebook = pipeline::train_from_maps(&maps, &augment, &TrainParams::new(4, 7)).unwrap();
//! let index = pipeline::build_index(&maps, &tags, &codebook, 0.5).unwrap();
//! let hits = pipeline::query_maps(&index, &codebook, &maps[..1], 1).unwrap();
//! assert_eq!(hits[0].matches[0].image_id, maps[0].image_id());
//! ```

pub mod codebook;
pub mod error;
pub mod features;
pub mod geoeval;
pub mod index;
pub mod pipeline;
pub mod store;
pub mod synth;
pub mod vlad;

pub use codebook::{assign_nearest, train_codebook, Codebook, InitMethod, TrainParams};
pub use error::{Error, Result};
pub use features::{
    apply_alpha, apply_mask, extract_features, select_edge_pixels, AugmentConfig, AugmentedFeature, ClassMask,
    EdgeFeatureMap, EdgePixel,
};
pub use geoeval::{evaluate, haversine_m, AccuracyReport, QueryResult};
pub use index::{cosine_distance, GeoIndex, GeoTag, Match};
pub use vlad::{l2_normalize, power_normalize, vlad_aggregate, VladDescriptor};
