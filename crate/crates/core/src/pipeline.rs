//! End-to-end wiring: feature extraction, codebook training, database
//! construction, querying and the mask/alpha ablation sweep.

use std::collections::HashMap;
use std::io;

use rayon::prelude::*;

use crate::codebook::{train_codebook, Codebook, TrainParams};
use crate::error::{Error, Result};
use crate::features::{extract_features, AugmentConfig, AugmentedFeature, ClassMask, EdgeFeatureMap};
use crate::geoeval::{evaluate, AccuracyReport, QueryResult};
use crate::index::{fingerprint, GeoIndex, GeoTag};
use crate::vlad::{vlad_aggregate_with, VladDescriptor};

/// Per-image feature batches, in map order.
pub fn extract_batches(maps: &[EdgeFeatureMap], cfg: &AugmentConfig) -> Result<Vec<Vec<AugmentedFeature>>> {
    maps.par_iter().map(|m| extract_features(m, cfg)).collect()
}

/// Trains a codebook on `maps` under `augment`, recording the configuration.
pub fn train_from_maps(maps: &[EdgeFeatureMap], augment: &AugmentConfig, params: &TrainParams) -> Result<Codebook> {
    let batches = extract_batches(maps, augment)?;
    let params = TrainParams {
        augment: Some(augment.clone()),
        ..params.clone()
    };
    train_codebook(&batches, &params)
}

fn codebook_config(codebook: &Codebook) -> Result<&AugmentConfig> {
    codebook
        .augment()
        .ok_or_else(|| Error::Config("codebook carries no feature configuration".into()))
}

/// VLAD descriptors for every map, using the codebook's own feature configuration.
pub fn describe(maps: &[EdgeFeatureMap], codebook: &Codebook, power: f64) -> Result<Vec<VladDescriptor>> {
    let cfg = codebook_config(codebook)?;
    maps.par_iter()
        .map(|m| {
            let feats = extract_features(m, cfg)?;
            vlad_aggregate_with(m.image_id(), &feats, codebook, power)
        })
        .collect()
}

/// Builds the mapping database. Every map needs a geotag.
pub fn build_index(
    maps: &[EdgeFeatureMap],
    geotags: &HashMap<String, GeoTag>,
    codebook: &Codebook,
    power: f64,
) -> Result<GeoIndex> {
    let mut index = GeoIndex::for_codebook(codebook).with_power(power);
    for d in describe(maps, codebook, power)? {
        let tag = *geotags
            .get(d.image_id())
            .ok_or_else(|| Error::Input(format!("no geotag for mapping image '{}'", d.image_id())))?;
        index.insert(d, tag)?;
    }
    Ok(index)
}

/// Top-`n` retrieval for every query map.
pub fn query_maps(index: &GeoIndex, codebook: &Codebook, maps: &[EdgeFeatureMap], n: usize) -> Result<Vec<QueryResult>> {
    let fp = fingerprint(codebook);
    index.check_fingerprint(&fp)?;
    describe(maps, codebook, index.power())?
        .par_iter()
        .map(|q| {
            Ok(QueryResult {
                query_id: q.image_id().to_owned(),
                matches: index.query_top_n(q, n, &fp)?,
            })
        })
        .collect()
}

/// Settings shared by every configuration of an ablation sweep.
#[derive(Debug, Clone)]
pub struct AblationSettings {
    pub threshold: f64,
    pub spatial: bool,
    pub train: TrainParams,
    pub power: f64,
    pub ks: Vec<usize>,
    pub thresholds_m: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub mask: ClassMask,
    pub mask_label: String,
    pub alpha: f64,
    pub report: AccuracyReport,
}

/// Retrains, re-indexes and re-evaluates once per `(mask, alpha)` pair.
pub fn ablate(
    db_maps: &[EdgeFeatureMap],
    db_tags: &HashMap<String, GeoTag>,
    query_maps_in: &[EdgeFeatureMap],
    query_tags: &HashMap<String, GeoTag>,
    masks: &[ClassMask],
    alphas: &[f64],
    settings: &AblationSettings,
) -> Result<Vec<AblationRun>> {
    let num_classes = db_maps
        .first()
        .map(EdgeFeatureMap::num_classes)
        .ok_or_else(|| Error::Input("ablation needs at least one mapping image".into()))?;
    let top_n = settings.ks.iter().copied().max().unwrap_or(1);
    let mut grid = Vec::new();
    for mask in masks {
        for &alpha in alphas {
            grid.push((mask.clone(), alpha));
        }
    }
    grid.into_par_iter()
        .map(|(mask, alpha)| {
            let augment = AugmentConfig::new(settings.threshold, alpha, settings.spatial, mask.clone())?;
            let codebook = train_from_maps(db_maps, &augment, &settings.train)?;
            let index = build_index(db_maps, db_tags, &codebook, settings.power)?;
            let results = query_maps(&index, &codebook, query_maps_in, top_n)?;
            let report = evaluate(&results, query_tags, &settings.ks, &settings.thresholds_m)?;
            log::info!("ablation mask={} alpha={alpha}: done", mask.label(num_classes));
            Ok(AblationRun {
                mask_label: mask.label(num_classes),
                mask,
                alpha,
                report,
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Evaluation(format!("writing ablation report: {e}"))
}

/// One row per configuration with a `top{k}_{t}m` accuracy column per cell.
pub fn write_ablation_table<W: io::Write>(out: W, runs: &[AblationRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = runs.first() else {
        return Ok(());
    };
    let mut header = vec!["mask".to_string(), "alpha".to_string()];
    header.extend(first.report.cells().iter().map(|c| format!("top{}_{}m", c.k, c.threshold_m)));
    w.write_record(&header).map_err(csv_err)?;
    for run in runs {
        let mut row = vec![run.mask_label.clone(), run.alpha.to_string()];
        row.extend(run.report.cells().iter().map(|c| format!("{:.6}", c.accuracy())));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Evaluation(e.to_string()))
}

/// Long-form accuracy curves: one row per configuration and `(k, threshold)`.
pub fn write_ablation_curves<W: io::Write>(out: W, runs: &[AblationRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mask", "alpha", "k", "threshold_m", "successes", "total", "accuracy"])
        .map_err(csv_err)?;
    for run in runs {
        for c in run.report.cells() {
            w.write_record([
                run.mask_label.clone(),
                run.alpha.to_string(),
                c.k.to_string(),
                c.threshold_m.to_string(),
                c.successes.to_string(),
                c.total.to_string(),
                format!("{:.6}", c.accuracy()),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Evaluation(e.to_string()))
}
