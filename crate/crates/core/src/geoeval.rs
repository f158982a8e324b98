//! Great-circle ground truth and top-k localization accuracy.
//!
//! A query counts as localized at `(k, t)` when any of its first `k`
//! retrieved images lies within `t` meters of the query's true position.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;

use crate::error::{Error, Result};
use crate::index::{GeoTag, Match};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

pub const DEFAULT_KS: [usize; 2] = [1, 5];
/// Thresholds reported in the ablation tables.
pub const DEFAULT_THRESHOLDS_M: [f64; 3] = [5.0, 10.0, 20.0];
/// Full threshold sweep, including 15 m.
pub const ALL_THRESHOLDS_M: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoTag, b: GeoTag) -> f64 {
    let (lat1, lat2) = (a.lat().to_radians(), b.lat().to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon() - a.lon()).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Ranked retrieval output for one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub matches: Vec<Match>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyCell {
    pub k: usize,
    pub threshold_m: f64,
    pub successes: usize,
    pub total: usize,
}

impl AccuracyCell {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.successes as f64 / self.total as f64
        }
    }
}

/// Success counts for every requested `(k, threshold)` pair, `k`-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    ks: Vec<usize>,
    thresholds_m: Vec<f64>,
    cells: Vec<AccuracyCell>,
}

impl AccuracyReport {
    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn thresholds_m(&self) -> &[f64] {
        &self.thresholds_m
    }

    pub fn cells(&self) -> &[AccuracyCell] {
        &self.cells
    }

    pub fn cell(&self, k: usize, threshold_m: f64) -> Option<&AccuracyCell> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.threshold_m == threshold_m)
    }

    pub fn accuracy(&self, k: usize, threshold_m: f64) -> Option<f64> {
        self.cell(k, threshold_m).map(AccuracyCell::accuracy)
    }

    pub fn total(&self) -> usize {
        self.cells.first().map_or(0, |c| c.total)
    }

    /// CSV with header `k,threshold_m,successes,total,accuracy`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Evaluation(format!("writing report: {e}"));
        w.write_record(["k", "threshold_m", "successes", "total", "accuracy"])
            .map_err(err)?;
        for c in &self.cells {
            w.write_record([
                c.k.to_string(),
                c.threshold_m.to_string(),
                c.successes.to_string(),
                c.total.to_string(),
                format!("{:.6}", c.accuracy()),
            ])
            .map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::Evaluation(format!("writing report: {e}")))
    }

    /// Aligned text table, one row per k and one column per threshold.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "");
        for t in &self.thresholds_m {
            let _ = write!(s, "{:>9}", format!("{t}m"));
        }
        s.push('\n');
        for &k in &self.ks {
            let _ = write!(s, "{:<8}", format!("top-{k}"));
            for &t in &self.thresholds_m {
                let acc = self.accuracy(k, t).unwrap_or(f64::NAN);
                let _ = write!(s, "{:>9}", format!("{:.1}%", 100.0 * acc));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "({} queries)", self.total());
        s
    }
}

/// Scores ranked retrieval results against per-query ground truth.
///
/// Queries with fewer than `k` results are scored on what they have.
pub fn evaluate(
    results: &[QueryResult],
    truth: &HashMap<String, GeoTag>,
    ks: &[usize],
    thresholds_m: &[f64],
) -> Result<AccuracyReport> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::Config("top-k values must be non-empty and >= 1".into()));
    }
    let mut thresholds = thresholds_m.to_vec();
    if thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::Config(format!(
            "distance thresholds must be >= 0, got {thresholds:?}"
        )));
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    if thresholds.is_empty() {
        return Err(Error::Config("at least one distance threshold is required".into()));
    }

    let mut successes = vec![0usize; ks.len() * thresholds.len()];
    for q in results {
        let true_tag = truth.get(&q.query_id).ok_or_else(|| {
            Error::Evaluation(format!("no ground-truth geotag for query '{}'", q.query_id))
        })?;
        // Running minimum of the distance over the first i results.
        let mut best = f64::INFINITY;
        let prefix: Vec<f64> = q
            .matches
            .iter()
            .map(|m| {
                best = best.min(haversine_m(*true_tag, m.geotag));
                best
            })
            .collect();
        for (ki, &k) in ks.iter().enumerate() {
            let Some(&d) = prefix.get(k.min(prefix.len()).wrapping_sub(1)) else {
                continue;
            };
            for (ti, &t) in thresholds.iter().enumerate() {
                if d <= t {
                    successes[ki * thresholds.len() + ti] += 1;
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(successes.len());
    for (ki, &k) in ks.iter().enumerate() {
        for (ti, &t) in thresholds.iter().enumerate() {
            cells.push(AccuracyCell {
                k,
                threshold_m: t,
                successes: successes[ki * thresholds.len() + ti],
                total: results.len(),
            });
        }
    }
    Ok(AccuracyReport {
        ks,
        thresholds_m: thresholds,
        cells,
    })
}
