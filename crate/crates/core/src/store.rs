//! On-disk formats.
//!
//! Three little-endian binary formats share one layout: an 8-byte magic, a
//! `u32` version, format-specific dimensions, a 32-byte configuration hash,
//! the payload, and a trailing SHA-256 of every preceding byte.
//!
//! | format       | magic      | dims                     | config hash            |
//! |--------------|------------|--------------------------|------------------------|
//! | feature map  | `VLASEFTR` | W, H, K, pixel count     | zero                   |
//! | codebook     | `VLASECBK` | M, D                     | feature config hash    |
//! | index        | `VLASEIDX` | record count, M, D       | codebook fingerprint   |
//!
//! Feature map pixels are written sorted by `(y, x)` as `u32 x, u32 y, K x f32`.
//! Codebook centers and index descriptors are `f64`. Geotags and retrieval
//! results are CSV.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::codebook::{Codebook, InitMethod, TrainInfo};
use crate::error::{Error, Result};
use crate::features::{AugmentConfig, ClassMask, EdgeFeatureMap, EdgePixel};
use crate::geoeval::QueryResult;
use crate::index::{GeoIndex, GeoTag, Match};
use crate::vlad::VladDescriptor;

pub const FEATURE_MAGIC: &[u8; 8] = b"VLASEFTR";
pub const CODEBOOK_MAGIC: &[u8; 8] = b"VLASECBK";
pub const INDEX_MAGIC: &[u8; 8] = b"VLASEIDX";
pub const FORMAT_VERSION: u32 = 1;
/// File extension of feature map files inside a feature directory.
pub const FEATURE_EXT: &str = "ftr";

const DIGEST_LEN: usize = 32;

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(magic: &[u8; 8]) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Decoder<'a> {
    /// Checks magic and version and positions the cursor after them.
    fn open(bytes: &'a [u8], magic: &[u8; 8], source: &'a str) -> Result<Self> {
        let mut d = Self { bytes, pos: 0, source };
        let found = d.take(8)?;
        if found != magic {
            return Err(d.format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = d.u32()?;
        if version != FORMAT_VERSION {
            return Err(d.format(format!("unsupported version {version}")));
        }
        Ok(d)
    }

    fn format(&self, msg: String) -> Error {
        Error::Format {
            path: self.source.to_owned(),
            msg,
        }
    }

    fn corrupt_at(&self, offset: usize, msg: String) -> Error {
        Error::Corruption {
            path: self.source.to_owned(),
            offset: offset as u64,
            msg,
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.corrupt_at(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt_at(at, "string is not UTF-8".into()))
    }

    /// Fails unless at least `count * unit` bytes (plus the digest) remain.
    fn expect_records(&self, count: usize, unit: usize, what: &str) -> Result<()> {
        let need = count.checked_mul(unit).and_then(|n| n.checked_add(DIGEST_LEN));
        match need {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(self.corrupt_at(
                self.pos,
                format!("declared {count} {what} but only {} bytes remain", self.remaining()),
            )),
        }
    }

    /// Requires exactly the digest to remain and verifies it.
    fn finish(mut self) -> Result<()> {
        if self.remaining() != DIGEST_LEN {
            return Err(self.corrupt_at(
                self.pos,
                format!("expected {DIGEST_LEN}-byte checksum, found {} bytes", self.remaining()),
            ));
        }
        let body = &self.bytes[..self.pos];
        let stored = self.take(DIGEST_LEN)?;
        if Sha256::digest(body).as_slice() != stored {
            return Err(self.corrupt_at(self.pos - DIGEST_LEN, "checksum mismatch".into()));
        }
        Ok(())
    }
}

fn nonzero_dim(d: &Decoder<'_>, name: &str, v: u32) -> Result<usize> {
    if v == 0 {
        return Err(d.format(format!("{name} must be positive")));
    }
    Ok(v as usize)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- feature maps

/// Canonical bytes of a feature map (pixels sorted by `(y, x)`).
pub fn encode_feature_map(map: &EdgeFeatureMap) -> Vec<u8> {
    let mut pixels: Vec<&EdgePixel> = map.pixels().iter().collect();
    pixels.sort_by_key(|p| (p.y, p.x));
    let mut e = Encoder::new(FEATURE_MAGIC);
    e.u32(map.width());
    e.u32(map.height());
    e.u32(map.num_classes() as u32);
    e.u32(pixels.len() as u32);
    e.bytes(&[0; 32]);
    e.str(map.image_id());
    for p in pixels {
        e.u32(p.x);
        e.u32(p.y);
        for &v in &p.probs {
            e.f32(v);
        }
    }
    e.finish()
}

pub fn decode_feature_map(bytes: &[u8], source: &str) -> Result<EdgeFeatureMap> {
    let mut d = Decoder::open(bytes, FEATURE_MAGIC, source)?;
    let width = d.u32()?;
    let height = d.u32()?;
    let k = d.u32()?;
    let count = d.u32()? as usize;
    let _config_hash: [u8; 32] = d.array()?;
    if width == 0 || height == 0 || k == 0 {
        return Err(d.format(format!("invalid dims W={width} H={height} K={k}")));
    }
    let k = k as usize;
    let image_id = d.str()?;
    d.expect_records(count, 8 + 4 * k, "pixels")?;
    let mut pixels = Vec::with_capacity(count);
    for _ in 0..count {
        let x = d.u32()?;
        let y = d.u32()?;
        let probs = (0..k).map(|_| d.f32()).collect::<Result<Vec<_>>>()?;
        pixels.push(EdgePixel { x, y, probs });
    }
    let end = d.pos;
    d.finish()?;
    EdgeFeatureMap::new(image_id, width, height, k, pixels).map_err(|e| Error::Corruption {
        path: source.to_owned(),
        offset: end as u64,
        msg: e.to_string(),
    })
}

pub fn write_feature_map(path: impl AsRef<Path>, map: &EdgeFeatureMap) -> Result<()> {
    write_file(path.as_ref(), &encode_feature_map(map))
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<EdgeFeatureMap> {
    let path = path.as_ref();
    decode_feature_map(&read_file(path)?, &path.display().to_string())
}

fn check_file_stem(id: &str) -> Result<()> {
    let bad = id.is_empty()
        || id == "."
        || id == ".."
        || id.chars().any(|c| matches!(c, '/' | '\\' | '\0'));
    if bad {
        return Err(Error::Input(format!("image id '{id}' cannot be used as a file name")));
    }
    Ok(())
}

/// Writes every map to `<dir>/<image_id>.ftr`, creating `dir` if needed.
pub fn write_feature_dir(dir: impl AsRef<Path>, maps: &[EdgeFeatureMap]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seen = HashSet::new();
    for map in maps {
        check_file_stem(map.image_id())?;
        if !seen.insert(map.image_id()) {
            return Err(Error::Input(format!("duplicate image id '{}'", map.image_id())));
        }
        write_feature_map(dir.join(format!("{}.{FEATURE_EXT}", map.image_id())), map)?;
    }
    Ok(())
}

/// Paths of all feature files in `dir`, sorted by file name.
pub fn list_feature_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == FEATURE_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn read_feature_dir(dir: impl AsRef<Path>) -> Result<Vec<EdgeFeatureMap>> {
    list_feature_files(dir)?.iter().map(read_feature_map).collect()
}

// ------------------------------------------------------------------- codebooks

pub fn encode_codebook(codebook: &Codebook) -> Vec<u8> {
    let mut e = Encoder::new(CODEBOOK_MAGIC);
    e.u32(codebook.clusters() as u32);
    e.u32(codebook.dim() as u32);
    e.bytes(&codebook.config_hash());
    match codebook.augment() {
        Some(cfg) => {
            e.u8(1);
            e.f64(cfg.threshold);
            e.f64(cfg.alpha);
            e.u8(cfg.spatial as u8);
            e.u32(cfg.mask.len() as u32);
            for &c in cfg.mask.keep() {
                e.u32(c as u32);
            }
        }
        None => e.u8(0),
    }
    let info = codebook.train_info();
    e.u64(info.seed);
    e.u32(info.max_epochs as u32);
    e.u32(info.epochs_run as u32);
    e.f64(info.tol);
    e.u8(info.init.code());
    for &v in codebook.as_flat() {
        e.f64(v);
    }
    e.finish()
}

/// Decodes a codebook; when `expected` is given its hash must match the
/// embedded configuration.
pub fn decode_codebook(bytes: &[u8], source: &str, expected: Option<&AugmentConfig>) -> Result<Codebook> {
    let mut d = Decoder::open(bytes, CODEBOOK_MAGIC, source)?;
    let m = d.u32()?;
    let m = nonzero_dim(&d, "cluster count", m)?;
    let dim = d.u32()?;
    let dim = nonzero_dim(&d, "dimension", dim)?;
    let hash: [u8; 32] = d.array()?;
    let cfg_at = d.pos;
    let augment = match d.u8()? {
        0 => None,
        1 => {
            let threshold = d.f64()?;
            let alpha = d.f64()?;
            let spatial = match d.u8()? {
                0 => false,
                1 => true,
                other => return Err(d.corrupt_at(d.pos - 1, format!("bad spatial flag {other}"))),
            };
            let n = d.u32()? as usize;
            d.expect_records(n, 4, "mask entries")?;
            let keep = (0..n).map(|_| d.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
            let cfg = ClassMask::new(keep)
                .and_then(|mask| AugmentConfig::new(threshold, alpha, spatial, mask))
                .map_err(|e| d.corrupt_at(cfg_at, e.to_string()))?;
            Some(cfg)
        }
        other => return Err(d.corrupt_at(cfg_at, format!("bad config flag {other}"))),
    };
    let seed = d.u64()?;
    let max_epochs = d.u32()? as usize;
    let epochs_run = d.u32()? as usize;
    let tol = d.f64()?;
    let init_at = d.pos;
    let init = InitMethod::from_code(d.u8()?)
        .ok_or_else(|| d.corrupt_at(init_at, "unknown init method".into()))?;
    d.expect_records(m, dim * 8, "centers")?;
    let centers = (0..m * dim).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
    let end = d.pos;
    d.finish()?;

    let embedded = augment.as_ref().map_or([0; 32], AugmentConfig::config_hash);
    if embedded != hash {
        return Err(Error::Corruption {
            path: source.to_owned(),
            offset: 20,
            msg: "header config hash disagrees with embedded configuration".into(),
        });
    }
    if let Some(exp) = expected {
        if exp.config_hash() != hash {
            return Err(Error::Config(format!(
                "{source}: codebook was trained under a different feature configuration"
            )));
        }
    }
    let info = TrainInfo {
        seed,
        max_epochs,
        tol,
        init,
        epochs_run,
    };
    Codebook::from_parts(centers, m, dim, info, augment).map_err(|e| Error::Corruption {
        path: source.to_owned(),
        offset: end as u64,
        msg: e.to_string(),
    })
}

pub fn write_codebook(path: impl AsRef<Path>, codebook: &Codebook) -> Result<()> {
    write_file(path.as_ref(), &encode_codebook(codebook))
}

pub fn read_codebook(path: impl AsRef<Path>, expected: Option<&AugmentConfig>) -> Result<Codebook> {
    let path = path.as_ref();
    decode_codebook(&read_file(path)?, &path.display().to_string(), expected)
}

// --------------------------------------------------------------------- indexes

pub fn encode_index(index: &GeoIndex) -> Vec<u8> {
    let mut e = Encoder::new(INDEX_MAGIC);
    e.u32(index.len() as u32);
    e.u32(index.clusters() as u32);
    e.u32(index.dim() as u32);
    e.bytes(index.fingerprint());
    e.f64(index.power());
    for r in index.records() {
        e.str(r.image_id());
        e.f64(r.geotag.lat());
        e.f64(r.geotag.lon());
        e.u8(r.descriptor.is_empty() as u8);
        for &v in r.descriptor.values() {
            e.f64(v);
        }
    }
    e.finish()
}

/// Decodes an index; when `expected` is given it must equal the stored fingerprint.
pub fn decode_index(bytes: &[u8], source: &str, expected: Option<&[u8; 32]>) -> Result<GeoIndex> {
    let mut d = Decoder::open(bytes, INDEX_MAGIC, source)?;
    let count = d.u32()? as usize;
    let m = d.u32()?;
    let m = nonzero_dim(&d, "cluster count", m)?;
    let dim = d.u32()?;
    let dim = nonzero_dim(&d, "dimension", dim)?;
    let fp: [u8; 32] = d.array()?;
    let power = d.f64()?;
    // Smallest possible record: empty id, two coordinates, flag, values.
    let values = m
        .checked_mul(dim)
        .ok_or_else(|| d.format(format!("descriptor size {m}x{dim} overflows")))?;
    d.expect_records(count, 4 + 16 + 1 + values * 8, "records")?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let at = d.pos;
        let id = d.str()?;
        let lat = d.f64()?;
        let lon = d.f64()?;
        let empty = match d.u8()? {
            0 => false,
            1 => true,
            other => return Err(d.corrupt_at(d.pos - 1, format!("bad empty flag {other}"))),
        };
        d.expect_records(values, 8, "descriptor values")?;
        let v = (0..values).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
        let tag = GeoTag::new(lat, lon).map_err(|e| d.corrupt_at(at, e.to_string()))?;
        let desc = VladDescriptor::new(id, m, dim, v, empty).map_err(|e| d.corrupt_at(at, e.to_string()))?;
        records.push((at, desc, tag));
    }
    d.finish()?;
    if !power.is_finite() || power <= 0.0 {
        return Err(Error::Corruption {
            path: source.to_owned(),
            offset: 56,
            msg: format!("invalid power exponent {power}"),
        });
    }
    if let Some(exp) = expected {
        if exp != &fp {
            return Err(Error::Config(format!(
                "{source}: index was built with a different codebook or feature configuration"
            )));
        }
    }
    let mut index = GeoIndex::new(fp, m, dim, power);
    for (at, desc, tag) in records {
        index.insert(desc, tag).map_err(|e| Error::Corruption {
            path: source.to_owned(),
            offset: at as u64,
            msg: e.to_string(),
        })?;
    }
    Ok(index)
}

pub fn write_index(path: impl AsRef<Path>, index: &GeoIndex) -> Result<()> {
    write_file(path.as_ref(), &encode_index(index))
}

pub fn read_index(path: impl AsRef<Path>, expected: Option<&[u8; 32]>) -> Result<GeoIndex> {
    let path = path.as_ref();
    decode_index(&read_file(path)?, &path.display().to_string(), expected)
}

// ------------------------------------------------------------------------ CSV

fn csv_parse_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_owned(),
        line,
        msg: e.to_string(),
    }
}

fn check_header(path: &str, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = found.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: format!("expected header {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &str, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_owned(),
        line,
        msg: format!("invalid {name} '{raw}'"),
    })
}

/// Parses `image_id,lat,lon` rows, rejecting out-of-range coordinates and
/// duplicate ids.
pub fn parse_geotags<R: std::io::Read>(input: R, source: &str) -> Result<Vec<(String, GeoTag)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers().map_err(|e| csv_parse_error(source, e))?.clone();
    check_header(source, &headers, &["image_id", "lat", "lon"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_parse_error(source, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].trim().to_owned();
        if id.is_empty() {
            return Err(Error::Parse {
                path: source.to_owned(),
                line,
                msg: "empty image_id".into(),
            });
        }
        let lat: f64 = parse_field(source, line, "lat", &row[1])?;
        let lon: f64 = parse_field(source, line, "lon", &row[2])?;
        let tag = GeoTag::new(lat, lon).map_err(|e| Error::Parse {
            path: source.to_owned(),
            line,
            msg: e.to_string(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                path: source.to_owned(),
                line,
                msg: format!("duplicate image_id '{id}'"),
            });
        }
        out.push((id, tag));
    }
    Ok(out)
}

pub fn read_geotags(path: impl AsRef<Path>) -> Result<Vec<(String, GeoTag)>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_geotags(file, &path.display().to_string())
}

pub fn read_geotag_map(path: impl AsRef<Path>) -> Result<HashMap<String, GeoTag>> {
    Ok(read_geotags(path)?.into_iter().collect())
}

pub fn write_geotags(path: impl AsRef<Path>, tags: &[(String, GeoTag)]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_geotags_to(file, tags).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Geotag CSV with shortest round-trip float formatting.
pub fn write_geotags_to<W: std::io::Write>(out: W, tags: &[(String, GeoTag)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let sink = Path::new("<geotags>");
    w.write_record(["image_id", "lat", "lon"]).map_err(|e| csv_write_error(sink, e))?;
    for (id, tag) in tags {
        w.write_record([id.as_str(), &tag.lat().to_string(), &tag.lon().to_string()])
            .map_err(|e| csv_write_error(sink, e))?;
    }
    w.flush().map_err(|e| Error::io(sink, e))
}

fn csv_write_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    }
}

pub const RESULTS_HEADER: [&str; 6] = [
    "query_id",
    "rank",
    "match_id",
    "cosine_distance",
    "match_lat",
    "match_lon",
];

/// Writes one row per retrieved match with 1-based ranks.
pub fn write_results(path: impl AsRef<Path>, results: &[QueryResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_error(path, e))?;
    w.write_record(RESULTS_HEADER).map_err(|e| csv_write_error(path, e))?;
    for q in results {
        for (rank, m) in q.matches.iter().enumerate() {
            w.write_record([
                q.query_id.clone(),
                (rank + 1).to_string(),
                m.image_id.clone(),
                m.distance.to_string(),
                m.geotag.lat().to_string(),
                m.geotag.lon().to_string(),
            ])
            .map_err(|e| csv_write_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a results file back into per-query ranked lists, in order of first
/// appearance. Ranks must run 1, 2, ... within each query.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<QueryResult>> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_parse_error(&source, e))?.clone();
    check_header(&source, &headers, &RESULTS_HEADER)?;
    let mut out: Vec<QueryResult> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_parse_error(&source, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let query_id = row[0].trim().to_owned();
        let rank: usize = parse_field(&source, line, "rank", &row[1])?;
        let distance: f64 = parse_field(&source, line, "cosine_distance", &row[3])?;
        let lat: f64 = parse_field(&source, line, "match_lat", &row[4])?;
        let lon: f64 = parse_field(&source, line, "match_lon", &row[5])?;
        let geotag = GeoTag::new(lat, lon).map_err(|e| Error::Parse {
            path: source.clone(),
            line,
            msg: e.to_string(),
        })?;
        let i = *slot.entry(query_id.clone()).or_insert_with(|| {
            out.push(QueryResult {
                query_id,
                matches: Vec::new(),
            });
            out.len() - 1
        });
        let q = &mut out[i];
        if rank != q.matches.len() + 1 {
            return Err(Error::Parse {
                path: source.clone(),
                line,
                msg: format!("rank {rank} out of sequence for query '{}'", q.query_id),
            });
        }
        q.matches.push(Match {
            image_id: row[2].trim().to_owned(),
            distance,
            geotag,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{train_codebook, TrainParams};
    use crate::features::AugmentedFeature;

    fn map(n: u32) -> EdgeFeatureMap {
        let pixels = (0..n)
            .map(|i| EdgePixel {
                x: (i * 7) % 13,
                y: i / 13,
                probs: vec![(i as f32 * 0.013) % 1.0, 0.5, 1.0],
            })
            .collect();
        EdgeFeatureMap::new("img_a", 13, 20, 3, pixels).unwrap()
    }

    #[test]
    fn empty_map_round_trips() {
        let m = EdgeFeatureMap::new("empty", 4, 4, 2, vec![]).unwrap();
        assert_eq!(decode_feature_map(&encode_feature_map(&m), "t").unwrap(), m);
    }

    #[test]
    fn feature_map_round_trip_is_canonical() {
        let m = map(100);
        let bytes = encode_feature_map(&m);
        let back = decode_feature_map(&bytes, "t").unwrap();
        let mut sorted = m.clone();
        sorted.sort_canonical();
        assert_eq!(back, sorted);
        assert_eq!(encode_feature_map(&back), bytes);
    }

    #[test]
    fn flipped_magic_is_format_error() {
        let mut bytes = encode_feature_map(&map(3));
        bytes[0] ^= 0x20;
        assert!(matches!(decode_feature_map(&bytes, "t"), Err(Error::Format { .. })));
        let mut bytes = encode_feature_map(&map(3));
        bytes[8] = 9;
        assert!(matches!(decode_feature_map(&bytes, "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_feature_map(&map(10));
        match decode_feature_map(&bytes[..80], "t") {
            Err(Error::Corruption { offset, .. }) => assert!(offset <= 80),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn huge_declared_count_does_not_allocate() {
        let mut bytes = encode_feature_map(&map(2));
        bytes[24..28].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_feature_map(&bytes, "t"), Err(Error::Corruption { .. })));
    }

    fn small_codebook(augment: Option<AugmentConfig>) -> Codebook {
        let d = augment.as_ref().map_or(3, AugmentConfig::feature_dim);
        let batch: Vec<AugmentedFeature> = (0..6)
            .map(|i| AugmentedFeature::new((0..d).map(|k| (i * d + k) as f64 * 0.1).collect()))
            .collect();
        let mut p = TrainParams::new(1, 4);
        p.augment = augment;
        train_codebook(&[batch], &p).unwrap()
    }

    #[test]
    fn codebook_round_trip_and_config_check() {
        let cfg = AugmentConfig::new(0.5, 0.1, false, ClassMask::new(vec![0, 2, 4]).unwrap()).unwrap();
        let cb = small_codebook(Some(cfg.clone()));
        assert_eq!((cb.clusters(), cb.dim()), (1, 3));
        let bytes = encode_codebook(&cb);
        assert_eq!(decode_codebook(&bytes, "t", Some(&cfg)).unwrap(), cb);
        let other = AugmentConfig { alpha: 0.3, ..cfg };
        assert!(matches!(decode_codebook(&bytes, "t", Some(&other)), Err(Error::Config(_))));

        let bare = small_codebook(None);
        assert_eq!(decode_codebook(&encode_codebook(&bare), "t", None).unwrap(), bare);
    }

    #[test]
    fn index_round_trip_preserves_order() {
        let mut idx = GeoIndex::new([3; 32], 2, 2, 0.5);
        for i in (0..10).rev() {
            let v = crate::vlad::l2_normalize(&[i as f64, 1.0, -2.0, 0.5]);
            let d = VladDescriptor::new(format!("r{i}"), 2, 2, v, false).unwrap();
            idx.insert(d, GeoTag::new(40.0 + i as f64, -111.0).unwrap()).unwrap();
        }
        idx.insert(VladDescriptor::empty("blank", 2, 2), GeoTag::new(0.0, 0.0).unwrap())
            .unwrap();
        let bytes = encode_index(&idx);
        let back = decode_index(&bytes, "t", Some(&[3; 32])).unwrap();
        assert_eq!(back, idx);
        assert_eq!(encode_index(&back), bytes);
        assert!(matches!(decode_index(&bytes, "t", Some(&[4; 32])), Err(Error::Config(_))));
    }

    #[test]
    fn geotag_csv_cases() {
        let ok = "image_id,lat,lon\na,40.1,-111.5\nb,-3,7\n";
        let tags = parse_geotags(ok.as_bytes(), "t").unwrap();
        assert_eq!(tags.len(), 2);
        assert_eq!(tags[1].1, GeoTag::new(-3.0, 7.0).unwrap());

        let bad = "image_id,lat,lon\na,40.1,-111.5\nb,91,7\n";
        match parse_geotags(bad.as_bytes(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "image_id,lat,lon\na,1,1\na,2,2\n";
        assert!(matches!(parse_geotags(dup.as_bytes(), "t"), Err(Error::Parse { line: 3, .. })));
        let malformed = "image_id,lat,lon\na,x,1\n";
        assert!(matches!(parse_geotags(malformed.as_bytes(), "t"), Err(Error::Parse { line: 2, .. })));
        let short = "image_id,lat,lon\na,1\n";
        assert!(matches!(parse_geotags(short.as_bytes(), "t"), Err(Error::Parse { .. })));
        assert!(parse_geotags("id,lat,lon\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let tags = vec![
            ("a".to_string(), GeoTag::new(40.76081234567, -111.891).unwrap()),
            ("b".to_string(), GeoTag::new(-0.1, 179.9).unwrap()),
        ];
        let p = dir.path().join("g.csv");
        write_geotags(&p, &tags).unwrap();
        assert_eq!(read_geotags(&p).unwrap(), tags);

        let results = vec![QueryResult {
            query_id: "q".into(),
            matches: vec![
                Match { image_id: "a".into(), distance: 0.125, geotag: tags[0].1 },
                Match { image_id: "b".into(), distance: 1.5, geotag: tags[1].1 },
            ],
        }];
        let p = dir.path().join("r.csv");
        write_results(&p, &results).unwrap();
        assert_eq!(read_results(&p).unwrap(), results);

        let maps = vec![map(5), EdgeFeatureMap::new("img_b", 2, 2, 3, vec![]).unwrap()];
        write_feature_dir(dir.path().join("f"), &maps).unwrap();
        let back = read_feature_dir(dir.path().join("f")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].image_id(), "img_a");
        assert!(write_feature_dir(dir.path().join("f2"), &[EdgeFeatureMap::new("../x", 2, 2, 1, vec![]).unwrap()]).is_err());
    }
}
