//! On-disk formats.
//!
//! Feature sets (`FSET`), all little-endian:
//!
//! ```text
//! magic "FSET" | version u16 | flags u16 | n u32 | d u32 | identity i64
//! | source_id length u16 | source_id UTF-8 | n*d f32 row-major | crc32(payload) u32
//! ```
//!
//! Set representations reuse the layout with `n = 1`, flag bit 0 set and the
//! method code in bits 8..16 of `flags`.
//!
//! Models (`SAGM`):
//!
//! ```text
//! magic "SAGM" | version u16 | d, d_id, d_va, k, classes as u32 | tau f64
//! | repeated until EOF: name length u16 | name | rows u32 | cols u32 | f64 row-major
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::disentangle::{DisentangleModel, ModelDims, Params, StepRecord};
use crate::error::{Error, Result};
use crate::set::{FeatureSet, MethodTag, SetRepresentation};
use crate::synth::{GroundTruth, IdentificationProtocol, PairSpec};

pub const SET_MAGIC: [u8; 4] = *b"FSET";
pub const SET_VERSION: u16 = 1;
pub const MODEL_MAGIC: [u8; 4] = *b"SAGM";
pub const MODEL_VERSION: u16 = 1;

pub const SET_EXTENSION: &str = "fset";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROTOCOL_FILE: &str = "protocol.json";

const FLAG_REPRESENTATION: u16 = 1;

pub const LOSS_CSV_HEADER: &str = "epoch,step,L_total,L_CE,L_img,L_set";
pub const WEIGHTS_CSV_HEADER: &str = "source_id,element,alpha,beta,weight";

/// Little-endian cursor that reports truncation against a file path.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                what: format!(
                    "{what}: need {len} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Validation(format!("{}: {what} is not valid UTF-8", self.path.display())))
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn check_magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        let avail = (self.bytes.len() - self.pos).min(4);
        found[..avail].copy_from_slice(&self.bytes[self.pos..self.pos + avail]);
        if avail == 4 && found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        self.take(4, "magic")?;
        Ok(())
    }

    fn check_version(&mut self, expected: u16) -> Result<()> {
        let found = self.u16("version")?;
        if found != expected {
            return Err(Error::VersionMismatch {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Validation(format!("{what} longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} = {v} does not fit in u32")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rounds every value to the nearest f32, as stored on disk.
pub fn to_f32_precision(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v as f32 as f64)
}

fn encode_fset(flags: u16, rows: &Array2<f64>, identity: i64, source_id: &str) -> Result<Vec<u8>> {
    let (n, d) = rows.dim();
    if let Some(v) = rows.iter().find(|v| !v.is_finite() || !(v.abs() <= f32::MAX as f64)) {
        return Err(Error::Validation(format!(
            "cannot store non-finite or f32-overflowing value {v}"
        )));
    }
    let mut out = Vec::with_capacity(32 + source_id.len() + 4 * n * d);
    out.extend_from_slice(&SET_MAGIC);
    out.extend_from_slice(&SET_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&dim_u32(n, "n")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(d, "d")?.to_le_bytes());
    out.extend_from_slice(&identity.to_le_bytes());
    put_str(&mut out, source_id, "source_id")?;
    let start = out.len();
    for v in rows.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct RawSet {
    flags: u16,
    features: Array2<f64>,
    identity: i64,
    source_id: String,
}

fn decode_fset(bytes: &[u8], path: &Path) -> Result<RawSet> {
    let mut r = Reader::new(bytes, path);
    r.check_magic(SET_MAGIC)?;
    r.check_version(SET_VERSION)?;
    let flags = r.u16("flags")?;
    let n = r.u32("n")? as usize;
    let d = r.u32("d")? as usize;
    let identity = r.i64("identity")?;
    let source_id = r.string("source_id")?;
    let len = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Validation(format!("{}: header size overflows", path.display())))?;
    let payload = r.take(len, "payload")?;
    let stored = r.u32("checksum")?;
    if !r.is_done() {
        return Err(Error::Validation(format!(
            "{}: trailing bytes after checksum",
            path.display()
        )));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::CrcMismatch {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect();
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(RawSet {
        flags,
        features,
        identity,
        source_id,
    })
}

pub fn encode_set(set: &FeatureSet) -> Result<Vec<u8>> {
    encode_fset(0, &set.features().to_owned(), set.identity(), set.source_id())
}

/// Decodes a feature-set file image; `path` only labels errors.
pub fn decode_set(bytes: &[u8], path: &Path) -> Result<FeatureSet> {
    let raw = decode_fset(bytes, path)?;
    if raw.flags & FLAG_REPRESENTATION != 0 {
        return Err(Error::Validation(format!(
            "{} holds a set representation, not a feature set",
            path.display()
        )));
    }
    FeatureSet::new(raw.features, raw.identity, raw.source_id)
}

pub fn write_set(path: &Path, set: &FeatureSet) -> Result<()> {
    write_file(path, &encode_set(set)?)
}

pub fn read_set(path: &Path) -> Result<FeatureSet> {
    decode_set(&read_file(path)?, path)
}

/// A representation together with the set it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRepresentation {
    pub representation: SetRepresentation,
    pub identity: i64,
    pub source_id: String,
}

pub fn encode_representation(rep: &StoredRepresentation) -> Result<Vec<u8>> {
    let flags = FLAG_REPRESENTATION | (u16::from(rep.representation.method.code()) << 8);
    let row = rep
        .representation
        .vector
        .view()
        .insert_axis(ndarray::Axis(0))
        .to_owned();
    encode_fset(flags, &row, rep.identity, &rep.source_id)
}

pub fn decode_representation(bytes: &[u8], path: &Path) -> Result<StoredRepresentation> {
    let raw = decode_fset(bytes, path)?;
    if raw.flags & FLAG_REPRESENTATION == 0 || raw.features.nrows() != 1 {
        return Err(Error::Validation(format!(
            "{} is not a set representation",
            path.display()
        )));
    }
    let code = (raw.flags >> 8) as u8;
    let method = MethodTag::from_code(code)
        .ok_or_else(|| Error::Validation(format!("{}: unknown method code {code}", path.display())))?;
    let vector: Array1<f64> = raw.features.row(0).to_owned();
    Ok(StoredRepresentation {
        representation: SetRepresentation::new(vector, method)?,
        identity: raw.identity,
        source_id: raw.source_id,
    })
}

pub fn write_representation(path: &Path, rep: &StoredRepresentation) -> Result<()> {
    write_file(path, &encode_representation(rep)?)
}

pub fn read_representation(path: &Path) -> Result<StoredRepresentation> {
    decode_representation(&read_file(path)?, path)
}

pub fn encode_model(model: &DisentangleModel) -> Result<Vec<u8>> {
    let dims = model.dims();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for (v, what) in [
        (dims.d, "d"),
        (dims.d_id, "d_id"),
        (dims.d_va, "d_va"),
        (dims.k, "k"),
        (dims.classes, "classes"),
    ] {
        out.extend_from_slice(&dim_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&model.tau.to_le_bytes());
    for (name, t) in model.params().tensors() {
        put_str(&mut out, name, "tensor name")?;
        out.extend_from_slice(&dim_u32(t.nrows(), "rows")?.to_le_bytes());
        out.extend_from_slice(&dim_u32(t.ncols(), "cols")?.to_le_bytes());
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<DisentangleModel> {
    let mut r = Reader::new(bytes, path);
    r.check_magic(MODEL_MAGIC)?;
    r.check_version(MODEL_VERSION)?;
    let mut dim = |what: &str| r.u32(what).map(|v| v as usize);
    let dims = ModelDims {
        d: dim("d")?,
        d_id: dim("d_id")?,
        d_va: dim("d_va")?,
        k: dim("k")?,
        classes: dim("classes")?,
    };
    dims.validate()?;
    let tau = r.f64("tau")?;
    let mut loaded: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    while !r.is_done() {
        let name = r.string("tensor name")?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Validation(format!("{}: tensor {name} size overflows", path.display())))?;
        let raw = r.take(len, &format!("tensor {name}"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Dimension(e.to_string()))?;
        if loaded.insert(name.clone(), t).is_some() {
            return Err(Error::Validation(format!(
                "{}: duplicate tensor {name}",
                path.display()
            )));
        }
    }
    let mut params = Params::zeros(&dims);
    for (name, slot) in params.tensors_mut() {
        let t = loaded.remove(name).ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            what: format!("missing tensor {name}"),
        })?;
        if t.dim() != slot.dim() {
            return Err(Error::Dimension(format!(
                "{}: tensor {name} has shape {:?}, dims imply {:?}",
                path.display(),
                t.dim(),
                slot.dim()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::Validation(format!("{}: unknown tensor {extra}", path.display())));
    }
    DisentangleModel::from_params(dims, tau, params)
}

pub fn write_model(path: &Path, model: &DisentangleModel) -> Result<()> {
    write_file(path, &encode_model(model)?)
}

pub fn read_model(path: &Path) -> Result<DisentangleModel> {
    decode_model(&read_file(path)?, path)
}

/// Loss trace as CSV, one row per optimizer step.
pub fn loss_csv(steps: &[StepRecord]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for s in steps {
        let l = &s.loss;
        let _ = writeln!(out, "{},{},{},{},{},{}", s.epoch, s.step, l.total(), l.ce, l.img, l.set);
    }
    out
}

/// Per-element weight rows for one set; absent factors are left blank.
pub fn weights_csv_rows(
    out: &mut String,
    source_id: &str,
    alpha: Option<&Array1<f64>>,
    beta: Option<&Array1<f64>>,
    weights: &Array1<f64>,
) {
    let cell = |v: Option<&Array1<f64>>, i: usize| v.map(|a| a[i].to_string()).unwrap_or_default();
    for (i, w) in weights.iter().enumerate() {
        let _ = writeln!(out, "{source_id},{i},{},{},{w}", cell(alpha, i), cell(beta, i));
    }
}

fn check_file_stem(source_id: &str) -> Result<()> {
    let ok = !source_id.is_empty() && source_id != "." && source_id != ".." && !source_id.contains(['/', '\\', '\0']);
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "source_id {source_id:?} cannot be used as a file name"
        )))
    }
}

pub fn set_path(dir: &Path, source_id: &str) -> Result<PathBuf> {
    check_file_stem(source_id)?;
    Ok(dir.join(format!("{source_id}.{SET_EXTENSION}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes every set as `<source_id>.fset` plus an optional ground-truth manifest.
pub fn write_dataset(dir: &Path, sets: &[FeatureSet], truth: Option<&GroundTruth>) -> Result<()> {
    create_dir(dir)?;
    let mut seen = std::collections::BTreeSet::new();
    for set in sets {
        if !seen.insert(set.source_id()) {
            return Err(Error::Validation(format!("duplicate source_id {:?}", set.source_id())));
        }
        write_set(&set_path(dir, set.source_id())?, set)?;
    }
    if let Some(truth) = truth {
        write_json(&dir.join(MANIFEST_FILE), truth)?;
    }
    Ok(())
}

/// Files with `extension` in `dir`, sorted by path.
pub fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == extension) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Reads all sets in `dir`, ordered by file path.
pub fn read_dataset(dir: &Path) -> Result<Vec<FeatureSet>> {
    let sets: Vec<FeatureSet> = list_files(dir, SET_EXTENSION)?
        .iter()
        .map(|p| read_set(p))
        .collect::<Result<_>>()?;
    if sets.is_empty() {
        return Err(Error::Validation(format!(
            "no .{SET_EXTENSION} files in {}",
            dir.display()
        )));
    }
    Ok(sets)
}

pub fn read_manifest(dir: &Path) -> Result<GroundTruth> {
    read_json(&dir.join(MANIFEST_FILE))
}

/// Evaluation protocol addressed by source ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProtocolFile {
    /// `(set_a, set_b, same_identity)`.
    pub pairs: Vec<(String, String, bool)>,
    pub gallery: Vec<String>,
    pub probes: Vec<String>,
}

impl ProtocolFile {
    pub fn from_indices(
        source_ids: &[&str],
        pairs: &[PairSpec],
        identification: Option<&IdentificationProtocol>,
    ) -> Self {
        let name = |i: usize| source_ids[i].to_string();
        Self {
            pairs: pairs.iter().map(|p| (name(p.a), name(p.b), p.same_identity)).collect(),
            gallery: identification
                .map(|p| p.gallery.iter().map(|&i| name(i)).collect())
                .unwrap_or_default(),
            probes: identification
                .map(|p| p.probes.iter().map(|&i| name(i)).collect())
                .unwrap_or_default(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
