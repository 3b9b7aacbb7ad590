//! On-disk formats: the binary prediction log, label files, the plain-JSON
//! import format for logs from other frameworks, run manifests and CSV
//! output with a provenance line.
//!
//! # Log file layout (version 1, all integers little-endian)
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `EPLG` |
//! | 2 | version (`u16`) |
//! | 4 × 4 | `N`, `K` (checkpoints), `T`, `C` as `u32` |
//! | 1 | flags, bit 0 = probabilities present |
//! | 1 | width in bytes of each hard prediction (1, 2 or 4) |
//! | 8 × K | checkpoints as `(num, den)` `u32` pairs |
//! | N·K·T·width | hard predictions, network-major |
//! | N·K·T·C·4 | probabilities as `f32` (only when flagged) |
//! | 4 | CRC-32 (IEEE) of the two prediction blocks |

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::log::{Checkpoint, ClassBuffer, LabelSet, PredictionLog};
use crate::theory::TheoryConfig;
use crate::toytrain::{DatasetSpec, ToyRunConfig};

pub const MAGIC: [u8; 4] = *b"EPLG";
pub const FORMAT_VERSION: u16 = 1;
const FIXED_HEADER: usize = 4 + 2 + 16 + 2;
const FLAG_SOFT: u8 = 1;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn encode_log(log: &PredictionLog) -> Vec<u8> {
    let hard = log.hard_buffer();
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * log.num_checkpoints() + hard.len() * 4 + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [log.num_networks(), log.num_checkpoints(), log.num_examples(), log.num_classes()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(if log.has_soft() { FLAG_SOFT } else { 0 });
    out.push(hard.width());
    for c in log.checkpoints() {
        out.extend_from_slice(&c.num.to_le_bytes());
        out.extend_from_slice(&c.den.to_le_bytes());
    }
    let payload_start = out.len();
    match hard {
        ClassBuffer::U8(v) => out.extend_from_slice(v),
        ClassBuffer::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ClassBuffer::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    if let Some(soft) = log.soft_buffer() {
        soft.iter().for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn too_short(expected: usize, actual: usize) -> FormatError {
    FormatError::DimMismatch {
        expected: expected as u64,
        actual: actual as u64,
    }
}

pub fn decode_log(bytes: &[u8]) -> Result<PredictionLog> {
    if bytes.len() < 4 {
        return Err(too_short(FIXED_HEADER, bytes.len()).into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    if bytes.len() < FIXED_HEADER {
        return Err(too_short(FIXED_HEADER, bytes.len()).into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let [n, k, t, c] = [6, 10, 14, 18].map(|at| u32_at(bytes, at) as u64);
    let flags = bytes[22];
    let width = bytes[23];
    if flags & !FLAG_SOFT != 0 {
        return Err(FormatError::Malformed(format!("unknown flag bits {flags:#04x}")).into());
    }
    if !matches!(width, 1 | 2 | 4) {
        return Err(FormatError::Malformed(format!("unsupported prediction width {width}")).into());
    }
    let has_soft = flags & FLAG_SOFT != 0;
    let sizes = (|| {
        let header = (FIXED_HEADER as u64).checked_add(k.checked_mul(8)?)?;
        let cells = n.checked_mul(k)?.checked_mul(t)?;
        let hard = cells.checked_mul(u64::from(width))?;
        let soft = if has_soft { cells.checked_mul(c)?.checked_mul(4)? } else { 0 };
        let total = header.checked_add(hard)?.checked_add(soft)?.checked_add(4)?;
        Some((header, cells, hard, soft, total))
    })()
    .ok_or_else(|| FormatError::Malformed("declared dimensions overflow".into()))?;
    let (header, cells, hard_len, soft_len, total) = sizes;
    if bytes.len() as u64 != total {
        return Err(FormatError::DimMismatch {
            expected: total,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let (header, cells, hard_len) = (header as usize, cells as usize, hard_len as usize);
    let payload = &bytes[header..bytes.len() - 4];
    let stored = u32_at(bytes, bytes.len() - 4);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::CrcMismatch { stored, computed }.into());
    }
    let checkpoints = (0..k as usize)
        .map(|e| Checkpoint {
            num: u32_at(bytes, FIXED_HEADER + 8 * e),
            den: u32_at(bytes, FIXED_HEADER + 8 * e + 4),
        })
        .collect();
    let hard_bytes = &payload[..hard_len];
    let hard: Vec<u32> = match width {
        1 => hard_bytes.iter().map(|&b| u32::from(b)).collect(),
        2 => hard_bytes
            .chunks_exact(2)
            .map(|b| u32::from(u16::from_le_bytes([b[0], b[1]])))
            .collect(),
        _ => hard_bytes.chunks_exact(4).map(|b| u32_at(b, 0)).collect(),
    };
    debug_assert_eq!(hard.len(), cells);
    let soft = has_soft.then(|| {
        payload[hard_len..hard_len + soft_len as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
            .collect()
    });
    PredictionLog::new(n as usize, checkpoints, t as usize, c as usize, hard, soft).map_err(|e| match e {
        Error::Input(msg) => FormatError::Malformed(msg).into(),
        other => other,
    })
}

/// Write `bytes` to a sibling temp file, sync it, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_log(path: &Path, log: &PredictionLog) -> Result<()> {
    write_atomic(path, &encode_log(log))
}

pub fn read_log(path: &Path) -> Result<PredictionLog> {
    decode_log(&fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsDoc {
    num_classes: usize,
    labels: Vec<u32>,
}

/// `{"num_classes": C, "labels": [...]}`.
pub fn labels_to_json(labels: &LabelSet) -> String {
    let doc = LabelsDoc {
        num_classes: labels.num_classes(),
        labels: labels.labels().to_vec(),
    };
    serde_json::to_string(&doc).expect("labels serialize") + "\n"
}

pub fn labels_from_json(text: &str) -> Result<LabelSet> {
    let doc: LabelsDoc = serde_json::from_str(text)?;
    LabelSet::new(doc.labels, doc.num_classes)
}

pub fn read_labels(path: &Path) -> Result<LabelSet> {
    labels_from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum CheckpointJson {
    Epoch(u32),
    Ratio { num: u32, den: u32 },
}

/// Logs exported by other frameworks.
///
/// ```json
/// {
///   "num_classes": 3,
///   "checkpoints": [1, 2, {"num": 5, "den": 2}],
///   "hard": [[[0, 2], [1, 2], [1, 1]]],
///   "soft": null
/// }
/// ```
///
/// `hard` is indexed `[network][checkpoint][example]`; `soft`, when present,
/// `[network][checkpoint][example][class]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonLog {
    num_classes: usize,
    checkpoints: Vec<CheckpointJson>,
    hard: Vec<Vec<Vec<u32>>>,
    #[serde(default)]
    soft: Option<Vec<Vec<Vec<Vec<f32>>>>>,
}

fn ragged(what: &str) -> Error {
    FormatError::Malformed(format!("ragged {what} array")).into()
}

pub fn log_from_json(text: &str) -> Result<PredictionLog> {
    let doc: JsonLog = serde_json::from_str(text)?;
    let n = doc.hard.len();
    let k = doc.checkpoints.len();
    let t = doc.hard.first().and_then(|h| h.first()).map_or(0, Vec::len);
    let mut hard = Vec::with_capacity(n * k * t);
    for net in &doc.hard {
        if net.len() != k {
            return Err(ragged("hard"));
        }
        for ck in net {
            if ck.len() != t {
                return Err(ragged("hard"));
            }
            hard.extend_from_slice(ck);
        }
    }
    let soft = match doc.soft {
        None => None,
        Some(s) => {
            let mut flat = Vec::with_capacity(n * k * t * doc.num_classes);
            if s.len() != n {
                return Err(ragged("soft"));
            }
            for net in &s {
                if net.len() != k {
                    return Err(ragged("soft"));
                }
                for ck in net {
                    if ck.len() != t {
                        return Err(ragged("soft"));
                    }
                    for p in ck {
                        if p.len() != doc.num_classes {
                            return Err(ragged("soft"));
                        }
                        flat.extend_from_slice(p);
                    }
                }
            }
            Some(flat)
        }
    };
    let checkpoints = doc
        .checkpoints
        .iter()
        .map(|c| match *c {
            CheckpointJson::Epoch(e) => Ok(Checkpoint::epoch(e)),
            CheckpointJson::Ratio { num, den } => Checkpoint::new(num, den),
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionLog::new(n, checkpoints, t, doc.num_classes, hard, soft)
}

pub fn log_to_json(log: &PredictionLog) -> String {
    let (n, k, t, c) = (log.num_networks(), log.num_checkpoints(), log.num_examples(), log.num_classes());
    let doc = JsonLog {
        num_classes: c,
        checkpoints: log
            .checkpoints()
            .iter()
            .map(|cp| {
                if cp.den == 1 {
                    CheckpointJson::Epoch(cp.num)
                } else {
                    CheckpointJson::Ratio { num: cp.num, den: cp.den }
                }
            })
            .collect(),
        hard: (0..n)
            .map(|i| (0..k).map(|e| (0..t).map(|x| log.pred(i, e, x)).collect()).collect())
            .collect(),
        soft: log.has_soft().then(|| {
            (0..n)
                .map(|i| {
                    (0..k)
                        .map(|e| (0..t).map(|x| log.probs(i, e, x).expect("soft present").to_vec()).collect())
                        .collect()
                })
                .collect()
        }),
    };
    serde_json::to_string(&doc).expect("log serializes") + "\n"
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunSpec {
    Toy { dataset: DatasetSpec, training: ToyRunConfig },
    Theory { theory: TheoryConfig },
}

/// Everything needed to regenerate a run, plus digests of what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    #[serde(flatten)]
    pub run: RunSpec,
    /// Output file name to SHA-256 hex digest.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(run: RunSpec) -> Self {
        Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            run,
            outputs: BTreeMap::new(),
        }
    }

    /// SHA-256 of the manifest serialized without its output digests, so a
    /// run's inputs and its completed manifest share one digest.
    pub fn digest(&self) -> String {
        let bare = Self {
            outputs: BTreeMap::new(),
            ..self.clone()
        };
        sha256_hex(&serde_json::to_vec(&bare).expect("manifest serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Provenance carried by every emitted table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Table kind and column-layout version, e.g. `baselines/1`.
    pub schema: String,
    pub toolkit_version: String,
    /// Digest of the run manifest the inputs came from, if one was found.
    pub manifest_sha256: Option<String>,
    /// Digest of the primary input file.
    pub input_sha256: Option<String>,
}

impl Provenance {
    pub fn new(schema: &str, manifest_sha256: Option<String>, input_sha256: Option<String>) -> Self {
        Self {
            schema: schema.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            manifest_sha256,
            input_sha256,
        }
    }

    fn comment(&self) -> String {
        format!(
            "# agreekit {} schema={} manifest_sha256={} input_sha256={}\n",
            self.toolkit_version,
            self.schema,
            self.manifest_sha256.as_deref().unwrap_or("none"),
            self.input_sha256.as_deref().unwrap_or("none"),
        )
    }

    /// Read the provenance line back from a CSV emitted by [`Table::to_csv`].
    pub fn parse_comment(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# agreekit ")?;
        let mut parts = rest.split(' ');
        let version = parts.next()?.to_string();
        let mut fields = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=')?;
            fields.insert(k, v);
        }
        let opt = |k: &str| fields.get(k).filter(|v| **v != "none").map(|v| v.to_string());
        Some(Self {
            schema: fields.get("schema")?.to_string(),
            toolkit_version: version,
            manifest_sha256: opt("manifest_sha256"),
            input_sha256: opt("input_sha256"),
        })
    }
}

/// A CSV table. Cells are preformatted; `None` is written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub provenance: Provenance,
    /// Extra `# key=value` lines after the provenance line.
    pub notes: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl Table {
    pub fn new(provenance: Provenance, columns: &[&str]) -> Self {
        Self {
            provenance,
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<Option<String>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.provenance.comment();
        for (k, v) in &self.notes {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))
                .expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("utf-8 cells"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let malformed = |m: String| Error::from(FormatError::Malformed(m));
        let (first, mut rest) = text.split_once('\n').ok_or_else(|| malformed("empty CSV".into()))?;
        let provenance = Provenance::parse_comment(first).ok_or_else(|| malformed("missing provenance line".into()))?;
        let mut notes = Vec::new();
        while let Some(note) = rest.strip_prefix("# ") {
            let (line, tail) = note.split_once('\n').unwrap_or((note, ""));
            let (k, v) = line.split_once('=').ok_or_else(|| malformed("bad note line".into()))?;
            notes.push((k.to_string(), v.to_string()));
            rest = tail;
        }
        let mut reader = csv::Reader::from_reader(rest.as_bytes());
        let columns = reader
            .headers()
            .map_err(|e| malformed(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| {
                r.map(|rec| rec.iter().map(|c| (!c.is_empty()).then(|| c.to_string())).collect())
                    .map_err(|e| malformed(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { provenance, notes, columns, rows })
    }

    pub fn note_value(&self, key: &str) -> Option<&str> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Column `name` parsed as numbers (`None` for empty cells).
    pub fn numeric_column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::input(format!("no column named {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .as_deref()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| FormatError::Malformed(format!("non-numeric cell {s:?} in {name}")).into())
                    })
                    .transpose()
            })
            .collect()
    }
}

pub fn cell(v: impl ToString) -> Option<String> {
    Some(v.to_string())
}
