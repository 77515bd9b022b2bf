//! On-disk artifacts: clip directories with a text manifest, the binary
//! named-tensor container, and the CSV tables exchanged between stages.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{invalid, mismatch, parse_err, Error, Result};
use crate::fr::{ProxyScores, Task};
use crate::synth::{Clip, Frame};

// ---------------------------------------------------------------------------
// Provenance

/// Identifies the configuration that produced an artifact. Written as a
/// `#` comment at the top of every CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Hashes a canonical `key=value` rendering of the settings.
    pub fn new(settings: &BTreeMap<String, String>, seed: u64) -> Self {
        let mut h = Sha256::new();
        for (k, v) in settings {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        let config_hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Provenance { config_hash, seed }
    }

    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Clip directories

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub content_id: u32,
    pub level: u8,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory clip files are resolved against.
    pub dir: PathBuf,
    pub comments: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn path(&self) -> PathBuf {
        self.dir.join(MANIFEST_NAME)
    }

    pub fn find(&self, content_id: u32, level: u8) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.content_id == content_id && e.level == level)
    }

    pub fn content_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.content_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Clip> {
        load_clip(&self.dir, entry)
    }

    /// Verifies every entry has a reference and a correctly sized file.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.level > 0 && self.find(e.content_id, 0).is_none() {
                return Err(invalid!(
                    "content {} has no reference clip (level 0)",
                    e.content_id
                ));
            }
            let p = self.dir.join(&e.file);
            require_file(&p)?;
            let expected = (e.width * e.height * e.frames * 4) as u64;
            let actual = fs::metadata(&p)?.len();
            if expected != actual {
                return Err(mismatch!(
                    "{}: {actual} bytes, expected {expected}",
                    p.display()
                ));
            }
        }
        Ok(())
    }
}

pub fn clip_file_name(content_id: u32, level: u8) -> String {
    format!("c{content_id:05}_l{level}.f32")
}

/// Writes each clip as raw little-endian f32 luma (frames concatenated)
/// and a manifest with one line per clip.
pub fn write_clips(dir: &Path, clips: &[Clip], comments: &[String]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(clips.len());
    for c in clips {
        c.validate()?;
        let file = clip_file_name(c.content_id, c.distortion_level);
        let mut bytes = Vec::with_capacity(c.frames.len() * c.width() * c.height() * 4);
        for f in &c.frames {
            for v in &f.luma {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(&file), bytes)?;
        entries.push(ManifestEntry {
            content_id: c.content_id,
            level: c.distortion_level,
            width: c.width(),
            height: c.height(),
            frames: c.frames.len(),
            file,
        });
    }
    let manifest = Manifest {
        dir: dir.to_path_buf(),
        comments: comments.to_vec(),
        entries,
    };
    let mut text = String::new();
    for c in comments {
        text.push_str(&format!("# {c}\n"));
    }
    text.push_str("# content_id level width height frames file\n");
    for e in &manifest.entries {
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            e.content_id, e.level, e.width, e.height, e.frames, e.file
        ));
    }
    fs::write(manifest.path(), text)?;
    Ok(manifest)
}

/// Reads a manifest. `path` may name the manifest file or its directory.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    require_file(&file)?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&file)?;
    let mut comments = Vec::new();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err!(
                "{}:{}: expected 6 fields",
                file.display(),
                lineno + 1
            ));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err!("{}:{}: bad number '{s}'", file.display(), lineno + 1))
        };
        entries.push(ManifestEntry {
            content_id: num(f[0])? as u32,
            level: num(f[1])? as u8,
            width: num(f[2])?,
            height: num(f[3])?,
            frames: num(f[4])?,
            file: f[5].to_string(),
        });
    }
    if entries.is_empty() {
        return Err(invalid!("manifest {} lists no clips", file.display()));
    }
    Ok(Manifest {
        dir,
        comments,
        entries,
    })
}

pub fn load_clip(dir: &Path, entry: &ManifestEntry) -> Result<Clip> {
    let p = dir.join(&entry.file);
    require_file(&p)?;
    let mut bytes = Vec::new();
    fs::File::open(&p)?.read_to_end(&mut bytes)?;
    let plane = entry.width * entry.height;
    if bytes.len() != plane * entry.frames * 4 {
        return Err(mismatch!(
            "{}: {} bytes, manifest implies {}",
            p.display(),
            bytes.len(),
            plane * entry.frames * 4
        ));
    }
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let frames = samples
        .chunks_exact(plane)
        .map(|s| Frame::new(entry.width, entry.height, s.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Clip::new(entry.content_id, entry.level, frames)
}

// ---------------------------------------------------------------------------
// Named-tensor container

const MAGIC: &[u8; 8] = b"PVQTENS\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            dtype: DType::F32,
            shape,
            values: values.into_iter().map(|v| v as f32 as f64).collect(),
        }
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            dtype: DType::F64,
            shape,
            values,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::f64(name, vec![1], vec![v])
    }
}

/// Binary layout (all integers little-endian):
///
/// ```text
/// magic "PVQTENS\0" | version u32 | count u32
/// per tensor: name_len u32 | name utf-8 | dtype u8 (0 = f32, 1 = f64)
///             | ndim u32 | dims u64 x ndim | payload
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub tensors: Vec<NamedTensor>,
}

impl TensorContainer {
    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some(t) if t.values.len() == 1 => Ok(t.values[0]),
            _ => Err(parse_err!("container lacks scalar {name}")),
        }
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.get(name)
            .map(|t| t.values.as_slice())
            .ok_or_else(|| parse_err!("container lacks tensor {name}"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(match t.dtype {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.values {
                match t.dtype {
                    DType::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(parse_err!("not a tensor container (bad magic)"));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(parse_err!("unsupported container version {version}"));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| parse_err!("tensor name is not utf-8"))?;
            let dtype = match r.take(1)?[0] {
                0 => DType::F32,
                1 => DType::F64,
                d => return Err(parse_err!("unknown dtype code {d}")),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = match dtype {
                DType::F32 => r
                    .take(n * 4)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect(),
                DType::F64 => r
                    .take(n * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            };
            tensors.push(NamedTensor {
                name,
                dtype,
                shape,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(parse_err!(
                "{} trailing bytes after container",
                bytes.len() - r.pos
            ));
        }
        Ok(TensorContainer { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        require_file(path)?;
        Self::from_bytes(&fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| parse_err!("container truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------
// CSV tables

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    require_file(path)?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err!("{}: {e}", path.display()))
}

fn csv_text(
    prov: &Provenance,
    notes: &[String],
    header: &[String],
    rows: &[Vec<String>],
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| parse_err!("{e}"))?;
    for r in rows {
        w.write_record(r).map_err(|e| parse_err!("{e}"))?;
    }
    let body = w.into_inner().map_err(|e| parse_err!("{e}"))?;
    let mut text = prov.header();
    for n in notes {
        text.push_str(&format!("# {n}\n"));
    }
    Ok(text + &String::from_utf8(body).expect("csv output is utf-8"))
}

/// Writes a CSV with the provenance comment as its first line.
pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    write_csv_with_notes(path, prov, &[], header, rows)
}

/// Like [`write_csv`], with extra `# note` lines after the provenance line.
pub fn write_csv_with_notes(
    path: &Path,
    prov: &Provenance,
    notes: &[String],
    header: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    write_text(path, &csv_text(prov, notes, header, rows)?)
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err!("{}: bad {what} '{s}'", path.display()))
}

/// Clip identifier shared by feature and label tables.
pub fn clip_id(content_id: u32, level: u8) -> u64 {
    content_id as u64 * 10 + level as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub content_id: u32,
    pub level: u8,
    /// `-1` marks the clip-mean row.
    pub frame_index: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetsTable {
    pub tasks: Vec<Task>,
    pub rows: Vec<TargetRow>,
}

impl TargetsTable {
    pub fn from_scores(entries: &[(u32, u8, &ProxyScores)]) -> Result<Self> {
        let tasks = entries
            .first()
            .map(|(_, _, s)| s.tasks.clone())
            .ok_or_else(|| invalid!("no scores"))?;
        let mut rows = Vec::new();
        for (cid, level, s) in entries {
            if s.tasks != tasks {
                return Err(mismatch!("task lists differ between clips"));
            }
            for (i, pf) in s.per_frame.iter().enumerate() {
                rows.push(TargetRow {
                    content_id: *cid,
                    level: *level,
                    frame_index: i as i64,
                    values: pf.clone(),
                });
            }
            rows.push(TargetRow {
                content_id: *cid,
                level: *level,
                frame_index: -1,
                values: s.clip_mean.clone(),
            });
        }
        Ok(TargetsTable { tasks, rows })
    }

    /// Per-frame targets for one clip, ordered by frame index.
    pub fn per_frame(&self, content_id: u32, level: u8) -> Vec<&TargetRow> {
        let mut v: Vec<&TargetRow> = self
            .rows
            .iter()
            .filter(|r| r.content_id == content_id && r.level == level && r.frame_index >= 0)
            .collect();
        v.sort_by_key(|r| r.frame_index);
        v
    }

    pub fn clip_mean(&self, content_id: u32, level: u8) -> Option<&TargetRow> {
        self.rows
            .iter()
            .find(|r| r.content_id == content_id && r.level == level && r.frame_index == -1)
    }

    pub fn write(&self, path: &Path, prov: &Provenance) -> Result<()> {
        self.write_with_notes(path, prov, &[])
    }

    pub fn write_with_notes(&self, path: &Path, prov: &Provenance, notes: &[String]) -> Result<()> {
        let mut header: Vec<String> = ["content_id", "level", "frame_index"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.tasks.iter().map(|t| t.name().to_string()));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![
                    r.content_id.to_string(),
                    r.level.to_string(),
                    r.frame_index.to_string(),
                ];
                v.extend(r.values.iter().map(|x| x.to_string()));
                v
            })
            .collect();
        write_csv_with_notes(path, prov, notes, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        let header = rdr.headers().map_err(|e| parse_err!("{e}"))?.clone();
        if header.len() < 4 || &header[0] != "content_id" || &header[2] != "frame_index" {
            return Err(parse_err!("{}: not a targets table", path.display()));
        }
        let tasks = header
            .iter()
            .skip(3)
            .map(|s| s.parse::<Task>())
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err!("{}: {e}", path.display()))?;
            rows.push(TargetRow {
                content_id: parse_field(&rec[0], "content_id", path)?,
                level: parse_field(&rec[1], "level", path)?,
                frame_index: parse_field(&rec[2], "frame_index", path)?,
                values: (3..rec.len())
                    .map(|i| parse_field(&rec[i], "target", path))
                    .collect::<Result<Vec<_>>>()?,
            });
        }
        Ok(TargetsTable { tasks, rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub clip_id: u64,
    pub content_id: u32,
    pub level: u8,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn content_ids(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.content_id).collect()
    }

    pub fn write(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let mut header: Vec<String> = ["clip_id", "content_id", "level"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.dim()).map(|i| format!("f{i}")));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![
                    r.clip_id.to_string(),
                    r.content_id.to_string(),
                    r.level.to_string(),
                ];
                v.extend(r.values.iter().map(|x| x.to_string()));
                v
            })
            .collect();
        write_csv(path, prov, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        let header = rdr.headers().map_err(|e| parse_err!("{e}"))?.clone();
        if header.len() < 4 || &header[0] != "clip_id" || &header[3] != "f0" {
            return Err(parse_err!("{}: not a feature table", path.display()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err!("{}: {e}", path.display()))?;
            let values = (3..rec.len())
                .map(|i| parse_field::<f64>(&rec[i], "feature", path))
                .collect::<Result<Vec<_>>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(invalid!("{}: non-finite feature", path.display()));
            }
            rows.push(FeatureRow {
                clip_id: parse_field(&rec[0], "clip_id", path)?,
                content_id: parse_field(&rec[1], "content_id", path)?,
                level: parse_field(&rec[2], "level", path)?,
                values,
            });
        }
        Ok(FeatureTable { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub clip_id: u64,
    pub content_id: u32,
    pub level: u8,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTable {
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn get(&self, clip_id: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.clip_id == clip_id)
            .map(|r| r.label)
    }

    /// Labels aligned with `features`, failing on any unlabeled clip.
    pub fn aligned(&self, features: &FeatureTable) -> Result<Vec<f64>> {
        let index: BTreeMap<u64, f64> = self.rows.iter().map(|r| (r.clip_id, r.label)).collect();
        features
            .rows
            .iter()
            .map(|r| {
                index
                    .get(&r.clip_id)
                    .copied()
                    .ok_or_else(|| mismatch!("no label for clip {}", r.clip_id))
            })
            .collect()
    }

    pub fn write(&self, path: &Path, prov: &Provenance) -> Result<()> {
        self.write_with_notes(path, prov, &[])
    }

    pub fn write_with_notes(&self, path: &Path, prov: &Provenance, notes: &[String]) -> Result<()> {
        let header: Vec<String> = ["clip_id", "content_id", "level", "label"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.clip_id.to_string(),
                    r.content_id.to_string(),
                    r.level.to_string(),
                    r.label.to_string(),
                ]
            })
            .collect();
        write_csv_with_notes(path, prov, notes, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        let header = rdr.headers().map_err(|e| parse_err!("{e}"))?.clone();
        if header.len() != 4 || &header[0] != "clip_id" || &header[3] != "label" {
            return Err(parse_err!("{}: not a label table", path.display()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err!("{}: {e}", path.display()))?;
            rows.push(LabelRow {
                clip_id: parse_field(&rec[0], "clip_id", path)?,
                content_id: parse_field(&rec[1], "content_id", path)?,
                level: parse_field(&rec[2], "level", path)?,
                label: parse_field(&rec[3], "label", path)?,
            });
        }
        Ok(LabelTable { rows })
    }
}

/// Generic CSV read used for reports: returns the header and string rows.
pub fn read_csv_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv_reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err!("{e}"))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| parse_err!("{}: {e}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}
