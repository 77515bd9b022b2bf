//! Pipeline configuration: `key = value` lines grouped under `[section]`
//! headers, `#` comments. Unknown sections and keys are errors.
//!
//! ```text
//! seed = 7
//! [data]
//! contents = 40
//! [train]
//! epochs = 10
//! tasks = ssim,ms_ssim,psnr_norm
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{invalid, parse_err, Result};
use crate::fr::{parse_tasks, task_list_string, Task};
use crate::regress::RegressorKind;
use crate::synth::Domain;
use crate::trainer::TrainConfig;

/// Raw parsed sections, keyed by section name (`""` for top level).
pub type Sections = BTreeMap<String, BTreeMap<String, String>>;

pub fn parse_sections(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    let mut section = String::new();
    out.insert(section.clone(), BTreeMap::new());
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err!("line {}: unterminated section header", i + 1))?
                .trim();
            section = name.to_string();
            out.entry(section.clone()).or_default();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err!("line {}: expected key = value", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err!("line {}: empty key", i + 1));
        }
        let sec = out.entry(section.clone()).or_default();
        if sec.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(parse_err!("line {}: duplicate key '{k}'", i + 1));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| parse_err!("[{section}] {key}: bad value '{v}'"))
}

fn bool_value(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(parse_err!(
            "[{section}] {key}: expected true or false, got '{v}'"
        )),
    }
}

/// Parses a `WxH` or `N` (square) geometry.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let s = s.trim();
    let parse = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| parse_err!("bad size '{s}' (expected WxH or N)"))
    };
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

/// Parses a comma-separated list of counts.
pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| parse_err!("bad list entry '{p}' in '{s}'"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub contents: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub domain: Domain,
    pub first_id: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            contents: 40,
            frames: 8,
            width: 96,
            height: 96,
            domain: Domain::Source,
            first_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Also embed the pristine level-0 clips.
    pub include_reference: bool,
    /// Embed every `stride`-th frame.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub model: RegressorKind,
    pub lambda: f64,
    pub folds: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            model: RegressorKind::Svr,
            lambda: 1.0,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub runs: usize,
    pub samplings: usize,
    pub k: Vec<usize>,
    pub regressor: RegressorKind,
    pub zs_epochs: usize,
    pub zs_hidden: usize,
    pub zs_learning_rate: f64,
    pub zs_batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            runs: 100,
            samplings: 100,
            k: vec![10, 20, 50, 100],
            regressor: RegressorKind::Ridge,
            zs_epochs: 200,
            zs_hidden: 32,
            zs_learning_rate: 0.01,
            zs_batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub tasks: Vec<Task>,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub head: HeadConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            data: DataConfig::default(),
            tasks: Task::ALL.to_vec(),
            train: TrainConfig::default(),
            features: FeatureConfig {
                include_reference: false,
                stride: 1,
            },
            head: HeadConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(crate::Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("config {} does not exist", path.display()),
            )));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses a sectioned config. Keys outside any section other than
    /// `seed` are taken as `[train]` keys, so a bare training config also
    /// loads.
    pub fn parse(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        let mut cfg = PipelineConfig::default();
        let mut train_seed_set = false;
        for (section, entries) in &sections {
            for (k, v) in entries {
                let s = section.as_str();
                match (s, k.as_str()) {
                    ("", "seed") => cfg.seed = num(s, k, v)?,
                    ("" | "train", key) => {
                        if key == "seed" {
                            train_seed_set = true;
                        }
                        cfg.train.set(key, v)?
                    }
                    ("data", "contents") => cfg.data.contents = num(s, k, v)?,
                    ("data", "frames") => cfg.data.frames = num(s, k, v)?,
                    ("data", "size") => (cfg.data.width, cfg.data.height) = parse_size(v)?,
                    ("data", "domain") => cfg.data.domain = Domain::parse(v)?,
                    ("data", "first_id") => cfg.data.first_id = num(s, k, v)?,
                    ("fr", "tasks") => cfg.tasks = parse_tasks(v)?,
                    ("features", "include_reference") => {
                        cfg.features.include_reference = bool_value(s, k, v)?
                    }
                    ("features", "stride") => cfg.features.stride = num(s, k, v)?,
                    ("head", "model") => cfg.head.model = RegressorKind::parse(v)?,
                    ("head", "lambda") => cfg.head.lambda = num(s, k, v)?,
                    ("head", "folds") => cfg.head.folds = num(s, k, v)?,
                    ("eval", "runs") => cfg.eval.runs = num(s, k, v)?,
                    ("eval", "samplings") => cfg.eval.samplings = num(s, k, v)?,
                    ("eval", "k") => cfg.eval.k = parse_list(v)?,
                    ("eval", "regressor") => cfg.eval.regressor = RegressorKind::parse(v)?,
                    ("eval", "zs_epochs") => cfg.eval.zs_epochs = num(s, k, v)?,
                    ("eval", "zs_hidden") => cfg.eval.zs_hidden = num(s, k, v)?,
                    ("eval", "zs_learning_rate") => cfg.eval.zs_learning_rate = num(s, k, v)?,
                    ("eval", "zs_batch_size") => cfg.eval.zs_batch_size = num(s, k, v)?,
                    ("data" | "fr" | "features" | "head" | "eval", _) => {
                        return Err(parse_err!("unknown key '{k}' in [{section}]"))
                    }
                    _ => return Err(parse_err!("unknown section [{section}]")),
                }
            }
        }
        if !train_seed_set {
            cfg.train.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.contents == 0 || self.data.frames < 2 {
            return Err(invalid!("[data] needs contents >= 1 and frames >= 2"));
        }
        if self.features.stride == 0 {
            return Err(invalid!("[features] stride must be at least 1"));
        }
        if self.head.folds < 2 {
            return Err(invalid!("[head] folds must be at least 2"));
        }
        if !(self.head.lambda > 0.0) {
            return Err(invalid!("[head] lambda must be positive"));
        }
        if self.eval.k.is_empty() {
            return Err(invalid!("[eval] k list is empty"));
        }
        Ok(())
    }

    /// Canonical `section.key -> value` map, used for provenance hashes.
    pub fn settings(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
        m.insert("data.contents".into(), self.data.contents.to_string());
        m.insert("data.frames".into(), self.data.frames.to_string());
        m.insert(
            "data.size".into(),
            format!("{}x{}", self.data.width, self.data.height),
        );
        m.insert("data.domain".into(), self.data.domain.name().into());
        m.insert("data.first_id".into(), self.data.first_id.to_string());
        m.insert("fr.tasks".into(), task_list_string(&self.tasks));
        for (k, v) in self.train.pairs() {
            m.insert(format!("train.{k}"), v);
        }
        m.insert(
            "features.include_reference".into(),
            self.features.include_reference.to_string(),
        );
        m.insert("features.stride".into(), self.features.stride.to_string());
        m.insert("head.model".into(), self.head.model.name().into());
        m.insert("head.lambda".into(), self.head.lambda.to_string());
        m.insert("head.folds".into(), self.head.folds.to_string());
        m.insert("eval.runs".into(), self.eval.runs.to_string());
        m.insert("eval.samplings".into(), self.eval.samplings.to_string());
        m.insert(
            "eval.k".into(),
            self.eval
                .k
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("eval.regressor".into(), self.eval.regressor.name().into());
        m.insert("eval.zs_epochs".into(), self.eval.zs_epochs.to_string());
        m.insert("eval.zs_hidden".into(), self.eval.zs_hidden.to_string());
        m.insert(
            "eval.zs_learning_rate".into(),
            self.eval.zs_learning_rate.to_string(),
        );
        m.insert(
            "eval.zs_batch_size".into(),
            self.eval.zs_batch_size.to_string(),
        );
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let c = PipelineConfig::parse(
            "seed = 3\n# comment\n[data]\nsize = 64x48\n[train]\nepochs = 2 # trailing\ntasks = ssim\n[eval]\nk = 10,20\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!((c.data.width, c.data.height), (64, 48));
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.tasks, vec![Task::Ssim]);
        assert_eq!(c.eval.k, vec![10, 20]);
        assert_eq!(c.data.contents, 40);
    }

    #[test]
    fn bare_keys_are_training_keys() {
        let c = PipelineConfig::parse("epochs = 4\nlearning_rate = 0.02\n").unwrap();
        assert_eq!(c.train.epochs, 4);
        assert_eq!(c.train.learning_rate, 0.02);
    }

    #[test]
    fn rejects_unknown_keys_sections_and_duplicates() {
        assert!(PipelineConfig::parse("[data]\ncolour = red\n").is_err());
        assert!(PipelineConfig::parse("[nope]\na = 1\n").is_err());
        assert!(PipelineConfig::parse("epochz = 1\n").is_err());
        assert!(PipelineConfig::parse("[train]\nepochs = 1\nepochs = 2\n").is_err());
        assert!(PipelineConfig::parse("[train\n").is_err());
        assert!(PipelineConfig::parse("[train]\nbatch_size = 0\n").is_err());
    }

    #[test]
    fn sizes_and_lists() {
        assert_eq!(parse_size("96").unwrap(), (96, 96));
        assert_eq!(parse_size("64x32").unwrap(), (64, 32));
        assert!(parse_size("ax3").is_err());
        assert_eq!(parse_list("1, 2,3").unwrap(), vec![1, 2, 3]);
    }
}
