//! `key = value` run configuration with section prefixes.
//!
//! Every section mirrors one library config struct. Parsing starts from
//! the defaults, so a file only needs the keys it changes; keys that do not
//! exist in the defaults are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use simrod_core::data::{CorruptionKind, SeverityTable, ShapesConfig};
use simrod_core::domainmix::MixConfig;
use simrod_core::seed::derive;
use simrod_core::{AdaptConfig, DetectorConfig, TrainConfig};

pub const SEED_ENV: &str = "SIMROD_SEED";

/// Split sizes written by `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source_images: usize,
    pub target_images: usize,
    pub test_images: usize,
}

/// The shift applied by `corrupt`: images cycle through `kinds` at one
/// severity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptConfig {
    pub kinds: Vec<CorruptionKind>,
    pub severity: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub shapes: ShapesConfig,
    pub corrupt: CorruptConfig,
    pub severity: SeverityTable,
    pub student: DetectorConfig,
    pub teacher: DetectorConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub mix: MixConfig,
}

/// Fields owned by the pipeline rather than the file: split sizes, ids and
/// seeds are set per command, mode flags come from `--mode`.
const SKIP: &[(&str, &[&str])] = &[
    ("shapes", &["n_images", "rng_seed", "id_prefix"]),
    ("student", &["n_classes", "init_seed"]),
    ("teacher", &["n_classes", "init_seed"]),
    ("train", &["rng_seed"]),
    ("adapt", &["rng_seed", "mix", "use_tg", "use_dmx", "use_ga", "use_ft"]),
];

impl Default for RunConfig {
    fn default() -> Self {
        let shapes = ShapesConfig::default();
        let n = shapes.n_classes;
        let student = DetectorConfig::small(n);
        // Collages are built at twice the input and train at that size, so
        // one batch of four carries sixteen images; 28 steps then cover
        // roughly one pass over the source split.
        let mut adapt = AdaptConfig::new(10, 2 * student.input_size);
        adapt.batch_size = 4;
        adapt.steps_per_epoch = 28;
        Self {
            seed: 0,
            data: DataConfig {
                source_images: 500,
                target_images: 500,
                test_images: 200,
            },
            corrupt: CorruptConfig {
                kinds: CorruptionKind::ALL.to_vec(),
                severity: 3,
            },
            severity: SeverityTable::default(),
            mix: adapt.mix.clone(),
            teacher: DetectorConfig::teacher(n),
            student,
            train: TrainConfig::default(),
            adapt,
            shapes,
        }
    }
}

fn skipped(section: &str) -> &'static [&'static str] {
    SKIP.iter().find(|(s, _)| *s == section).map_or(&[], |(_, k)| k)
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Parses `raw` into a value shaped like `template`.
fn parse_like(template: &Value, raw: &str) -> std::result::Result<Value, String> {
    match template {
        Value::Bool(_) => raw.parse().map(Value::Bool).map_err(|_| format!("expected true/false, got '{raw}'")),
        Value::Number(n) if n.is_u64() => raw
            .parse::<u64>()
            .map(|v| Value::Number(v.into()))
            .map_err(|_| format!("expected a non-negative integer, got '{raw}'")),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| format!("expected a number, got '{raw}'"))?;
            Number::from_f64(v).map(Value::Number).ok_or_else(|| format!("non-finite number '{raw}'"))
        }
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Array(items) => {
            let elem = items.first().ok_or("cannot infer element type of an empty list")?;
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_like(elem, s))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        _ => Err("unsupported value type".into()),
    }
}

struct Section {
    name: &'static str,
    value: Map<String, Value>,
}

impl RunConfig {
    fn sections(&self) -> Result<Vec<Section>> {
        let to_map = |name: &'static str, v: Value| -> Result<Section> {
            let Value::Object(mut m) = v else {
                bail!("section {name} is not a struct");
            };
            for k in skipped(name) {
                m.remove(*k);
            }
            Ok(Section { name, value: m })
        };
        Ok(vec![
            to_map("data", serde_json::to_value(&self.data)?)?,
            to_map("shapes", serde_json::to_value(&self.shapes)?)?,
            to_map("corrupt", serde_json::to_value(&self.corrupt)?)?,
            to_map("severity", serde_json::to_value(&self.severity)?)?,
            to_map("student", serde_json::to_value(&self.student)?)?,
            to_map("teacher", serde_json::to_value(&self.teacher)?)?,
            to_map("train", serde_json::to_value(&self.train)?)?,
            to_map("adapt", serde_json::to_value(&self.adapt)?)?,
            to_map("mix", serde_json::to_value(&self.mix)?)?,
        ])
    }

    /// The full key set with current values, in file order.
    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        writeln!(s, "seed = {}", self.seed)?;
        for sec in self.sections()? {
            writeln!(s)?;
            for (k, v) in &sec.value {
                writeln!(s, "{}.{k} = {}", sec.name, scalar_text(v))?;
            }
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut sections: BTreeMap<&'static str, Map<String, Value>> =
            cfg.sections()?.into_iter().map(|s| (s.name, s.value)).collect();
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| anyhow!("config line {lineno}: expected 'key = value'"))?;
            if let Some(prev) = seen.insert(key.to_string(), lineno) {
                bail!("config key '{key}': set twice (lines {prev} and {lineno})");
            }
            if key == "seed" {
                cfg.seed = raw.parse().map_err(|_| anyhow!("config key 'seed': expected an integer, got '{raw}'"))?;
                continue;
            }
            let slot = key
                .split_once('.')
                .and_then(|(sec, field)| sections.get_mut(sec).and_then(|m| m.get_mut(field)))
                .ok_or_else(|| anyhow!("config key '{key}': unknown key (line {lineno})"))?;
            *slot = parse_like(slot, raw).map_err(|e| anyhow!("config key '{key}': {e}"))?;
        }

        fn take<T: DeserializeOwned>(
            sections: &mut BTreeMap<&'static str, Map<String, Value>>,
            name: &str,
            base: &T,
        ) -> Result<T>
        where
            T: Serialize,
        {
            // Skipped fields come back from the defaults.
            let Value::Object(mut full) = serde_json::to_value(base)? else {
                bail!("section {name} is not a struct");
            };
            full.extend(sections.remove(name).unwrap_or_default());
            serde_json::from_value(Value::Object(full)).with_context(|| format!("config section '{name}'"))
        }
        let mut s = sections;
        cfg.data = take(&mut s, "data", &cfg.data)?;
        cfg.shapes = take(&mut s, "shapes", &cfg.shapes)?;
        cfg.corrupt = take(&mut s, "corrupt", &cfg.corrupt)?;
        cfg.severity = take(&mut s, "severity", &cfg.severity)?;
        cfg.student = take(&mut s, "student", &cfg.student)?;
        cfg.teacher = take(&mut s, "teacher", &cfg.teacher)?;
        cfg.train = take(&mut s, "train", &cfg.train)?;
        cfg.adapt = take(&mut s, "adapt", &cfg.adapt)?;
        cfg.mix = take(&mut s, "mix", &cfg.mix)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file (or the defaults when `path` is `None`) and
    /// applies the seed override from the environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| anyhow!("config key 'seed': {SEED_ENV}='{v}' is not an integer"))?;
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.corrupt.kinds.is_empty() {
            bail!("config key 'corrupt.kinds': at least one kind is required");
        }
        if !(1..=5).contains(&self.corrupt.severity) {
            bail!("config key 'corrupt.severity': {} outside 1..=5", self.corrupt.severity);
        }
        for (name, d) in [("student", &self.student), ("teacher", &self.teacher)] {
            self.detector(d, name).validate().with_context(|| format!("config section '{name}'"))?;
        }
        self.train.validate().context("config section 'train'")?;
        self.adapt_config().validate().context("config section 'adapt'")?;
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive(self.seed, stage)
    }

    fn detector(&self, base: &DetectorConfig, role: &str) -> DetectorConfig {
        DetectorConfig {
            n_classes: self.shapes.n_classes,
            init_seed: self.stage_seed(&format!("init:{role}")),
            ..base.clone()
        }
    }

    pub fn student_config(&self) -> DetectorConfig {
        self.detector(&self.student, "student")
    }

    pub fn teacher_config(&self) -> DetectorConfig {
        self.detector(&self.teacher, "teacher")
    }

    pub fn shapes_for(&self, split: &str, n_images: usize) -> ShapesConfig {
        ShapesConfig {
            n_images,
            rng_seed: self.stage_seed(&format!("gen-data:{split}")),
            id_prefix: split.to_string(),
            ..self.shapes.clone()
        }
    }

    pub fn train_config(&self, role: &str) -> TrainConfig {
        TrainConfig {
            rng_seed: self.stage_seed(&format!("train-source:{role}")),
            ..self.train.clone()
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            mix: self.mix.clone(),
            rng_seed: self.stage_seed("adapt"),
            ..self.adapt.clone()
        }
    }
}
