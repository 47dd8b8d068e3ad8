use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cell::GateVariant;
use crate::error::{Error, Result};
use crate::layers::DropoutSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pixelwise,
    Rowwise,
    Tokens,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pixelwise => "pixelwise",
            Task::Rowwise => "rowwise",
            Task::Tokens => "tokens",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixelwise" => Ok(Task::Pixelwise),
            "rowwise" => Ok(Task::Rowwise),
            "tokens" => Ok(Task::Tokens),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

/// Where a dataset lives: `idx:<images>,<labels>` or `tokens:<path>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSpec {
    Idx { images: PathBuf, labels: PathBuf },
    Tokens { path: PathBuf },
}

impl FromStr for DataSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("idx:") {
            let (images, labels) = rest
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("idx data needs <images>,<labels>: {s:?}")))?;
            return Ok(DataSpec::Idx {
                images: images.into(),
                labels: labels.into(),
            });
        }
        if let Some(path) = s.strip_prefix("tokens:") {
            return Ok(DataSpec::Tokens { path: path.into() });
        }
        Err(Error::Config(format!(
            "data spec must start with idx: or tokens:, got {s:?}"
        )))
    }
}

impl DataSpec {
    pub fn resolve(&self, base: &Path) -> DataSpec {
        match self {
            DataSpec::Idx { images, labels } => DataSpec::Idx {
                images: base.join(images),
                labels: base.join(labels),
            },
            DataSpec::Tokens { path } => DataSpec::Tokens { path: base.join(path) },
        }
    }
}

/// Everything that defines a training run. Serialized as the JSON config
/// file and embedded verbatim in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub variant: GateVariant,
    pub hidden: usize,
    pub eta0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: DropoutSpec,
    pub embedding_dim: usize,
    pub vocab_limit: usize,
    pub maxlen: usize,
    /// Number of leading training samples to use; 0 means all.
    pub train_size: usize,
    pub test_size: usize,
    pub train_data: String,
    pub test_data: String,
    pub output_dir: String,
    pub forget_bias_one: bool,
    /// Write wall-clock seconds to the metrics; off gives reproducible CSVs.
    pub record_time: bool,
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        let mnist = |split: &str| {
            format!("idx:data/mnist/{split}-images-idx3-ubyte,data/mnist/{split}-labels-idx1-ubyte")
        };
        let base = ExperimentConfig {
            task,
            variant: GateVariant::Standard,
            hidden: 100,
            eta0: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 25,
            seed: 1,
            dropout: DropoutSpec::default(),
            embedding_dim: 0,
            vocab_limit: 0,
            maxlen: 0,
            train_size: 0,
            test_size: 0,
            train_data: mnist("train"),
            test_data: mnist("t10k"),
            output_dir: format!("runs/{task}"),
            forget_bias_one: false,
            record_time: true,
        };
        match task {
            Task::Pixelwise => base,
            Task::Rowwise => ExperimentConfig {
                hidden: 50,
                max_epochs: 200,
                ..base
            },
            Task::Tokens => ExperimentConfig {
                hidden: 128,
                eta0: 1e-5,
                embedding_dim: 128,
                vocab_limit: 20_000,
                maxlen: 80,
                dropout: DropoutSpec {
                    signal_rate: 0.2,
                    weight_row_rate: 0.2,
                },
                train_data: "tokens:data/imdb/train.tok".into(),
                test_data: "tokens:data/imdb/test.tok".into(),
                ..base
            },
        }
    }

    /// Task defaults overlaid with the fields present in `json` and then
    /// with `key=value` overrides (dotted keys reach nested fields).
    pub fn from_json_with_overrides(json: &str, overrides: &[String]) -> Result<Self> {
        let given: Value =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(given) = given else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut merged = Value::Object(given);
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            set_path(&mut merged, key, value)?;
        }
        let task: Task = match merged.get("task") {
            Some(t) => serde_json::from_value(t.clone()).map_err(|e| Error::Config(format!("task: {e}")))?,
            None => return Err(Error::Config("config needs a \"task\" field".into())),
        };
        let mut full = serde_json::to_value(ExperimentConfig::for_task(task)).expect("config serializes");
        merge(&mut full, merged);
        let config: ExperimentConfig =
            serde_json::from_value(full).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        self.dropout.validate()?;
        if self.task == Task::Tokens {
            if self.embedding_dim == 0 || self.maxlen == 0 {
                return Err(Error::Config("tokens task needs embedding_dim and maxlen".into()));
            }
        } else if self.dropout.signal_rate > 0.0 {
            return Err(Error::Config("signal dropout applies to the embedding (tokens task)".into()));
        }
        self.train_data.parse::<DataSpec>()?;
        self.test_data.parse::<DataSpec>()?;
        Ok(())
    }

    /// Size of the embedding table: padding, OOV and every id up to `vocab_limit`.
    pub fn embedding_rows(&self) -> usize {
        self.vocab_limit.max(1) + 1
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let Value::Object(map) = node else {
            return Err(Error::Config(format!("override {key:?} descends into a non-object")));
        };
        if parts.peek().is_none() {
            map.insert(part.to_owned(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let p = ExperimentConfig::for_task(Task::Pixelwise);
        assert_eq!((p.hidden, p.max_epochs, p.batch_size, p.patience), (100, 100, 32, 25));
        let r = ExperimentConfig::for_task(Task::Rowwise);
        assert_eq!((r.hidden, r.max_epochs), (50, 200));
        let t = ExperimentConfig::for_task(Task::Tokens);
        assert_eq!((t.hidden, t.embedding_dim, t.maxlen, t.vocab_limit), (128, 128, 80, 20_000));
        assert_eq!((t.dropout.signal_rate, t.dropout.weight_row_rate), (0.2, 0.2));
        assert_eq!(t.max_epochs, 100);
        for c in [p, r, t] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn json_overlay_and_overrides() {
        let c = ExperimentConfig::from_json_with_overrides(
            r#"{"task": "rowwise", "variant": "lstm2", "eta0": 0.01}"#,
            &["hidden=12".into(), "dropout.weight_row_rate=0.1".into(), "output_dir=out/x".into()],
        )
        .unwrap();
        assert_eq!(c.variant, GateVariant::Lstm2);
        assert_eq!((c.hidden, c.eta0, c.max_epochs), (12, 0.01, 200));
        assert_eq!(c.dropout.weight_row_rate, 0.1);
        assert_eq!(c.output_dir, "out/x");

        let again = ExperimentConfig::from_json_with_overrides(&c.to_canonical_json(), &[]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn config_errors() {
        let bad = |json: &str, o: &[&str]| {
            let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
            ExperimentConfig::from_json_with_overrides(json, &o).unwrap_err().category()
        };
        assert_eq!(bad("{}", &[]), "config");
        assert_eq!(bad("[1]", &[]), "config");
        assert_eq!(bad(r#"{"task":"rowwise","colour":1}"#, &[]), "config");
        assert_eq!(bad(r#"{"task":"rowwise"}"#, &["hidden=0"]), "config");
        assert_eq!(bad(r#"{"task":"rowwise"}"#, &["eta0=-1"]), "config");
        assert_eq!(bad(r#"{"task":"rowwise"}"#, &["nonsense"]), "config");
        assert_eq!(bad(r#"{"task":"tokens"}"#, &["dropout.signal_rate=1.0"]), "config");
        assert_eq!(bad(r#"{"task":"rowwise"}"#, &["train_data=mnist"]), "config");
        assert_eq!(bad(r#"{"task":"rowwise"}"#, &["variant=lstm9"]), "config");
    }

    #[test]
    fn data_specs() {
        assert_eq!(
            "idx:a/i,b/l".parse::<DataSpec>().unwrap(),
            DataSpec::Idx { images: "a/i".into(), labels: "b/l".into() }
        );
        assert_eq!(
            "tokens:t.txt".parse::<DataSpec>().unwrap(),
            DataSpec::Tokens { path: "t.txt".into() }
        );
        assert!("idx:only".parse::<DataSpec>().is_err());
        assert!("csv:x".parse::<DataSpec>().is_err());
    }
}
