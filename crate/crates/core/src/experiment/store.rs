use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{CurvePoint, TrainOutcome};
use crate::error::{Error, Result};
use crate::stability::RunRecord;

const LOG: &str = "runs.jsonl";
const CURVES: &str = "curves";
const CONFIGS: &str = "configs";

/// Append-only run log (`runs.jsonl`, one record per line) with a CSV metric
/// curve per run under `curves/`. Each append is flushed to disk before it
/// returns, so completed records survive a crash later in a sweep.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    ids: HashSet<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredRun {
    pub record: RunRecord,
    pub curve: Vec<CurvePoint>,
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.join(CURVES), root.join(CONFIGS)] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut store = Self { root, ids: HashSet::new() };
        store.ids = store.records()?.into_iter().map(|r| r.id).collect();
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG)
    }

    pub fn curve_path(&self, id: &str) -> PathBuf {
        self.root.join(CURVES).join(format!("{id}.csv"))
    }

    pub fn config_path(&self, id: &str) -> PathBuf {
        self.root.join(CONFIGS).join(format!("{id}.toml"))
    }

    /// Every complete record in append order. A torn final line (no trailing
    /// newline) is ignored; a malformed complete line is an error.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        let path = self.log_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..i],
            None => "",
        };
        complete
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }

    /// Stores a finished run, plus its resolved config when given, and
    /// returns the record as written. Clashing ids get a numeric suffix.
    pub fn append(&mut self, outcome: &TrainOutcome, config_toml: Option<&str>) -> Result<RunRecord> {
        let mut record = outcome.record.clone();
        if self.ids.contains(&record.id) {
            let base = record.id.clone();
            record.id = (2..).map(|k| format!("{base}-{k}")).find(|id| !self.ids.contains(id)).expect("unbounded");
        }
        record.validate()?;

        let mut w = crate::csv_writer(Vec::new());
        for p in &outcome.curve {
            w.serialize(p)?;
        }
        if outcome.curve.is_empty() {
            w.write_record(["epoch", "train_loss", "val_err", "val_err_ema", "lr"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        write_synced(&self.curve_path(&record.id), &bytes)?;
        if let Some(text) = config_toml {
            write_synced(&self.config_path(&record.id), text.as_bytes())?;
        }

        let path = self.log_path();
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let mut log = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        log.write_all(line.as_bytes()).and_then(|_| log.sync_all()).map_err(|e| Error::io(&path, e))?;
        self.ids.insert(record.id.clone());
        Ok(record)
    }

    pub fn curve(&self, id: &str) -> Result<Vec<CurvePoint>> {
        let path = self.curve_path(id);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        csv::Reader::from_reader(file).deserialize().map(|r| r.map_err(Error::from)).collect()
    }

    pub fn runs(&self) -> Result<Vec<StoredRun>> {
        self.records()?
            .into_iter()
            .map(|record| Ok(StoredRun { curve: self.curve(&record.id)?, record }))
            .collect()
    }
}
