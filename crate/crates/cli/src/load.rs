//! Reading a federation directory written by `decprov run`.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use decprov_core::query::FlowDeclaration;
use decprov_core::{Federation, ProvStore, Visibility};
use serde::Deserialize;

use crate::Failure;

pub const LOG_EXTENSION: &str = "provlog";
pub const REPORT_FILE: &str = "run-report.json";

/// The parts of a run report a query needs.
#[derive(Debug, Default, Deserialize)]
pub struct ReportContext {
    #[serde(default)]
    pub visibility: BTreeMap<String, Visibility>,
    #[serde(default)]
    pub flows: FlowDeclaration,
}

pub struct Loaded {
    pub federation: Federation,
    pub flows: FlowDeclaration,
}

/// Log files in `dir`, sorted by file name.
pub fn log_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == LOG_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read_report(dir: &Path) -> Result<ReportContext, Failure> {
    let path = dir.join(REPORT_FILE);
    if !path.exists() {
        return Ok(ReportContext::default());
    }
    let text = fs::read_to_string(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// Imports every log in `dir`. Visibility and declared flows come from the
/// run report when one is present; stores default to full visibility.
pub fn load_dir(dir: &Path) -> Result<Loaded, Failure> {
    let context = read_report(dir)?;
    let mut federation = Federation::new();
    for path in log_files(dir)? {
        let file = fs::File::open(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let store = ProvStore::import(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if stem != store.domain() {
            return Err(Failure::data(format!(
                "{}: file holds domain {} but is named after {stem}",
                path.display(),
                store.domain()
            )));
        }
        if federation.store(store.domain()).is_some() {
            return Err(Failure::data(format!("{}: duplicate domain {}", path.display(), store.domain())));
        }
        let visibility = context.visibility.get(store.domain()).copied().unwrap_or_default();
        federation.add_store(store, visibility);
    }
    Ok(Loaded {
        federation,
        flows: context.flows,
    })
}

pub fn read_flows(path: &Path) -> Result<FlowDeclaration, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}
