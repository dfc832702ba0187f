use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sns_keyrate::mc::RNG_ALGORITHM;

use crate::commands::{Invocation, Outcome};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub rng_algorithm: String,
    pub software_version: String,
    pub timestamp_unix: u64,
    pub failure_budget_spent: f64,
    /// Path of the CSV this manifest describes, if written to a file.
    pub output: Option<String>,
    pub trace: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes through a temporary file in the destination directory and renames it into place.
fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes the CSV, its optional trace, and the manifest.
pub fn emit(inv: &Invocation, outcome: &Outcome, out: Option<&Path>) -> anyhow::Result<()> {
    let trace_path = match (out, &outcome.trace) {
        (Some(p), Some(t)) => {
            let tp = sibling(p, ".trace.csv");
            write_atomic(&tp, t)?;
            Some(tp)
        }
        _ => None,
    };
    let manifest = Manifest {
        command: inv.name().to_string(),
        invocation: inv.clone(),
        seed: inv.seed(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        failure_budget_spent: outcome.failure_budget_spent,
        output: out.map(|p| p.display().to_string()),
        trace: trace_path.map(|p| p.display().to_string()),
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    match out {
        Some(p) => {
            write_atomic(p, &outcome.csv)?;
            write_atomic(&sibling(p, ".manifest.json"), &json)?;
        }
        None => {
            print!("{}", outcome.csv);
            eprint!("{json}");
        }
    }
    Ok(())
}
