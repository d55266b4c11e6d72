//! Time stepping with streamed output.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json        resolved config and pre-run checks, written before stepping
//! diagnostics.jsonl    one record per step
//! snapshots/u_<step>   `node value` lines at the snapshot stride and the last step
//! status.json          completion flag, last step written, solver notices or error
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rwch::cahn_hilliard::solve_with;
use rwch::io::write_field;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{self, Manifest};

pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.jsonl";
pub const SNAPSHOTS: &str = "snapshots";
pub const STATUS: &str = "status.json";

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(SNAPSHOTS).join(format!("u_{step:08}.txt"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub complete: bool,
    pub steps_planned: usize,
    /// Last step whose diagnostics were written.
    pub last_step: Option<usize>,
    #[serde(default)]
    pub notices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes the manifest, refusing to step when a check failed.
pub fn prepare(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir.join(SNAPSHOTS))
        .with_context(|| format!("creating {}", dir.display()))?;
    let m = manifest::validate(cfg);
    write_json(&dir.join(MANIFEST), &m)?;
    if !m.passed {
        let names: Vec<String> = m
            .failures()
            .map(|c| format!("{} ({})", c.name, c.detail))
            .collect();
        bail!("validation failed: {}", names.join("; "));
    }
    Ok(m)
}

/// Integrates the configured problem into `dir`. Partial output stays on disk on failure,
/// with `status.json` marking it incomplete.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<Status> {
    prepare(cfg, dir)?;
    let prob = manifest::problem(cfg)?;
    let labels = prob.m1.space().labels().map(<[String]>::to_vec);
    let stride = cfg.solver.snapshot_stride;
    let last = prob.steps();
    let mut status = Status {
        complete: false,
        steps_planned: last,
        last_step: None,
        notices: Vec::new(),
        error: None,
    };
    write_json(&dir.join(STATUS), &status)?;

    let file = File::create(dir.join(DIAGNOSTICS))?;
    let mut diag = BufWriter::new(file);
    let mut last_written = None;
    let result = solve_with(&prob, &mut |rec| {
        let d = rec.diagnostics;
        let write = |diag: &mut BufWriter<File>| -> std::io::Result<()> {
            serde_json::to_writer(&mut *diag, d)?;
            diag.write_all(b"\n")?;
            if d.step % stride == 0 || d.step == last {
                fs::write(
                    snapshot_path(dir, d.step),
                    write_field(rec.u, labels.as_deref()),
                )?;
            }
            Ok(())
        };
        write(&mut diag)?;
        last_written = Some(d.step);
        Ok(())
    });
    diag.flush()?;
    status.last_step = last_written;
    match result {
        Ok(summary) => {
            status.complete = true;
            status.notices = summary.notices;
            write_json(&dir.join(STATUS), &status)?;
            Ok(status)
        }
        Err(e) => {
            status.error = Some(e.to_string());
            write_json(&dir.join(STATUS), &status)?;
            Err(anyhow::Error::new(e).context(format!(
                "run incomplete; last step written: {}",
                last_written.map_or("none".into(), |s| s.to_string())
            )))
        }
    }
}
