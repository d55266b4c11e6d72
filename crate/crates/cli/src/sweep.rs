//! Parameter sweeps as independent child processes.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::run::write_json;

pub const SUMMARY: &str = "sweep.json";

#[derive(Debug, Clone, Serialize)]
pub struct SweepRun {
    pub index: usize,
    pub overrides: Vec<(String, Value)>,
    pub dir: PathBuf,
    pub exit_code: Option<i32>,
}

/// Parses `key=v1,v2,...`.
pub fn parse_axis(s: &str) -> Result<(String, Vec<Value>)> {
    let Some((k, vs)) = s.split_once('=') else {
        bail!("expected key=v1,v2,..., got {s:?}");
    };
    let values: Vec<Value> = vs
        .split(',')
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    ensure!(!vs.is_empty(), "axis {k:?} has no values");
    Ok((k.trim().to_string(), values))
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid(axes: &[(String, Vec<Value>)]) -> Vec<Vec<(String, Value)>> {
    let mut out = vec![Vec::new()];
    for (k, vs) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                vs.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((k.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    out
}

/// Runs every grid point with `exe run`, at most `jobs` at a time.
pub fn sweep(
    exe: &Path,
    config: &Path,
    base_overrides: &[String],
    axes: &[(String, Vec<Value>)],
    out: &Path,
    jobs: usize,
) -> Result<Vec<SweepRun>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let points = grid(axes);
    let runs: Vec<Mutex<SweepRun>> = points
        .into_iter()
        .enumerate()
        .map(|(index, overrides)| {
            Mutex::new(SweepRun {
                index,
                overrides,
                dir: out.join(format!("run_{index:04}")),
                exit_code: None,
            })
        })
        .collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(runs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(slot) = runs.get(i) else { break };
                let mut run = slot.lock().expect("no panics while holding the lock");
                let mut cmd = Command::new(exe);
                cmd.arg("run")
                    .arg("--config")
                    .arg(config)
                    .arg("--out")
                    .arg(&run.dir);
                for o in base_overrides {
                    cmd.arg("--set").arg(o);
                }
                for (k, v) in &run.overrides {
                    cmd.arg("--set").arg(format!("{k}={v}"));
                }
                run.exit_code = cmd.output().ok().and_then(|o| {
                    let _ = std::fs::write(run.dir.join("stderr.txt"), &o.stderr);
                    o.status.code()
                });
            });
        }
    });
    let runs: Vec<SweepRun> = runs
        .into_iter()
        .map(|m| m.into_inner().expect("threads joined"))
        .collect();
    write_json(&out.join(SUMMARY), &runs)?;
    Ok(runs)
}
