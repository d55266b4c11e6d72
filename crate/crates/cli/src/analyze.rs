//! Reports over a finished run directory.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rwch::analysis::{audit, detect_steady_state, AsymptoticsReport, AuditReport};
use rwch::io::parse_field;
use rwch::{Snapshot, StepDiagnostics, Trajectory};
use serde::Serialize;

use crate::manifest::{self, Manifest};
use crate::run::{read_json, snapshot_path, write_json, Status, DIAGNOSTICS, MANIFEST, STATUS};

pub const AUDIT: &str = "audit.json";
pub const ASYMPTOTICS: &str = "asymptotics.json";

#[derive(Debug, Clone, Serialize)]
pub struct Asymptotics {
    #[serde(flatten)]
    pub report: AsymptoticsReport,
    pub window: usize,
    pub tol: f64,
    /// First step from which every later snapshot-to-snapshot rate is within `tol`.
    pub steady_since: Option<usize>,
}

pub struct Analysis {
    pub audit: AuditReport,
    pub asymptotics: Asymptotics,
}

/// Reads the stored trajectory back, rejecting incomplete runs.
pub fn load_trajectory(dir: &Path) -> Result<(Manifest, Trajectory)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let status: Status = read_json(&dir.join(STATUS))?;
    if !status.complete {
        bail!(
            "incomplete trajectory in {}: last valid step {}{}",
            dir.display(),
            status.last_step.map_or("none".into(), |s| s.to_string()),
            status.error.map(|e| format!(" ({e})")).unwrap_or_default()
        );
    }
    let text = fs::read_to_string(dir.join(DIAGNOSTICS)).context("reading diagnostics")?;
    let diagnostics: Vec<StepDiagnostics> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("diagnostics line {}", i + 1))
        })
        .collect::<Result<_>>()?;
    if diagnostics.last().map(|d| d.step) != status.last_step {
        bail!(
            "diagnostics stream does not end at step {:?}",
            status.last_step
        );
    }
    let n = manifest.n.context("manifest has no node count")?;
    let labels = manifest::problem(&manifest.config)?
        .m1
        .space()
        .labels()
        .map(<[String]>::to_vec);
    let mut snapshots = Vec::new();
    for d in &diagnostics {
        let path = snapshot_path(dir, d.step);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let u =
            parse_field(&text, n, labels.as_deref()).with_context(|| path.display().to_string())?;
        snapshots.push(Snapshot {
            step: d.step,
            t: d.t,
            u,
            v: None,
            mu: None,
        });
    }
    let traj = Trajectory {
        tau: manifest.config.tau,
        snapshot_stride: manifest.config.solver.snapshot_stride,
        diagnostics,
        snapshots,
        notices: status.notices,
    };
    Ok((manifest, traj))
}

pub fn analyze(dir: &Path, window: Option<usize>, tol: Option<f64>) -> Result<Analysis> {
    let (manifest, traj) = load_trajectory(dir)?;
    let cfg = &manifest.config;
    let prob = manifest::problem(cfg)?;
    let window = window.unwrap_or(cfg.analysis.steady_window);
    let tol = tol.or(cfg.analysis.steady_tol).unwrap_or_else(|| {
        let u0 = prob.m1.nu().norm_l2(prob.u0.as_slice());
        1e-8 * (1.0 + u0)
    });
    let report = detect_steady_state(&prob, &traj, window, tol);
    let nu = prob.m1.nu();
    let mut steady_since = None;
    for w in traj.snapshots.windows(2).rev() {
        let rate = nu.norm_l2((&w[1].u - &w[0].u).as_slice()) / (w[1].t - w[0].t);
        if rate > tol {
            break;
        }
        steady_since = Some(w[1].step);
    }
    let analysis = Analysis {
        audit: audit(&traj, &prob),
        asymptotics: Asymptotics {
            report,
            window,
            tol,
            steady_since,
        },
    };
    write_json(&dir.join(AUDIT), &analysis.audit)?;
    write_json(&dir.join(ASYMPTOTICS), &analysis.asymptotics)?;
    Ok(analysis)
}
