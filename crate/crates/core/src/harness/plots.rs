//! Plot emission: tidy CSVs plus a self-contained matplotlib script.
//! Nothing is rendered at run time; the script is written as text so the
//! artifacts stay reproducible byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::RunSummary;
use crate::harness::SCHEMA_VERSION;

const REGRET_CSV: &str = "regret_curves.csv";
const VIOLATIONS_CSV: &str = "violations.csv";
const PLOT_SCRIPT: &str = "plot_regret.py";
const MANIFEST: &str = "manifest.json";

const SCRIPT_TEMPLATE: &str = r#"#!/usr/bin/env python3
"""Render regret curves and violation counts from the tidy CSVs.

Run from the directory containing regret_curves.csv and violations.csv.
"""
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


curves = defaultdict(list)
for row in load("regret_curves.csv"):
    key = (row["config_sha256"][:8], row["label"], row["seed"])
    curves[key].append((int(row["t"]), float(row["cum_regret"])))

fig, ax = plt.subplots(figsize=(7, 4.5))
for (cfg, label, seed), points in sorted(curves.items()):
    points.sort()
    ax.plot(
        [t for t, _ in points],
        [r for _, r in points],
        alpha=0.6,
        label=f"{label} {cfg} seed={seed}",
    )
ax.set_xlabel("round")
ax.set_ylabel("cumulative regret")
if len(curves) <= 12:
    ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("regret_curves.png", dpi=150)

rows = load("violations.csv")
fig, ax = plt.subplots(figsize=(7, 4.5))
ax.bar(range(len(rows)), [int(r["violations"]) for r in rows])
ax.set_xticks(range(len(rows)))
ax.set_xticklabels([f'{r["label"]}:{r["seed"]}' for r in rows], rotation=90, fontsize=6)
ax.set_ylabel("post-warm-up violations")
fig.tight_layout()
fig.savefig("violations.png", dpi=150)
print("wrote regret_curves.png and violations.png")
"#;

/// Index of the files a plot emission produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub schema_version: u32,
    pub files: Vec<String>,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Emit tidy CSVs plus the plotting script for the given summaries.
/// Output bytes depend only on the summaries' content.
pub fn emit_plots(summaries: &[RunSummary], out_dir: &Path) -> Result<PlotManifest> {
    fs::create_dir_all(out_dir)?;
    let mut ordered: Vec<&RunSummary> = summaries.iter().collect();
    ordered.sort_by(|a, b| (&a.config_hash, a.seed).cmp(&(&b.config_hash, b.seed)));

    let mut files = Vec::new();
    if !ordered.is_empty() {
        let mut regret = String::from("config_sha256,label,seed,t,cum_regret\n");
        for s in &ordered {
            for (i, r) in s.cum_regret.iter().enumerate() {
                regret.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.config_hash,
                    s.label,
                    s.seed,
                    i + 1,
                    fmt_float(*r)
                ));
            }
        }
        fs::write(out_dir.join(REGRET_CSV), regret)?;

        let mut viol =
            String::from("config_sha256,label,seed,horizon,violations,final_regret\n");
        for s in &ordered {
            viol.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.config_hash,
                s.label,
                s.seed,
                s.horizon,
                s.violations,
                fmt_float(s.final_regret)
            ));
        }
        fs::write(out_dir.join(VIOLATIONS_CSV), viol)?;
        fs::write(out_dir.join(PLOT_SCRIPT), SCRIPT_TEMPLATE)?;
        files = vec![
            REGRET_CSV.to_string(),
            VIOLATIONS_CSV.to_string(),
            PLOT_SCRIPT.to_string(),
        ];
    }

    let manifest = PlotManifest {
        schema_version: SCHEMA_VERSION,
        files,
    };
    fs::write(
        out_dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Load summaries from JSON files and emit plots. Any missing path fails
/// up front with every missing file listed.
pub fn emit_plots_from_files(paths: &[PathBuf], out_dir: &Path) -> Result<PlotManifest> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing summary files: {}", missing.join(", ")),
        )));
    }
    let mut summaries = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(p)?;
        summaries.push(serde_json::from_str::<RunSummary>(&text)?);
    }
    emit_plots(&summaries, out_dir)
}
