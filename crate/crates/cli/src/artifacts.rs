//! Run directories: every artifact goes through a temp file and a rename, and the run closes
//! with a manifest naming the config hash, crate versions, wall time and artifacts.

use anyhow::{Context, Result};
use serde::Serialize;
use simpleray::config::RunConfig;
use simpleray::formats::write_atomic;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Run {
    pub dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    started: Instant,
    artifacts: Vec<String>,
    plots: Vec<Plot>,
}

/// A line plot of two CSV columns, optionally on log axes.
pub struct Plot {
    pub csv: String,
    pub x: String,
    pub ys: Vec<String>,
    pub log: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    versions: Versions,
    wall_time_s: f64,
    artifacts: &'a [String],
}

#[derive(Serialize)]
struct Versions {
    simpleray_core: &'static str,
    simpleray_cli: &'static str,
    artifact_format: u32,
}

impl Run {
    pub fn start(cfg: &RunConfig, command: &str, output: Option<&Path>) -> Result<Self> {
        let root = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
        let dir = root.join(command.replace(' ', "-"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut run = Self {
            dir,
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            started: Instant::now(),
            artifacts: vec![],
            plots: vec![],
        };
        run.text("config.toml", &cfg.to_toml()?)?;
        Ok(run)
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn text(&mut self, name: &str, s: &str) -> Result<()> {
        self.bytes(name, s.as_bytes())
    }

    pub fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.text(name, &s)
    }

    /// CSV with a header row; values use the shortest round-tripping representation.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", line.join(","))?;
        }
        self.text(name, &s)
    }

    pub fn plot(&mut self, p: Plot) {
        self.plots.push(p);
    }

    /// Writes the plotting script (if any plot was registered) and the manifest.
    pub fn finish(mut self) -> Result<PathBuf> {
        if !self.plots.is_empty() {
            let script = plot_script(&self.plots);
            self.text("plot.py", &script)?;
        }
        let manifest = Manifest {
            command: &self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            versions: Versions {
                simpleray_core: simpleray::VERSION,
                simpleray_cli: env!("CARGO_PKG_VERSION"),
                artifact_format: simpleray::formats::VERSION,
            },
            wall_time_s: self.started.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
        };
        let s = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(&self.dir.join("manifest.json"), s.as_bytes())?;
        Ok(self.dir)
    }
}

/// Matplotlib script reading the CSVs next to it.
fn plot_script(plots: &[Plot]) -> String {
    let mut s = String::from(
        "import csv\nimport os\nimport matplotlib.pyplot as plt\n\nhere = os.path.dirname(os.path.abspath(__file__))\n\n\
def load(name):\n    with open(os.path.join(here, name)) as f:\n        rows = list(csv.DictReader(f))\n    \
return {k: [float(r[k]) for r in rows] for k in rows[0]}\n\n",
    );
    for (k, p) in plots.iter().enumerate() {
        let stem = p.csv.trim_end_matches(".csv");
        let _ = writeln!(s, "d = load({:?})\nplt.figure({k})", p.csv);
        for y in &p.ys {
            let call = if p.log { "loglog" } else { "plot" };
            let _ = writeln!(s, "plt.{call}(d[{:?}], d[{y:?}], marker='o', label={y:?})", p.x);
        }
        let _ = writeln!(s, "plt.xlabel({:?})\nplt.legend()\nplt.savefig(os.path.join(here, {:?}))\n", p.x, format!("{stem}.png"));
    }
    s
}
