//! CSV files with a leading `#` provenance line, and the plot scripts that
//! read them.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// An in-memory table written in one go, so a failed run never leaves a
/// half-written file behind.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: &Path, fingerprint: &str) -> io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = File::create(path)?;
        writeln!(file, "# ctpg-bench {VERSION} | {fingerprint}")?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()
    }
}

/// Shortest round-trip formatting; empty for `None`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// `foo.csv` → `foo<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Writes `<csv stem>.plot.py`, a standalone matplotlib script that reads
/// the CSV next to it.
pub fn write_plot_script(csv_path: &Path, body: &str) -> io::Result<PathBuf> {
    let script = sibling(csv_path, ".plot.py");
    let csv_name = csv_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let text = format!(
        "#!/usr/bin/env python3\n\
         # Generated by ctpg-bench {VERSION}. Usage: python3 {script_name} [out.png]\n\
         import os, sys\n\
         import pandas as pd\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n\
         import matplotlib.pyplot as plt\n\n\
         here = os.path.dirname(os.path.abspath(__file__))\n\
         df = pd.read_csv(os.path.join(here, \"{csv_name}\"), comment=\"#\")\n\
         out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, \"{png}\")\n\n\
         {body}\n\
         plt.tight_layout()\n\
         plt.savefig(out, dpi=150)\n\
         print(\"wrote\", out)\n",
        script_name = script.file_name().unwrap().to_string_lossy(),
        png = sibling(csv_path, ".png").file_name().unwrap().to_string_lossy(),
    );
    std::fs::write(&script, text)?;
    Ok(script)
}
