use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Flags, LossKind, OptKind, RunConfig};
use super::train::{run, RunReport};
use super::{HarnessError, Result};

pub const TABLE_HEADER: [&str; 13] = [
    "id",
    "pt",
    "fpn",
    "in",
    "ta",
    "mu",
    "opt",
    "loss",
    "p_macro",
    "r_macro",
    "f1_macro",
    "auc_macro",
    "l_test",
];

/// One table row: the run's flags and its test metrics, or the error that
/// stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub id: String,
    pub seed: u64,
    pub flags: Flags,
    pub result: std::result::Result<RunReport, String>,
}

impl TableRow {
    pub fn cells(&self) -> Vec<String> {
        let mut cells = vec![self.id.clone()];
        cells.extend(self.flags.cells());
        match &self.result {
            Ok(r) => cells.extend(
                [
                    r.test.p_macro,
                    r.test.r_macro,
                    r.test.f1_macro,
                    r.test.auc_macro,
                    r.test.mean_loss,
                ]
                .iter()
                .map(|v| format!("{v:.6}")),
            ),
            Err(_) => cells.extend(std::iter::repeat_n("ERR".to_string(), 5)),
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<TableRow>,
}

/// Renders rows as CSV with [`TABLE_HEADER`].
pub fn render_table(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER)?;
    for row in rows {
        w.write_record(row.cells())?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Data(e.to_string()))
}

/// Runs every config in order under `out_dir/runs/<id>` and writes
/// `table.csv` and `report.json`. A failing run becomes an `ERR` row.
pub fn ablate(grid: &[RunConfig], out_dir: &Path) -> Result<AblationReport> {
    if grid.is_empty() {
        return Err(HarnessError::Config("ablation grid is empty".into()));
    }
    let mut ids = HashSet::new();
    for cfg in grid {
        if !ids.insert(cfg.id.as_str()) {
            return Err(HarnessError::Config(format!("duplicate run id `{}`", cfg.id)));
        }
    }
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in grid {
        let result = run(cfg, &out_dir.join("runs").join(&cfg.id)).map_err(|e| {
            log::error!("run `{}` failed: {e}", cfg.id);
            e.to_string()
        });
        rows.push(TableRow {
            id: cfg.id.clone(),
            seed: cfg.seed,
            flags: cfg.flags(),
            result,
        });
    }
    let report = AblationReport { rows };
    let table = out_dir.join("table.csv");
    std::fs::write(&table, render_table(&report.rows)?).map_err(|e| HarnessError::io(&table, e))?;
    let json = out_dir.join("report.json");
    std::fs::write(&json, serde_json::to_vec_pretty(&report)?).map_err(|e| HarnessError::io(&json, e))?;
    Ok(report)
}

/// The fifteen-row staged ablation: `(pt, fpn, in, ta, mu, opt, loss)`.
const TABLE3: [(bool, bool, usize, bool, bool, OptKind, LossKind); 15] = {
    use LossKind::*;
    use OptKind::*;
    [
        (false, false, 1, false, false, AF, WCE),
        (true, false, 3, false, false, AW, CE),
        (false, false, 1, false, false, AF, CE),
        (false, false, 1, false, false, AF, CE),
        (false, false, 1, false, false, AW, WCE),
        (false, false, 1, false, false, AF, CE),
        (true, false, 3, false, false, AW, CE),
        (true, true, 3, false, false, AF, CE),
        (true, false, 1, false, false, AF, CE),
        (true, false, 3, false, true, AF, CE),
        (true, false, 1, false, true, AF, CE),
        (false, true, 3, true, true, AF, CE),
        (true, false, 3, true, false, AF, CE),
        (true, false, 3, true, true, AF, CE),
        (true, true, 3, true, true, AF, CE),
    ]
};

/// Builds the fifteen-row grid from `base`, with ids `exp01`..`exp15`.
///
/// Rows 3, 4 and 6 share their flags and differ in schedule-free
/// hyperparameters: (lr 0.01, beta1 0.9), (lr 0.001, beta1 0.9) and the
/// base values. Rows flagged as pretrained start from `pretrained`.
pub fn table3_grid(base: &RunConfig, pretrained: &Path) -> Vec<RunConfig> {
    TABLE3
        .iter()
        .enumerate()
        .map(|(i, &(pt, fpn, in_channels, ta, mu, opt, loss))| {
            let mut cfg = base.clone();
            cfg.id = format!("exp{:02}", i + 1);
            cfg.pt = pt.then(|| PathBuf::from(pretrained));
            cfg.fpn = fpn;
            cfg.in_channels = in_channels;
            cfg.ta.enabled = ta;
            cfg.mixup.enabled = mu;
            cfg.opt = opt;
            cfg.loss = loss;
            match i + 1 {
                3 => {
                    cfg.sf.lr = 0.01;
                    cfg.sf.beta1 = 0.9;
                }
                4 => {
                    cfg.sf.lr = 0.001;
                    cfg.sf.beta1 = 0.9;
                }
                _ => {}
            }
            cfg
        })
        .collect()
}
