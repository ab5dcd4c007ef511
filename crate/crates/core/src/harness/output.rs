//! CSV files written by an experiment.
//!
//! For each mode `<label>` (`central`, `local_L3`, `noagg`, `sym2_L2`, ...):
//!
//! * `<label>_raw.csv`: `trial,t,A_raw,A_aligned,G,Lambda,Delta,objective,rounds,is_sync,G_degenerate`
//! * `<label>_summary.csv`: `t` then `<field>_mean,<field>_std` for each metric
//!
//! plus `trials.csv` (`trial,seed,data_checksum,init_checksum`),
//! `comparison.csv` (mean and std of `A_aligned` and mean `rounds` per mode,
//! joined on `t`) and `config.txt` with the resolved configuration.
//!
//! Label-dependent cells are empty when the data has no labels.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::experiment::{field_value, Comparison, ModeOutcome, FIELDS};
use crate::error::{Error, Result};

pub const RAW_HEADER: [&str; 11] = [
    "trial",
    "t",
    "A_raw",
    "A_aligned",
    "G",
    "Lambda",
    "Delta",
    "objective",
    "rounds",
    "is_sync",
    "G_degenerate",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

pub fn raw_rows(mode: &ModeOutcome) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for trial in &mode.trials {
        for r in &trial.result.records {
            let l = r.labels.as_ref();
            rows.push(vec![
                trial.trial.to_string(),
                r.t.to_string(),
                cell(field_value(r, 0)),
                cell(field_value(r, 1)),
                cell(field_value(r, 2)),
                cell(field_value(r, 3)),
                cell(field_value(r, 4)),
                cell(field_value(r, 5)),
                r.rounds.to_string(),
                r.is_sync.to_string(),
                l.map_or_else(String::new, |l| l.g_degenerate.to_string()),
            ]);
        }
    }
    rows
}

pub fn summary_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for f in FIELDS {
        h.push(format!("{f}_mean"));
        h.push(format!("{f}_std"));
    }
    h
}

pub fn summary_rows(mode: &ModeOutcome) -> Vec<Vec<String>> {
    mode.summary
        .rows
        .iter()
        .map(|row| {
            let mut out = vec![row.t.to_string()];
            for m in &row.fields {
                out.push(cell(m.map(|m| m.mean)));
                out.push(cell(m.map(|m| m.std)));
            }
            out
        })
        .collect()
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every output file and returns the paths written.
pub fn write_all(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let raw_header: Vec<String> = RAW_HEADER.iter().map(|s| s.to_string()).collect();
    for mode in &cmp.modes {
        let raw = dir.join(format!("{}_raw.csv", mode.label));
        write_table(&raw, &raw_header, &raw_rows(mode))?;
        let summary = dir.join(format!("{}_summary.csv", mode.label));
        write_table(&summary, &summary_header(), &summary_rows(mode))?;
        written.extend([raw, summary]);
    }

    if let Some(first) = cmp.modes.first() {
        let trials = dir.join("trials.csv");
        let header: Vec<String> = ["trial", "seed", "data_checksum", "init_checksum"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = first
            .trials
            .iter()
            .map(|t| {
                vec![
                    t.trial.to_string(),
                    t.seed.to_string(),
                    t.data_checksum.clone(),
                    t.init_checksum.clone(),
                ]
            })
            .collect();
        write_table(&trials, &header, &rows)?;
        written.push(trials);

        let comparison = dir.join("comparison.csv");
        let (header, rows) = comparison_table(cmp);
        write_table(&comparison, &header, &rows)?;
        written.push(comparison);
    }

    let config = dir.join("config.txt");
    std::fs::File::create(&config)
        .and_then(|mut f| f.write_all(cmp.config.to_kv_string().as_bytes()))
        .map_err(|source| Error::Io {
            path: config.clone(),
            source,
        })?;
    written.push(config);
    Ok(written)
}

/// Side-by-side `A_aligned` and `rounds` per mode, one row per recorded `t`.
pub fn comparison_table(cmp: &Comparison) -> (Vec<String>, Vec<Vec<String>>) {
    let a = FIELDS.iter().position(|f| *f == "A_aligned").expect("field exists");
    let rounds = FIELDS.iter().position(|f| *f == "rounds").expect("field exists");
    let mut header = vec!["t".to_string()];
    for m in &cmp.modes {
        header.push(format!("{}_A_aligned_mean", m.label));
        header.push(format!("{}_A_aligned_std", m.label));
        header.push(format!("{}_rounds", m.label));
    }
    let len = cmp.modes.first().map_or(0, |m| m.summary.rows.len());
    let rows = (0..len)
        .map(|i| {
            let mut row = vec![cmp.modes[0].summary.rows[i].t.to_string()];
            for m in &cmp.modes {
                let r = &m.summary.rows[i];
                row.push(cell(r.fields[a].map(|x| x.mean)));
                row.push(cell(r.fields[a].map(|x| x.std)));
                row.push(cell(r.fields[rounds].map(|x| x.mean)));
            }
            row
        })
        .collect();
    (header, rows)
}
