//! `mpcpa report`: side-by-side tables over persisted runs.
//!
//! Emits an accuracy table (method rows × validation/test) and a
//! communication summary shaped like the ledger, plus an optional CSV export
//! whose cells round-trip the stored values exactly.

use std::fmt::Write as _;
use std::path::Path;

use mpcpa_core::experiment::{load_report, RunReport};

pub fn run(dirs: &[std::path::PathBuf], csv: Option<&Path>) -> anyhow::Result<()> {
    if dirs.is_empty() {
        anyhow::bail!(mpcpa_core::Error::InvalidInput(
            "report needs at least one run directory".into()
        ));
    }
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let report = load_report(dir)?;
        runs.push((dir.display().to_string(), report));
    }

    print!("{}", accuracy_table(&runs));
    print!("{}", communication_table(&runs));

    if let Some(path) = csv {
        std::fs::write(path, csv_export(&runs))
            .map_err(|e| mpcpa_core::Error::io(path.display().to_string(), e))?;
        println!("csv: {}", path.display());
    }
    Ok(())
}

fn accuracy_table(runs: &[(String, RunReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== accuracy (validation / test) ==");
    let name_width = runs
        .iter()
        .flat_map(|(_, r)| r.rows.iter().map(|row| row.name.len()))
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(8)
        + 2;
    let _ = writeln!(out, "{:<w$} {:<28} validation   test", "method", "run", w = name_width);
    for (dir, report) in runs {
        for row in &report.rows {
            let _ = writeln!(
                out,
                "{:<w$} {:<28} {:>10.4} {:>10.4}",
                row.name,
                truncate(dir, 28),
                row.validation,
                row.test,
                w = name_width
            );
        }
    }
    out
}

fn communication_table(runs: &[(String, RunReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== communication ==");
    let _ = writeln!(
        out,
        "{:<28} {:<16} {:>10} {:>14}",
        "run", "arm", "messages", "bytes"
    );
    for (dir, report) in runs {
        match &report.ledger {
            Some(ledger) => {
                let _ = writeln!(
                    out,
                    "{:<28} {:<16} {:>10} {:>14}",
                    truncate(dir, 28),
                    report.arm,
                    ledger.total,
                    ledger.total_bytes
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<28} {:<16} {:>10} {:>14}",
                    truncate(dir, 28),
                    report.arm,
                    "-",
                    "-"
                );
            }
        }
    }
    out
}

/// CSV with full-precision cells: `run,arm,method,validation,test,messages,bytes`.
fn csv_export(runs: &[(String, RunReport)]) -> String {
    let mut out = String::from("run,arm,method,validation,test,messages,bytes\n");
    for (dir, report) in runs {
        let (messages, bytes) = report
            .ledger
            .as_ref()
            .map(|l| (l.total.to_string(), l.total_bytes.to_string()))
            .unwrap_or_default();
        for row in &report.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                dir, report.arm, row.name, row.validation, row.test, messages, bytes
            );
        }
    }
    out
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        format!("…{}", &s[s.len() - (max - 1)..])
    }
}
