//! Table rendering in the comparison layout: one column per variant, rows
//! for each imbalanced class's recall and F1, then the macro averages.
//! Raw per-repeat values go to a long-format CSV for box plots.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use qdm_core::metrics::EvalReport;
use qdm_core::{Error, Result};

use crate::bundle::{Bundle, Cell, CellStatus};

fn ok_reports<'a>(bundle: &'a Bundle, variant: &str) -> Vec<&'a EvalReport> {
    bundle
        .cells
        .iter()
        .filter(|c| c.variant == variant && c.status == CellStatus::Ok)
        .filter_map(|c| c.report.as_ref())
        .collect()
}

/// Classes whose rows lead the table: the imbalanced ones when a scenario
/// declares them, otherwise every class any report saw.
fn focus_classes(bundle: &Bundle) -> Vec<usize> {
    if !bundle.imbalanced_classes.is_empty() {
        return bundle.imbalanced_classes.clone();
    }
    let mut all = BTreeSet::new();
    for cell in &bundle.cells {
        if let Some(report) = &cell.report {
            all.extend(report.per_class.keys().copied());
        }
    }
    all.into_iter().collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn format_cell(values: &[f64], ok: usize, total: usize) -> String {
    if values.is_empty() {
        return "n/a".into();
    }
    let (mean, std) = mean_std(values);
    let mut out = format!("{mean:.4} +/- {std:.4}");
    if ok < total {
        let _ = write!(out, " ({ok}/{total})");
    }
    out
}

/// The comparison table as fixed-width text.
pub fn render(bundle: &Bundle) -> Result<String> {
    if bundle.variants.is_empty() {
        return Err(Error::Contract("bundle has no variants to render".into()));
    }
    let repeats = bundle.config.experiment.repeats;
    let classes = focus_classes(bundle);

    let mut rows: Vec<(String, Box<dyn Fn(&EvalReport) -> Option<f64>>)> = Vec::new();
    for &c in &classes {
        rows.push((
            format!("recall[{c}]"),
            Box::new(move |r: &EvalReport| r.per_class.get(&c).map(|m| m.recall)),
        ));
        rows.push((
            format!("f1[{c}]"),
            Box::new(move |r: &EvalReport| r.per_class.get(&c).map(|m| m.f1)),
        ));
    }
    rows.push(("macro_recall".into(), Box::new(|r: &EvalReport| Some(r.macro_recall))));
    rows.push(("macro_f1".into(), Box::new(|r: &EvalReport| Some(r.macro_f1))));

    let reports: Vec<Vec<&EvalReport>> = bundle
        .variants
        .iter()
        .map(|v| ok_reports(bundle, v))
        .collect();

    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["metric".to_string()];
    header.extend(bundle.variants.iter().cloned());
    grid.push(header);
    for (name, extract) in &rows {
        let mut line = vec![name.clone()];
        for variant_reports in &reports {
            let values: Vec<f64> = variant_reports.iter().filter_map(|r| extract(r)).collect();
            line.push(format_cell(&values, variant_reports.len(), repeats));
        }
        grid.push(line);
    }

    let columns = grid[0].len();
    let widths: Vec<usize> = (0..columns)
        .map(|i| grid.iter().map(|row| row[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &grid {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("   ");
            }
            let _ = write!(out, "{cell:<width$}", width = widths[i]);
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    }
    Ok(out)
}

fn push_csv_row(out: &mut String, cell: &Cell, metric: &str, value: f64) {
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        cell.variant, cell.repeat, cell.seed, metric, value
    );
}

/// Per-repeat raw metric values, one observation per line.
pub fn cells_csv(bundle: &Bundle) -> String {
    let mut out = String::from("variant,repeat,seed,metric,value\n");
    for cell in &bundle.cells {
        let Some(report) = &cell.report else { continue };
        for (&c, m) in &report.per_class {
            push_csv_row(&mut out, cell, &format!("recall_{c}"), m.recall);
            push_csv_row(&mut out, cell, &format!("f1_{c}"), m.f1);
        }
        push_csv_row(&mut out, cell, "macro_recall", report.macro_recall);
        push_csv_row(&mut out, cell, "macro_f1", report.macro_f1);
    }
    out
}
