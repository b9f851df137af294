//! Human-readable renderings of the comparison outputs: aligned star
//! tables for significance matrices, signed count tables for fidelity
//! reports, and the per-run flag table of the methodwise comparison.

use dcv_rood_core::stats::{FidelityReport, MethodwiseTable, SignificanceMatrix};

/// Significance stars: `***` below 0.01, `**` below 0.05, `*` below 0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Lays out rows of cells as space-separated columns, each padded to its
/// column's widest cell. First column is left-aligned, the rest right.
fn align(rows: &[Vec<String>]) -> String {
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; n_cols];
    for row in rows {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            if j == 0 {
                line.push_str(&format!("{cell:<width$}", width = widths[j]));
            } else {
                line.push_str(&format!("{cell:>width$}", width = widths[j]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// The classic star table of a significance matrix, diagonal dashed.
pub fn star_table(m: &SignificanceMatrix) -> String {
    let names = m.methods();
    let mut rows = Vec::with_capacity(names.len() + 1);
    let mut header = vec![format!("[{}]", m.metric())];
    header.extend(names.iter().cloned());
    rows.push(header);
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        for j in 0..names.len() {
            row.push(if i == j { "-".to_string() } else { stars(m.p(i, j)).to_string() });
        }
        rows.push(row);
    }
    align(&rows)
}

/// Signed per-pair counts plus the two rates. Counts carry the benchmark's
/// sign convention: positive on benchmark-significant pairs, negative
/// where only cross-validation runs flag a difference.
pub fn fidelity_text(r: &FidelityReport) -> String {
    let names = r.methods();
    let mut rows = Vec::with_capacity(names.len() + 1);
    let mut header = vec![format!("[{} alpha={:.3}]", r.metric(), r.alpha())];
    header.extend(names.iter().cloned());
    rows.push(header);
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        for j in 0..names.len() {
            row.push(if i == j { "-".to_string() } else { format!("{:.0}", r.count(i, j)) });
        }
        rows.push(row);
    }
    let mut out = align(&rows);
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.4}"),
        None => "undefined (empty pair class)".to_string(),
    };
    out.push_str(&format!(
        "hit_rate={} over {} significant pairs\n",
        fmt(r.hit_rate()),
        r.n_benchmark_significant()
    ));
    out.push_str(&format!(
        "error_rate={} over {} non-significant pairs\n",
        fmt(r.error_rate()),
        r.n_benchmark_nonsignificant()
    ));
    out.push_str(&format!("scale 0..{} ({} runs)\n", r.n_runs(), r.n_runs()));
    out
}

/// Methodwise flags per significance level: for each alpha, the list of
/// `run/detector` cells whose distribution differs from the benchmark, or
/// a dash when the level flags nothing.
pub fn methodwise_text(t: &MethodwiseTable, alphas: &[f64]) -> String {
    let mut out = String::new();
    for &alpha in alphas {
        let flagged = t.flagged(alpha);
        if flagged.is_empty() {
            out.push_str(&format!("alpha={alpha:.3}: -\n"));
            continue;
        }
        let cells: Vec<String> = flagged
            .iter()
            .map(|&(run, m)| format!("run {} - {}", run + 1, t.methods()[m]))
            .collect();
        out.push_str(&format!("alpha={alpha:.3}: {}\n", cells.join(", ")));
    }
    out
}
