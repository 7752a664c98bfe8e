//! Aligned plain-text tables for reports. Percentages print with 2
//! decimals, cosines and SDs with 3.

use super::{AblationReport, ConsistencyGroup, ConsistencyReport, EvaluationSummary, LikertQuestion, TernaryQuestion};
use crate::scalar::Scalar;

/// Left-aligns the first column and right-aligns the rest.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, cell) in r.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(headers.to_vec())];
    out.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        out.push(line(r.iter().map(String::as_str).collect()));
    }
    out.join("\n") + "\n"
}

fn f<T: Scalar>(x: T, places: usize) -> String {
    format!("{:.*}", places, x.lossy_f64())
}

pub fn consistency_table<T: Scalar>(r: &ConsistencyReport<T>) -> String {
    let row = |g: &ConsistencyGroup<T>| {
        vec![
            g.group.clone(),
            g.n.to_string(),
            f(g.means.text_draw, 3),
            f(g.means.cmap_draw, 3),
            f(g.means.text_cmap, 3),
            f(g.means.overall, 3),
        ]
    };
    let mut rows = vec![row(&r.overall)];
    rows.extend(r.by_grade_band.iter().map(row));
    rows.extend(r.by_level.iter().map(row));
    format_table(&["Group", "N", "Text-Draw", "CMap-Draw", "Text-CMap", "Overall"], &rows)
}

pub fn evaluation_table<T: Scalar>(s: &EvaluationSummary<T>) -> String {
    let dash = || "--".to_string();
    let mut rows = Vec::new();
    for q in TernaryQuestion::ALL {
        if let Some(d) = s.ternary.get(&q) {
            let mut r = vec![q.title().to_string(), f(d.pct_yes, 2), f(d.pct_partially, 2), f(d.pct_no, 2)];
            r.extend((0..5).map(|_| dash()));
            rows.push(r);
        }
    }
    for q in LikertQuestion::ALL {
        if let Some(d) = s.likert.get(&q) {
            let mut r = vec![q.title().to_string(), dash(), dash(), dash()];
            r.extend(d.pct.iter().map(|p| f(*p, 2)));
            rows.push(r);
        }
    }
    format!(
        "N = {} evaluations\n{}",
        s.n,
        format_table(&["Dimension", "Yes", "Partially", "No", "1", "2", "3", "4", "5"], &rows)
    )
}

pub fn ablation_table<T: Scalar>(reports: &[&AblationReport<T>]) -> String {
    let mut rows = Vec::new();
    for r in reports {
        for (topic, sd) in &r.per_topic_sd {
            let m = r.level_means[topic];
            rows.push(vec![
                r.condition.as_str().to_string(),
                topic.clone(),
                f(m[0], 4),
                f(m[1], 4),
                f(m[2], 4),
                f(m[3], 4),
                f(*sd, 3),
            ]);
        }
        rows.push(vec![
            r.condition.as_str().to_string(),
            "mean SD".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            f(r.mean_sd, 3),
        ]);
    }
    format_table(&["Condition", "Topic", "L1", "L2", "L3", "L4", "SD"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align() {
        let t = format_table(&["A", "Value"], &[vec!["long name".into(), "1.5".into()], vec!["x".into(), "10.25".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[2].len(), lines[3].len());
        assert!(lines[3].ends_with("10.25"));
    }
}
