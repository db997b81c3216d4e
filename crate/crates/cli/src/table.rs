use rarespan::evaluation::ReportRow;

/// Formats report rows as one table per (base rate, test mode), strategies
/// down the side and P/R/F across, in file order.
pub fn render(rows: &[ReportRow], folds: bool) -> String {
    let mut groups: Vec<((&str, &str), Vec<&ReportRow>)> = Vec::new();
    for row in rows.iter().filter(|r| folds || r.fold == "mean") {
        let key = (row.base_rate.as_str(), row.mode.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(row),
            None => groups.push((key, vec![row])),
        }
    }

    let mut out = String::new();
    for (i, ((rate, mode), members)) in groups.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("base rate {rate}, {mode}\n"));
        let width = members.iter().map(|r| r.strategy.len()).max().unwrap_or(0).max("strategy".len());
        let mut header = format!("{:<width$}", "strategy");
        if folds {
            header.push_str(&format!("  {:>4}", "fold"));
        }
        header.push_str(&format!("  {:>5}  {:>5}  {:>5}  {:>6}", "P", "R", "F", "docs"));
        out.push_str(header.trim_end());
        out.push('\n');
        for r in members {
            let mut line = format!("{:<width$}", r.strategy);
            if folds {
                line.push_str(&format!("  {:>4}", r.fold));
            }
            line.push_str(&format!(
                "  {:>5}  {:>5}  {:>5}  {:>6}",
                short(&r.precision),
                short(&r.recall),
                short(&r.f1),
                r.docs_scored
            ));
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// `0.787000` -> `.787`
fn short(value: &str) -> String {
    match value.parse::<f64>() {
        Ok(x) => {
            let s = format!("{x:.3}");
            s.strip_prefix('0').map(str::to_string).unwrap_or(s)
        }
        Err(_) => value.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: &str, mode: &str, fold: &str, f1: &str) -> ReportRow {
        ReportRow {
            base_rate: "0.010000".into(),
            strategy: strategy.into(),
            mode: mode.into(),
            fold: fold.into(),
            precision: "0.822000".into(),
            recall: "0.779000".into(),
            f1: f1.into(),
            docs_scored: "40".into(),
            docs_excluded: "0".into(),
            train_chunks: "0".into(),
            train_positive_chunks: "0".into(),
            test_chunks: "0".into(),
            tagged_chunks: "0".into(),
            predicted_starts: "0".into(),
            gold_starts: "0".into(),
        }
    }

    #[test]
    fn one_table_per_mode_with_means_only() {
        let rows = vec![
            row("RetrievalFiltered", "TagAll", "0", "0.5"),
            row("RetrievalFiltered", "TagAll", "mean", "0.787"),
            row("All", "TagAll", "mean", "0.7"),
            row("All", "TagRetrieved", "mean", "1"),
        ];
        let text = render(&rows, false);
        assert_eq!(
            text,
            "base rate 0.010000, TagAll\n\
             strategy               P      R      F    docs\n\
             RetrievalFiltered   .822   .779   .787      40\n\
             All                 .822   .779   .700      40\n\
             \n\
             base rate 0.010000, TagRetrieved\n\
             strategy      P      R      F    docs\n\
             All        .822   .779  1.000      40\n"
        );
        assert!(render(&rows, true).contains("   0   .822"));
    }
}
