//! Comparison tables, aggregate summaries and learning-curve files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gaitwave_core::experiments::{aggregate, AggregateSummary, BandKind, ComparisonRow, Scope};
use gaitwave_core::train::AccuracyStat;

use crate::error::{CliError, Result};
use crate::runner::{CurveResult, ResultsFile, RESULTS_FILE, RESULTS_VERSION};

const ABSENT: &str = "n/a";

pub fn fmt_stat(s: Option<&AccuracyStat>) -> String {
    s.map_or_else(|| ABSENT.to_string(), |s| format!("{:.3} ± {:.3}", s.mean, s.std))
}

/// `79060 → 79K`, `1_902_000 → 1.9M`.
pub fn fmt_params(n: usize) -> String {
    if n >= 1_000_000 {
        let s = format!("{:.2}", n as f64 / 1e6);
        format!("{}M", s.trim_end_matches('0').trim_end_matches('.'))
    } else if n >= 1000 {
        format!("{}K", (n as f64 / 1e3).round())
    } else {
        n.to_string()
    }
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| Model | Configuration | #Params | Background subtraction | {} | {} | {} |",
        BandKind::Sub6Low.label(),
        BandKind::Sub6High.label(),
        BandKind::Mmwave.label()
    );
    s.push_str("|---|---|---:|---|---:|---:|---:|\n");
    for r in rows {
        let cell = |k: BandKind| {
            let v = fmt_stat(r.stat(k));
            if r.flag == Some(k) {
                format!("**{v}**")
            } else {
                v
            }
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.model,
            r.configuration,
            fmt_params(r.params),
            if r.background_subtraction { "yes" } else { "no" },
            cell(BandKind::Sub6Low),
            cell(BandKind::Sub6High),
            cell(BandKind::Mmwave)
        );
    }
    s
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "configuration", "params", "background_subtraction"];
    for k in BandKind::ALL {
        header.push(match k {
            BandKind::Sub6Low => "sub6_10hz_mean",
            BandKind::Sub6High => "sub6_200hz_mean",
            BandKind::Mmwave => "mmwave_10hz_mean",
        });
        header.push(match k {
            BandKind::Sub6Low => "sub6_10hz_std",
            BandKind::Sub6High => "sub6_200hz_std",
            BandKind::Mmwave => "mmwave_10hz_std",
        });
    }
    header.push("flag");
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        let mut rec = vec![
            r.model.clone(),
            r.configuration.clone(),
            r.params.to_string(),
            r.background_subtraction.to_string(),
        ];
        for k in BandKind::ALL {
            rec.push(opt_num(r.stat(k).map(|s| s.mean)));
            rec.push(opt_num(r.stat(k).map(|s| s.std)));
        }
        rec.push(r.flag.map_or("", |k| k.as_str()).to_string());
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn summary_markdown(summaries: &[AggregateSummary]) -> String {
    let avg = |v: Option<f64>| v.map_or_else(|| ABSENT.to_string(), |v| format!("{v:.3}"));
    let mut s = String::new();
    s.push_str(
        "| Scope | Configs | Avg 5 GHz @10 Hz | Avg 5 GHz @200 Hz | Avg 60 GHz | 60 GHz > 5 GHz @10 Hz | 60 GHz > 5 GHz @200 Hz | 60 GHz ≫ 5 GHz @10 Hz | 60 GHz ≫ 5 GHz @200 Hz |\n",
    );
    s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for a in summaries {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            a.scope.as_str(),
            a.total,
            avg(a.avg_sub6_10hz),
            avg(a.avg_sub6_200hz),
            avg(a.avg_mmwave_10hz),
            a.count_better_than_low,
            a.count_better_than_high,
            a.count_sig_better_low,
            a.count_sig_better_high
        );
    }
    s.push_str("\n≫ means mean minus one std exceeds the other band's mean plus one std.\n");
    s
}

pub fn summary_json(summaries: &[AggregateSummary]) -> String {
    serde_json::to_string_pretty(summaries).expect("summaries serialize") + "\n"
}

pub fn curve_csv(c: &CurveResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction", "mean", "std"]).expect("in-memory csv");
    for p in &c.points {
        w.write_record([p.fraction.to_string(), p.stat.mean.to_string(), p.stat.std.to_string()])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn curve_file_name(c: &CurveResult) -> String {
    format!("learning_curve_{}.csv", c.band.kind.as_str())
}

fn put(dir: &Path, name: &str, body: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(CliError::io(&p))
}

/// Writes every report file derived from `r` into `dir`.
pub fn write_reports(dir: &Path, r: &ResultsFile) -> Result<()> {
    if !r.rows.is_empty() || !r.summaries.is_empty() {
        put(dir, "comparison.csv", &comparison_csv(&r.rows))?;
        put(dir, "comparison.md", &comparison_markdown(&r.rows))?;
        put(dir, "summary.json", &summary_json(&r.summaries))?;
        put(dir, "summary.md", &summary_markdown(&r.summaries))?;
    }
    if let Some(c) = &r.learning_curve {
        put(dir, &curve_file_name(c), &curve_csv(c))?;
    }
    Ok(())
}

/// Scoped summary recomputed from the stored rows.
pub fn write_scoped_summary(dir: &Path, r: &ResultsFile, scope: Scope) -> Result<AggregateSummary> {
    let a = aggregate(&r.rows, scope);
    put(dir, &format!("summary_{}.json", scope.as_str()), &summary_json(std::slice::from_ref(&a)))?;
    put(dir, &format!("summary_{}.md", scope.as_str()), &summary_markdown(std::slice::from_ref(&a)))?;
    Ok(a)
}

/// Text printed after a run or report.
pub fn render(r: &ResultsFile) -> String {
    let mut s = String::new();
    if !r.rows.is_empty() {
        s.push_str(&comparison_markdown(&r.rows));
        s.push('\n');
        s.push_str(&summary_markdown(&r.summaries));
    }
    if let Some(c) = &r.learning_curve {
        let _ = writeln!(s, "\nLearning curve: {} {} on {}", c.model, c.configuration, c.band.kind.label());
        for p in &c.points {
            let _ = writeln!(
                s,
                "  {:.2}  {:>5} windows  {}",
                p.fraction,
                p.train_windows,
                fmt_stat(Some(&p.stat))
            );
        }
    }
    if !r.complete {
        s.push_str("\nWARNING: some jobs failed; tables hold partial results.\n");
    }
    s
}

/// Reads `results.json` from a results directory.
pub fn load_results(dir: &Path) -> Result<ResultsFile> {
    let empty = fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(true);
    if empty {
        return Err(CliError::Validation(format!("no results in {}", dir.display())));
    }
    let path = dir.join(RESULTS_FILE);
    if !path.is_file() {
        return Err(CliError::Validation(format!("{} not found", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let r: ResultsFile = serde_json::from_str(&text).map_err(|e| CliError::format(&path, e))?;
    if r.version != RESULTS_VERSION {
        return Err(CliError::format(&path, format!("unsupported results version {}", r.version)));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gaitwave_core::experiments::BandSetting;
    use gaitwave_core::models::Family;

    fn stat(mean: f64, std: f64) -> Option<AccuracyStat> {
        Some(AccuracyStat { mean, std, n: 3 })
    }

    fn row() -> ComparisonRow {
        let mut r = ComparisonRow {
            family: Family::Tcn,
            model: "TemporalConvNet".into(),
            configuration: "[64,128], kernel_size=2".into(),
            params: 79060,
            background_subtraction: true,
            sub6_10hz: stat(0.91, 0.017),
            sub6_200hz: None,
            mmwave_10hz: stat(0.963, 0.006),
            flag: None,
        };
        r.update_flag();
        r
    }

    #[test]
    fn params_formatting() {
        assert_eq!(fmt_params(79060), "79K");
        assert_eq!(fmt_params(62996), "63K");
        assert_eq!(fmt_params(1_900_000), "1.9M");
        assert_eq!(fmt_params(7_070_000), "7.07M");
        assert_eq!(fmt_params(950), "950");
    }

    #[test]
    fn markdown_bolds_flag_and_marks_absent() {
        let md = comparison_markdown(&[row()]);
        assert!(md.contains("**0.963 ± 0.006**"), "{md}");
        assert!(md.contains("| 0.910 ± 0.017 |"));
        assert!(md.contains(ABSENT));
    }

    #[test]
    fn csv_quotes_configuration() {
        let c = comparison_csv(&[row()]);
        let mut lines = c.lines();
        assert!(lines.next().unwrap().starts_with("model,configuration,params"));
        let l = lines.next().unwrap();
        assert!(l.contains("\"[64,128], kernel_size=2\""), "{l}");
        assert!(l.ends_with("mmwave_10hz"));
        assert!(l.contains("0.963,0.006"));
    }

    #[test]
    fn curve_csv_columns() {
        let c = CurveResult {
            model: "TemporalConvNet".into(),
            configuration: String::new(),
            band: BandSetting {
                kind: BandKind::Mmwave,
                background_subtraction: true,
            },
            points: vec![gaitwave_core::experiments::CurvePoint {
                fraction: 0.7,
                train_windows: 10,
                stat: AccuracyStat {
                    mean: 0.9,
                    std: 0.1,
                    n: 3,
                },
            }],
        };
        assert_eq!(curve_csv(&c), "fraction,mean,std\n0.7,0.9,0.1\n");
        assert_eq!(curve_file_name(&c), "learning_curve_mmwave_10hz.csv");
    }

    #[test]
    fn empty_and_malformed_results() {
        let d = tempfile::tempdir().unwrap();
        assert_eq!(load_results(d.path()).unwrap_err().exit_code(), 2);
        fs::write(d.path().join(RESULTS_FILE), "{not json").unwrap();
        let e = load_results(d.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains(RESULTS_FILE));
    }
}
