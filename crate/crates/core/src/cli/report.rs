//! Coefficient and interval tables in aligned text and CSV.

use std::fmt::Write as _;

use crate::inference::BootstrapResult;
use crate::mcstudy::fmt4;
use crate::model::ModelParams;

/// `(param, variable)` labels in `beta | gamma` order.
pub fn labels(exposures: &[String], covariates: &[String]) -> Vec<(String, String)> {
    let q0 = usize::from(covariates.first().is_some_and(|c| c == super::io::INTERCEPT));
    exposures
        .iter()
        .enumerate()
        .map(|(j, v)| (format!("beta{}", j + 1), v.clone()))
        .chain(
            covariates
                .iter()
                .enumerate()
                .map(|(k, v)| (format!("gamma{}", k + 1 - q0), v.clone())),
        )
        .collect()
}

pub fn coefficient_table(model: &ModelParams, labels: &[(String, String)]) -> (String, String) {
    let values: Vec<f64> = model.beta.iter().chain(&model.gamma).copied().collect();
    let mut text = format!("{:<10}{:<16}{:>10}\n", "param", "variable", "estimate");
    let mut csv = String::from("param,variable,estimate\n");
    for ((param, var), v) in labels.iter().zip(&values) {
        let _ = writeln!(text, "{param:<10}{var:<16}{:>10}", fmt4(*v));
        let _ = writeln!(csv, "{param},{var},{v}");
    }
    (text, csv)
}

fn level_label(alpha: f64) -> String {
    let pct = (1.0 - alpha) * 100.0;
    let s = format!("{pct:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}% CI")
}

fn interval(ci: (f64, f64)) -> String {
    format!("({}, {})", fmt4(ci.0), fmt4(ci.1))
}

/// Estimate, SE, and both intervals per parameter.
pub fn inference_table(result: &BootstrapResult, labels: &[(String, String)]) -> (String, String) {
    let level = level_label(result.alpha);
    let mut text = format!(
        "{:<10}{:<16}{:>10}{:>10}  {:<22}{:<22}\n",
        "param",
        "variable",
        "estimate",
        "se",
        level,
        format!("{level} (pct)")
    );
    let mut csv =
        String::from("param,variable,estimate,se,normal_lo,normal_hi,percentile_lo,percentile_hi\n");
    let s = &result.summary;
    for (j, (param, var)) in labels.iter().enumerate() {
        let _ = writeln!(
            text,
            "{param:<10}{var:<16}{:>10}{:>10}  {:<22}{:<22}",
            fmt4(result.point[j]),
            fmt4(s.se[j]),
            interval(s.ci_normal[j]),
            interval(s.ci_percentile[j])
        );
        let _ = writeln!(
            csv,
            "{param},{var},{},{},{},{},{},{}",
            result.point[j],
            s.se[j],
            s.ci_normal[j].0,
            s.ci_normal[j].1,
            s.ci_percentile[j].0,
            s.ci_percentile[j].1
        );
    }
    let _ = writeln!(
        text,
        "# {} of {} bootstrap replicates kept ({} retried)",
        result.requested - result.dropped,
        result.requested,
        result.retried
    );
    (text, csv)
}

/// Kept replicates, one row each, columns in `beta | gamma` order.
pub fn replicate_dump(result: &BootstrapResult, labels: &[(String, String)]) -> String {
    let mut out = String::from("replicate");
    for (param, _) in labels {
        out.push(',');
        out.push_str(param);
    }
    out.push('\n');
    for (k, id) in result.replicate_ids.iter().enumerate() {
        let row: Vec<String> = result.replicates.row(k).iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{id},{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_labels() {
        assert_eq!(level_label(0.05), "95% CI");
        assert_eq!(level_label(0.5), "50% CI");
        assert_eq!(level_label(0.025), "97.5% CI");
    }

    #[test]
    fn labels_number_gamma_from_zero_with_intercept() {
        let l = labels(
            &["a".into()],
            &[super::super::io::INTERCEPT.into(), "b".into()],
        );
        assert_eq!(l[1], ("gamma0".into(), "(intercept)".into()));
        assert_eq!(l[2], ("gamma1".into(), "b".into()));
        let l = labels(&["a".into()], &["b".into()]);
        assert_eq!(l[1].0, "gamma1");
    }
}
