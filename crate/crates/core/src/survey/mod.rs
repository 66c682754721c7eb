//! Stratified survey data: per-category counts with population weights,
//! the weighted overall positivity, and allocation comparisons.

mod compare;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowDiagnostic};

pub use compare::{compare_allocations, replay_adaptive, CompareOptions, ComparisonRow, ComparisonTable};

/// Weight sums this close to one are accepted as is.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;
/// Weight sums within this distance of one are rescaled; others are
/// rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

const COLUMNS: [&str; 5] = ["category", "weight", "samples", "positives", "theta"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub weight: f64,
    pub samples: u64,
    pub positives: u64,
    /// Accuracy target on this category's MSE.
    #[serde(default)]
    pub theta: Option<f64>,
}

impl Category {
    pub fn positivity(&self) -> Option<f64> {
        (self.samples > 0).then(|| self.positives as f64 / self.samples as f64)
    }

    /// Plug-in tracking parameter `2 p (1 - p)` of the Bernoulli outcome.
    pub fn plug_in_tracking(&self) -> f64 {
        self.positivity().map_or(0.0, |p| 2.0 * p * (1.0 - p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDataset {
    pub categories: Vec<Category>,
    /// Target on the MSE of the overall positivity estimate.
    #[serde(default)]
    pub overall_target: Option<f64>,
    /// Total budget; the number of samples actually collected when absent.
    #[serde(default)]
    pub budget: Option<u64>,
}

impl SurveyDataset {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let ds = Self {
            categories,
            overall_target: None,
            budget: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut rows = Vec::new();
        if self.categories.is_empty() {
            rows.push(RowDiagnostic::new(0, "dataset has no categories"));
        }
        let mut names = HashSet::new();
        for (i, c) in self.categories.iter().enumerate() {
            rows.extend(check_category(c, i + 1, &mut names));
        }
        let sum: f64 = self.categories.iter().map(|c| c.weight).sum();
        if !self.categories.is_empty() && (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            rows.push(RowDiagnostic::new(0, format!("weights sum to {sum}, expected 1")));
        }
        if let Some(t) = self.overall_target {
            if !(t > 0.0 && t.is_finite()) {
                rows.push(RowDiagnostic::new(0, format!("overall target must be positive, got {t}")));
            }
        }
        if self.budget == Some(0) {
            rows.push(RowDiagnostic::new(0, "budget must be positive"));
        }
        if rows.is_empty() {
            Ok(())
        } else {
            Err(Error::Survey(rows))
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.categories.iter().map(|c| c.weight).collect()
    }

    pub fn samples(&self) -> Vec<u64> {
        self.categories.iter().map(|c| c.samples).collect()
    }

    pub fn collected(&self) -> u64 {
        self.categories.iter().map(|c| c.samples).sum()
    }

    pub fn budget(&self) -> u64 {
        self.budget.unwrap_or_else(|| self.collected())
    }

    pub fn plug_in_tracking(&self) -> Vec<f64> {
        self.categories.iter().map(Category::plug_in_tracking).collect()
    }

    /// Per-category and overall targets: explicit values where given,
    /// otherwise defaults loose enough that the known-variance problem is
    /// feasible with the budget.
    ///
    /// The defaults are twice the equalized worst-category MSE for each
    /// category and twice the best achievable overall MSE for the overall
    /// estimate; the even mix of the two optimal allocations meets both.
    pub fn resolved_targets(&self) -> (Vec<f64>, f64) {
        let n = self.budget() as f64;
        let c = self.plug_in_tracking();
        let per_category = 2.0 * c.iter().sum::<f64>() / n;
        let weighted_sd: f64 = self.categories.iter().zip(&c).map(|(cat, c)| cat.weight * c.sqrt()).sum();
        let overall = 2.0 * weighted_sd * weighted_sd / n;
        let fallback = |v: f64| if v > 0.0 { v } else { 1.0 };
        let targets = self
            .categories
            .iter()
            .map(|cat| cat.theta.unwrap_or_else(|| fallback(per_category)))
            .collect();
        (targets, self.overall_target.unwrap_or_else(|| fallback(overall)))
    }

    pub fn to_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let with_theta = self.categories.iter().any(|c| c.theta.is_some());
        let header: &[&str] = if with_theta { &COLUMNS } else { &COLUMNS[..4] };
        w.write_record(header).map_err(io)?;
        for c in &self.categories {
            let mut record = vec![c.name.clone(), c.weight.to_string(), c.samples.to_string(), c.positives.to_string()];
            if with_theta {
                record.push(c.theta.map(|t| t.to_string()).unwrap_or_default());
            }
            w.write_record(&record).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        ingest_reader(input)
    }
}

fn check_category(c: &Category, row: usize, names: &mut HashSet<String>) -> Vec<RowDiagnostic> {
    let mut out = Vec::new();
    if c.name.trim().is_empty() {
        out.push(RowDiagnostic::new(row, "category name is empty"));
    } else if !names.insert(c.name.clone()) {
        out.push(RowDiagnostic::new(row, format!("duplicate category `{}`", c.name)));
    }
    if !(c.weight >= 0.0 && c.weight.is_finite()) {
        out.push(RowDiagnostic::new(row, format!("weight must be non-negative, got {}", c.weight)));
    }
    if c.positives > c.samples {
        out.push(RowDiagnostic::new(
            row,
            format!("positives ({}) exceed samples ({})", c.positives, c.samples),
        ));
    }
    if let Some(t) = c.theta {
        if !(t > 0.0 && t.is_finite()) {
            out.push(RowDiagnostic::new(row, format!("theta must be positive, got {t}")));
        }
    }
    out
}

fn parse_field<T: std::str::FromStr>(raw: &str, column: &str, row: usize, diags: &mut Vec<RowDiagnostic>) -> Option<T> {
    match raw.trim().parse() {
        Ok(v) => Some(v),
        Err(_) => {
            let hint = if raw.trim().starts_with('-') { " (negative values are not allowed)" } else { "" };
            diags.push(RowDiagnostic::new(row, format!("cannot parse {column} `{raw}`{hint}")));
            None
        }
    }
}

/// Reads a dataset from CSV with header `category,weight,samples,positives`
/// and an optional `theta` column.
///
/// Row numbers in diagnostics are file line numbers, the header being line
/// 1; row 0 marks file-level problems.
pub fn ingest_reader<R: Read>(input: R) -> Result<SurveyDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Survey(vec![RowDiagnostic::new(0, format!("unreadable header: {e}"))]))?
        .iter()
        .map(str::to_lowercase)
        .collect();
    let expected_short: Vec<&str> = COLUMNS[..4].to_vec();
    let with_theta = header == COLUMNS;
    if !with_theta && header != expected_short {
        return Err(Error::Survey(vec![RowDiagnostic::new(
            1,
            format!("header must be `{}` with optional `,theta`, got `{}`", expected_short.join(","), header.join(",")),
        )]));
    }

    let mut diags = Vec::new();
    let mut categories = Vec::new();
    let mut names = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                diags.push(RowDiagnostic::new(row, format!("malformed record: {e}")));
                continue;
            }
        };
        let before = diags.len();
        let name = record.get(0).unwrap_or("").to_string();
        let weight = parse_field::<f64>(&record[1], "weight", row, &mut diags);
        let samples = parse_field::<u64>(&record[2], "samples", row, &mut diags);
        let positives = parse_field::<u64>(&record[3], "positives", row, &mut diags);
        let theta = match record.get(4).map(str::trim) {
            Some(raw) if with_theta && !raw.is_empty() => parse_field::<f64>(raw, "theta", row, &mut diags),
            _ => None,
        };
        if diags.len() > before {
            continue;
        }
        let category = Category {
            name,
            weight: weight.expect("parsed"),
            samples: samples.expect("parsed"),
            positives: positives.expect("parsed"),
            theta,
        };
        diags.extend(check_category(&category, row, &mut names));
        categories.push(category);
    }
    if categories.is_empty() && diags.is_empty() {
        diags.push(RowDiagnostic::new(0, "file has no data rows"));
    }
    if !diags.is_empty() {
        return Err(Error::Survey(diags));
    }

    let sum: f64 = categories.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(Error::Survey(vec![RowDiagnostic::new(
            0,
            format!("weights sum to {sum}; they must sum to 1 (sums within 0.001 of 1 are renormalized)"),
        )]));
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        for c in &mut categories {
            c.weight /= sum;
        }
    }
    let ds = SurveyDataset {
        categories,
        overall_target: None,
        budget: None,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn ingest(path: &Path) -> Result<SurveyDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallEstimate {
    /// Weighted mean of the per-category positivities.
    pub estimate: f64,
    /// Plug-in MSE `sum_k w_k^2 c_k / T_k`.
    pub mse: f64,
    pub positivity: Vec<f64>,
}

/// `sum_k w_k^2 c_k / T_k`; terms with `c_k = 0` contribute nothing.
pub fn overall_mse(weights: &[f64], tracking: &[f64], counts: &[u64]) -> f64 {
    weights
        .iter()
        .zip(tracking)
        .zip(counts)
        .map(|((w, c), &t)| if *c == 0.0 { 0.0 } else { w * w * c / t as f64 })
        .sum()
}

pub fn overall_estimate(ds: &SurveyDataset) -> Result<OverallEstimate> {
    let starved: Vec<&str> = ds.categories.iter().filter(|c| c.samples == 0).map(|c| c.name.as_str()).collect();
    if !starved.is_empty() {
        return Err(Error::invalid("samples", format!("categories without samples: {}", starved.join(", "))));
    }
    let positivity: Vec<f64> = ds.categories.iter().map(|c| c.positives as f64 / c.samples as f64).collect();
    let estimate = ds.categories.iter().zip(&positivity).map(|(c, p)| c.weight * p).sum::<f64>().clamp(0.0, 1.0);
    let mse = overall_mse(&ds.weights(), &ds.plug_in_tracking(), &ds.samples());
    Ok(OverallEstimate {
        estimate,
        mse,
        positivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(name: &str, weight: f64, samples: u64, positives: u64) -> Category {
        Category {
            name: name.into(),
            weight,
            samples,
            positives,
            theta: None,
        }
    }

    #[test]
    fn ingest_two_rows() {
        let ds = ingest_reader("category,weight,samples,positives\na,0.6,10,1\nb,0.4,20,3\n".as_bytes()).unwrap();
        assert_eq!(ds.categories.len(), 2);
        assert!((ds.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_unit_weights_are_renormalized_and_far_ones_rejected() {
        let ds = ingest_reader("category,weight,samples,positives\na,0.6,10,1\nb,0.3995,20,3\n".as_bytes()).unwrap();
        assert!((ds.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let err = ingest_reader("category,weight,samples,positives\na,0.6,10,1\nb,0.35,20,3\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("renormalized"), "{err}");
    }

    #[test]
    fn row_diagnostics_carry_line_numbers() {
        let text = "category,weight,samples,positives,theta\na,0.5,10,11,\nb,0.5,-3,0,\nc,0,5,1,-1\n";
        let Err(Error::Survey(rows)) = ingest_reader(text.as_bytes()) else {
            panic!("expected diagnostics");
        };
        let lines: Vec<usize> = rows.iter().map(|r| r.row).collect();
        assert_eq!(lines, vec![2, 3, 4]);
        assert!(rows[1].message.contains("negative"));
        let bad_header = ingest_reader("name,weight,samples,positives\n".as_bytes()).unwrap_err();
        assert!(matches!(bad_header, Error::Survey(ref r) if r[0].row == 1));
    }

    #[test]
    fn export_round_trips() {
        let text = "category,weight,samples,positives,theta\na,0.25,10,1,0.01\nb,0.7496,20,3,\nc,0.0007,4,0,\n";
        let ds = ingest_reader(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        ds.to_csv(&mut buf).unwrap();
        assert_eq!(ingest_reader(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn overall_estimate_examples() {
        let one = SurveyDataset::new(vec![cat("a", 1.0, 100, 5)]).unwrap();
        assert!((overall_estimate(&one).unwrap().estimate - 0.05).abs() < 1e-15);
        let two = SurveyDataset::new(vec![cat("a", 0.5, 100, 0), cat("b", 0.5, 100, 10)]).unwrap();
        assert!((overall_estimate(&two).unwrap().estimate - 0.05).abs() < 1e-15);
        assert!((overall_mse(&[0.5, 0.5], &[0.0198, 0.09], &[100, 100]) - 2.745e-4).abs() < 1e-15);
        // Positivities 0.01 and 0.05 give c = (0.0198, 0.095).
        let mixed = SurveyDataset::new(vec![cat("a", 0.5, 100, 1), cat("b", 0.5, 100, 5)]).unwrap();
        let est = overall_estimate(&mixed).unwrap();
        assert!((est.mse - 0.25 * (0.0198 + 0.095) / 100.0).abs() < 1e-15);
        let starved = SurveyDataset::new(vec![cat("a", 0.5, 0, 0), cat("b", 0.5, 10, 1)]).unwrap();
        assert!(overall_estimate(&starved).unwrap_err().to_string().contains('a'));
    }

    #[test]
    fn overall_mse_decreases_with_samples() {
        let mut ds = SurveyDataset::new(vec![cat("a", 0.3, 50, 5), cat("b", 0.7, 80, 20)]).unwrap();
        let before = overall_estimate(&ds).unwrap().mse;
        // Same positivity, more samples.
        ds.categories[0].samples = 60;
        ds.categories[0].positives = 6;
        assert!(overall_estimate(&ds).unwrap().mse < before);
    }
}
