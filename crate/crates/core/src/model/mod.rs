//! Linear model from pattern rates to success rate.
//!
//! Ordinary least squares with an optional ridge penalty on the slopes.
//! Features are always in the dataset's column order, see [`FEATURES`].

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const FEATURES: [&str; 6] = [
    "condition",
    "shift",
    "truncation",
    "dead_location",
    "repeat_addition",
    "overwrite",
];

/// Bundled benchmark table: ten rows of rates, measured and reference
/// predicted success rates.
pub const BUNDLED_CSV: &str = include_str!("../../data/tableIII.csv");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub name: String,
    pub rates: [f64; 6],
    pub measured_sr: f64,
    /// Reference prediction shipped with the dataset, if any.
    #[serde(default)]
    pub reference_predicted_sr: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("non-finite value in row {0}")]
    NonFinite(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    benchmark: String,
    condition: f64,
    shift: f64,
    truncation: f64,
    dead_location: f64,
    repeat_addition: f64,
    overwrite: f64,
    measured_sr: f64,
    #[serde(default)]
    predicted_sr: Option<f64>,
}

pub fn parse_rows(text: &str) -> Result<Vec<BenchmarkRow>, ModelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRecord>().enumerate() {
        let r = rec?;
        let row = BenchmarkRow {
            name: r.benchmark,
            rates: [r.condition, r.shift, r.truncation, r.dead_location, r.repeat_addition, r.overwrite],
            measured_sr: r.measured_sr,
            reference_predicted_sr: r.predicted_sr,
        };
        if !row.rates.iter().chain([&row.measured_sr]).all(|v| v.is_finite()) {
            return Err(ModelError::BadRow {
                row: i + 1,
                reason: "non-finite value".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_rows(path: &Path) -> Result<Vec<BenchmarkRow>, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Csv(e.into()))?;
    parse_rows(&text)
}

pub fn bundled_rows() -> Vec<BenchmarkRow> {
    parse_rows(BUNDLED_CSV).expect("bundled dataset parses")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub beta: [f64; 6],
    pub intercept: f64,
    pub training_set: Vec<String>,
    pub ridge_lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw: f64,
    pub clamped: f64,
}

pub fn fit(rows: &[BenchmarkRow]) -> Result<RegressionModel, ModelError> {
    fit_ridge(rows, 0.0)
}

/// Least squares on `[1 | X]`. With `lambda > 0` the slopes (not the
/// intercept) get an L2 penalty, which also makes collinear designs
/// solvable.
pub fn fit_ridge(rows: &[BenchmarkRow], lambda: f64) -> Result<RegressionModel, ModelError> {
    let p = FEATURES.len() + 1;
    if lambda == 0.0 && rows.len() < p {
        return Err(ModelError::TooFewRows {
            need: p,
            got: rows.len(),
        });
    }
    if rows.is_empty() {
        return Err(ModelError::TooFewRows { need: 1, got: 0 });
    }
    for r in rows {
        if !r.rates.iter().chain([&r.measured_sr]).all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite(r.name.clone()));
        }
    }
    let n = rows.len();
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i].rates[j - 1] });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.measured_sr));

    // Column scaling keeps tiny-rate columns from looking degenerate.
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let norm = x.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let xs = DMatrix::from_fn(n, p, |i, j| x[(i, j)] / scale[j]);

    let coef_scaled = if lambda == 0.0 {
        let svd = xs.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * 1e-10 * n.max(p) as f64;
        if let Some(k) = (0..svd.singular_values.len()).find(|&k| svd.singular_values[k] <= tol) {
            let v_t = svd.v_t.as_ref().expect("computed");
            let null = v_t.row(k);
            let big = null.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let columns = (0..p)
                .filter(|&j| null[j].abs() > 1e-3 * big)
                .map(|j| if j == 0 { "intercept".to_string() } else { FEATURES[j - 1].to_string() })
                .collect();
            return Err(ModelError::RankDeficient { columns });
        }
        svd.solve(&y, tol).expect("both factors computed")
    } else {
        let mut a = xs.transpose() * &xs;
        for j in 1..p {
            a[(j, j)] += lambda / (scale[j] * scale[j]);
        }
        let b = xs.transpose() * &y;
        a.lu().solve(&b).ok_or_else(|| ModelError::RankDeficient {
            columns: vec!["intercept".into()],
        })?
    };

    let mut beta = [0.0; 6];
    for (j, b) in beta.iter_mut().enumerate() {
        *b = coef_scaled[j + 1] / scale[j + 1];
    }
    Ok(RegressionModel {
        beta,
        intercept: coef_scaled[0] / scale[0],
        training_set: rows.iter().map(|r| r.name.clone()).collect(),
        ridge_lambda: lambda,
    })
}

pub fn predict(model: &RegressionModel, rates: &[f64; 6]) -> Prediction {
    let raw = model.intercept + model.beta.iter().zip(rates).map(|(b, x)| b * x).sum::<f64>();
    Prediction {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    }
}

pub fn r_squared(model: &RegressionModel, rows: &[BenchmarkRow]) -> f64 {
    let mean = rows.iter().map(|r| r.measured_sr).sum::<f64>() / rows.len() as f64;
    let ss_tot: f64 = rows.iter().map(|r| (r.measured_sr - mean).powi(2)).sum();
    let ss_res: f64 = rows
        .iter()
        .map(|r| (r.measured_sr - predict(model, &r.rates).raw).powi(2))
        .sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

fn std_dev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `beta_i * sd(x_i) / sd(y)` over `rows`. A constant feature gets 0.
pub fn standardized_coefficients(model: &RegressionModel, rows: &[BenchmarkRow]) -> [f64; 6] {
    let sy = std_dev(rows.iter().map(|r| r.measured_sr));
    let mut out = [0.0; 6];
    for (j, o) in out.iter_mut().enumerate() {
        let sx = std_dev(rows.iter().map(|r| r.rates[j]));
        if sx == 0.0 || sy == 0.0 {
            log::warn!("feature {} has zero variance; standardized coefficient set to 0", FEATURES[j]);
            continue;
        }
        *o = model.beta[j] * sx / sy;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowEval {
    pub name: String,
    pub measured_sr: f64,
    pub predicted_raw: f64,
    pub predicted_sr: f64,
    /// `|measured - predicted| / measured`, using the clamped prediction.
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub estimator: String,
    pub r_squared: f64,
    pub full_model: RegressionModel,
    pub per_row: Vec<RowEval>,
    /// Mean relative error over every row except the named one.
    pub mean_error_excluding: BTreeMap<String, f64>,
    pub mean_error: f64,
    /// Standardized coefficients averaged over the leave-one-out fits.
    pub std_coeffs: [f64; 6],
}

impl EvalReport {
    /// Feature names sorted by decreasing |standardized coefficient|.
    pub fn importance_order(&self) -> Vec<&'static str> {
        importance_order(&self.std_coeffs)
    }
}

pub fn importance_order(coeffs: &[f64; 6]) -> Vec<&'static str> {
    let mut idx: Vec<usize> = (0..6).collect();
    idx.sort_by(|&a, &b| coeffs[b].abs().total_cmp(&coeffs[a].abs()));
    idx.into_iter().map(|j| FEATURES[j]).collect()
}

fn estimator_name(lambda: f64) -> String {
    if lambda == 0.0 {
        "ols".into()
    } else {
        format!("ridge(lambda={lambda})")
    }
}

pub fn loo_evaluate(rows: &[BenchmarkRow]) -> Result<EvalReport, ModelError> {
    loo_evaluate_ridge(rows, 0.0)
}

pub fn loo_evaluate_ridge(rows: &[BenchmarkRow], lambda: f64) -> Result<EvalReport, ModelError> {
    if rows.len() < 8 {
        return Err(ModelError::TooFewRows {
            need: 8,
            got: rows.len(),
        });
    }
    let full_model = fit_ridge(rows, lambda)?;
    let folds: Vec<(RowEval, [f64; 6])> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let train: Vec<BenchmarkRow> = rows
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| r.clone())
                .collect();
            let m = fit_ridge(&train, lambda)?;
            let pred = predict(&m, &rows[i].rates);
            let measured = rows[i].measured_sr;
            Ok((
                RowEval {
                    name: rows[i].name.clone(),
                    measured_sr: measured,
                    predicted_raw: pred.raw,
                    predicted_sr: pred.clamped,
                    relative_error: (measured - pred.clamped).abs() / measured,
                },
                standardized_coefficients(&m, &train),
            ))
        })
        .collect::<Result<_, ModelError>>()?;

    let per_row: Vec<RowEval> = folds.iter().map(|(r, _)| r.clone()).collect();
    let mut std_coeffs = [0.0; 6];
    for (_, c) in &folds {
        for j in 0..6 {
            std_coeffs[j] += c[j] / folds.len() as f64;
        }
    }
    let total: f64 = per_row.iter().map(|r| r.relative_error).sum();
    let mean_error_excluding = per_row
        .iter()
        .map(|r| (r.name.clone(), (total - r.relative_error) / (per_row.len() - 1) as f64))
        .collect();
    Ok(EvalReport {
        estimator: estimator_name(lambda),
        r_squared: r_squared(&full_model, rows),
        mean_error: total / per_row.len() as f64,
        full_model,
        per_row,
        mean_error_excluding,
        std_coeffs,
    })
}

/// Model trained on every row except `name`, applied to that row.
pub fn leave_out_prediction(rows: &[BenchmarkRow], name: &str) -> Option<Result<Prediction, ModelError>> {
    let held = rows.iter().find(|r| r.name == name)?;
    let train: Vec<BenchmarkRow> = rows.iter().filter(|r| r.name != name).cloned().collect();
    Some(fit(&train).map(|m| predict(&m, &held.rates)))
}
