//! Cohort CSV: `id,<covariates…>,y,g1,…,gD`, one patient per row.

use crate::error::CliError;
use ntcp_msm::dvh::{CumulativeDvh, DvhTolerances};
use ntcp_msm::{Cohort, DoseGrid, PatientRecord};
use std::io::Read;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn number(field: &str, what: &str, line: u64) -> Result<f64, CliError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| invalid(format!("line {line}: {what} value {field:?} is not a number")))
}

/// Parse a cohort, checking the number of volume columns against `grid`.
pub fn read_cohort<R: Read>(reader: R, grid: DoseGrid, tol: &DvhTolerances) -> Result<Cohort, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| invalid(format!("cohort header: {e}")))?.clone();
    if header.get(0) != Some("id") {
        return Err(invalid("cohort header must start with `id`"));
    }
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| invalid("cohort header has no `y` column"))?;
    let covariates: Vec<String> = header.iter().take(y_col).skip(1).map(String::from).collect();
    let g_cols: Vec<&str> = header.iter().skip(y_col + 1).collect();
    for (k, name) in g_cols.iter().enumerate() {
        if *name != format!("g{}", k + 1) {
            return Err(invalid(format!("volume column {} is named {name:?}, expected \"g{}\"", k + 1, k + 1)));
        }
    }
    if g_cols.len() != grid.n_bins() {
        return Err(invalid(format!(
            "cohort has {} volume columns (g1..g{}) but the configured grid has {} dose bins",
            g_cols.len(),
            g_cols.len(),
            grid.n_bins()
        )));
    }

    let mut patients = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| invalid(format!("cohort CSV: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let x = (1..y_col)
            .map(|j| number(&rec[j], &header[j], line))
            .collect::<Result<Vec<_>, _>>()?;
        let outcome = match rec[y_col].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(invalid(format!("line {line}: outcome {other:?} must be 0 or 1"))),
        };
        let g = (y_col + 1..rec.len())
            .map(|j| number(&rec[j], &header[j], line))
            .collect::<Result<Vec<_>, _>>()?;
        let dvh = CumulativeDvh::with_tolerances(grid, g, tol)
            .map_err(|e| invalid(format!("line {line} (patient {}): {e}", &rec[0])))?;
        patients.push(PatientRecord { id: rec[0].to_string(), covariates: x, dvh, outcome });
    }
    Ok(Cohort::new(grid, covariates, patients)?)
}

pub fn write_cohort(cohort: &Cohort) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend(cohort.covariate_names().iter().cloned());
    header.push("y".into());
    header.extend((1..=cohort.grid().n_bins()).map(|k| format!("g{k}")));
    w.write_record(&header).expect("in-memory write");
    for p in cohort.patients() {
        let mut row = vec![p.id.clone()];
        row.extend(p.covariates.iter().map(f64::to_string));
        row.push(p.outcome.to_string());
        row.extend(p.dvh.values().iter().map(f64::to_string));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
