//! CSV ingestion: a header row, the observation in column `x`, then one
//! concentration column per component.

use std::io::Read;

use mvc::empirical::Sample;
use mvc::weights::ConcentrationMatrix;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct DataSet {
    pub sample: Sample,
    pub concentrations: ConcentrationMatrix,
    pub component_names: Vec<String>,
}

impl DataSet {
    pub fn n_components(&self) -> usize {
        self.concentrations.n_components()
    }
}

pub fn read_csv<R: Read>(reader: R, renormalize: bool) -> Result<DataSet, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
        .clone();
    if headers.get(0) != Some("x") {
        return Err(CliError::Input(
            "first column must be named `x`".to_string(),
        ));
    }
    let component_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if component_names.is_empty() {
        return Err(CliError::Input(
            "need at least one concentration column after `x`".to_string(),
        ));
    }
    let width = headers.len();
    let mut x = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| CliError::Input(format!("line {line}: {e}")))?;
        if record.len() != width {
            return Err(CliError::Input(format!(
                "line {line}: expected {width} fields, found {}",
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(width);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!(
                    "line {line}, column {}: {cell:?} is not a number",
                    headers.get(c).unwrap_or("?")
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "line {line}, column {}: value {cell:?} is not finite",
                    headers.get(c).unwrap_or("?")
                )));
            }
            values.push(v);
        }
        x.push(values[0]);
        rows.push(values[1..].to_vec());
    }
    if x.is_empty() {
        return Err(CliError::Input("no data rows".to_string()));
    }
    let concentrations = if renormalize {
        ConcentrationMatrix::from_rows_renormalized(&rows)
    } else {
        ConcentrationMatrix::from_rows(&rows)
    }
    .map_err(|e| CliError::Input(e.to_string()))?;
    let sample = Sample::new(x).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(DataSet {
        sample,
        concentrations,
        component_names,
    })
}

/// Writes observations and concentrations in the format [`read_csv`] reads.
pub fn write_csv(x: &[f64], p: &ConcentrationMatrix) -> String {
    let m = p.n_components();
    let mut out = String::from("x");
    for c in 1..=m {
        out.push_str(&format!(",p{c}"));
    }
    out.push('\n');
    for (j, v) in x.iter().enumerate() {
        out.push_str(&v.to_string());
        for c in 0..m {
            out.push(',');
            out.push_str(&p.get(j, c).to_string());
        }
        out.push('\n');
    }
    out
}
