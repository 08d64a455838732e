use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Matrix, RawData};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Skip the first line.
    #[serde(default)]
    pub has_header: bool,
    /// Keep only these (0-based) columns, in this order.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
}

/// Reads a numeric CSV into a row-major matrix. Row and column numbers in
/// errors are 1-based line and field positions.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

pub(crate) fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::InvalidArgument(format!("line {line}: {e}")))?;
        if schema.has_header && i == 0 {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row: line,
                expected,
                found: record.len(),
            });
        }
        let parsed = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: line,
                    col: j + 1,
                    cell: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = Matrix::from_rows(&rows)?;
    match &schema.columns {
        Some(cols) => m.select_cols(cols),
        None => Ok(m),
    }
}

/// Row `t` of the result is `log p(t−1) − log p(t)`: positive when the price falls.
pub fn log_losses(prices: &Matrix) -> Result<Matrix> {
    if prices.rows < 2 {
        return Err(Error::EmptyInput);
    }
    for i in 0..prices.rows {
        for j in 0..prices.cols {
            let value = prices.get(i, j);
            if !(value > 0.0) {
                return Err(Error::NonPositivePrice { row: i, column: j, value });
            }
        }
    }
    let mut data = Vec::with_capacity((prices.rows - 1) * prices.cols);
    for i in 1..prices.rows {
        for j in 0..prices.cols {
            data.push(prices.get(i - 1, j).ln() - prices.get(i, j).ln());
        }
    }
    Matrix::new(prices.rows - 1, prices.cols, data)
}

/// Nearest-rank percentile: the sorted value at 1-based index `⌈q·n⌉`.
pub fn percentile_threshold(column: &[f64], q: f64) -> Result<f64> {
    if column.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {q}")));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

/// Responses are the chosen contemporaneous columns; covariates are the
/// remaining contemporaneous columns followed by every column at lags
/// `1..=lag`.
pub fn assemble_classification_dataset(returns: &Matrix, response_cols: &[usize], lag: usize) -> Result<RawData> {
    if let Some(&bad) = response_cols.iter().find(|&&c| c >= returns.cols) {
        return Err(Error::ColumnOutOfRange {
            index: bad,
            columns: returns.cols,
        });
    }
    if response_cols.is_empty() {
        return Err(Error::InvalidArgument("at least one response column is required".into()));
    }
    if returns.rows <= lag {
        return Err(Error::EmptyInput);
    }
    let others: Vec<usize> = (0..returns.cols).filter(|c| !response_cols.contains(c)).collect();
    let n = returns.rows - lag;
    let d = others.len() + lag * returns.cols;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n * response_cols.len());
    for t in lag..returns.rows {
        x.extend(others.iter().map(|&c| returns.get(t, c)));
        for l in 1..=lag {
            x.extend_from_slice(returns.row(t - l));
        }
        y.extend(response_cols.iter().map(|&c| returns.get(t, c)));
    }
    RawData::new(
        Matrix::new(n, d, x)?,
        Matrix::new(n, response_cols.len(), y)?,
        format!("returns responses={response_cols:?} lag={lag}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_csv() {
        let m = parse_csv("1,2\n3,4", &CsvSchema::default()).unwrap();
        assert_eq!(m, Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let h = parse_csv("a,b\n1,2\n", &CsvSchema { has_header: true, columns: Some(vec![1]) }).unwrap();
        assert_eq!(h.data, vec![2.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_csv("", &CsvSchema::default()), Err(Error::EmptyInput)));
        assert!(matches!(
            parse_csv("1,2\nx,4", &CsvSchema::default()),
            Err(Error::Parse { row: 2, col: 1, .. })
        ));
        assert!(matches!(
            parse_csv("1,2\n3", &CsvSchema::default()),
            Err(Error::RaggedRow { row: 2, expected: 2, found: 1 })
        ));
    }

    #[test]
    fn log_loss_examples() {
        let flat = Matrix::new(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(log_losses(&flat).unwrap().data, vec![0.0, 0.0]);
        let moves = Matrix::new(3, 1, vec![1.0, 2.0, 1.0]).unwrap();
        let r = log_losses(&moves).unwrap().data;
        assert!((r[0] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r[1] - std::f64::consts::LN_2).abs() < 1e-15);
        let bad = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(matches!(log_losses(&bad), Err(Error::NonPositivePrice { row: 1, .. })));
    }

    #[test]
    fn nearest_rank() {
        let col: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_threshold(&col, 0.95).unwrap(), 95.0);
        assert_eq!(percentile_threshold(&[1.0, 2.0, 3.0], 0.5).unwrap(), 2.0);
        assert_eq!(percentile_threshold(&[4.0; 7], 0.3).unwrap(), 4.0);
        assert!(matches!(percentile_threshold(&[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn classification_layout() {
        let returns = Matrix::new(5, 12, (0..60).map(f64::from).collect()).unwrap();
        let raw = assemble_classification_dataset(&returns, &[9, 10, 11], 1).unwrap();
        assert_eq!((raw.x.cols, raw.y.cols, raw.len()), (21, 3, 4));
        assert_eq!(raw.y.row(0), &[21.0, 22.0, 23.0]);
        assert_eq!(raw.x.get(0, 9), 0.0);

        let wide = Matrix::new(4, 21, vec![0.5; 84]).unwrap();
        let all: Vec<usize> = (0..21).collect();
        let raw = assemble_classification_dataset(&wide, &all, 1).unwrap();
        assert_eq!((raw.x.cols, raw.y.cols), (21, 21));
        assert!(matches!(
            assemble_classification_dataset(&wide, &[21], 1),
            Err(Error::ColumnOutOfRange { index: 21, .. })
        ));
    }
}
