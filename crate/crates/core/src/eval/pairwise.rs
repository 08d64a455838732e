use std::io::Write;

use super::{flush, write_row};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::Model;

/// All index pairs `(i, j)` with `i < j < k`.
pub fn all_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
}

/// Mean bivariate log-likelihood of each pair on one split, on the original
/// response scale.
pub fn pair_mean_lls(model: &Model, dataset: &Dataset, split: Split, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let (x, y) = dataset.split_xy(split);
    if y.rows == 0 {
        return Err(Error::EmptyInput);
    }
    pairs
        .iter()
        .map(|&(i, j)| {
            let ll = model.pair_logpdf(&x, &y, i, j)?;
            let shift = dataset.y_stats.log_jacobian(&[i, j]);
            Ok(ll.iter().sum::<f64>() / ll.len() as f64 - shift)
        })
        .collect()
}

/// `wins[r][c]` counts pairs where model `r` scores strictly above model `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct WinMatrix {
    pub names: Vec<String>,
    pub wins: Vec<Vec<usize>>,
}

impl WinMatrix {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::from("model")];
        header.extend(self.names.iter().cloned());
        write_row(&mut w, &header)?;
        for (r, name) in self.names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(
                self.wins[r]
                    .iter()
                    .enumerate()
                    .map(|(c, v)| if c == r { String::new() } else { v.to_string() }),
            );
            write_row(&mut w, &row)?;
        }
        flush(w)
    }
}

/// Win table from per-model, per-pair mean log-likelihoods.
pub fn pairwise_ll_wins(names: &[String], scores: &[Vec<f64>]) -> Result<WinMatrix> {
    if names.len() != scores.len() {
        return Err(Error::shape(format!("{} score rows", names.len()), format!("{}", scores.len())));
    }
    let pairs = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|s| s.len() != pairs) {
        return Err(Error::InvalidArgument("every model needs a score for every pair".into()));
    }
    let wins = scores
        .iter()
        .enumerate()
        .map(|(r, a)| {
            scores
                .iter()
                .enumerate()
                .map(|(c, b)| if r == c { 0 } else { a.iter().zip(b).filter(|(x, y)| x > y).count() })
                .collect()
        })
        .collect();
    Ok(WinMatrix {
        names: names.to_vec(),
        wins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts() {
        assert_eq!(all_pairs(21).len(), 210);
        assert_eq!(all_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(all_pairs(1).is_empty());
    }

    #[test]
    fn ties_and_dominance() {
        let names = vec!["a".to_string(), "b".to_string()];
        let a = vec![-1.0, -2.0, 0.5];
        let same = pairwise_ll_wins(&names, &[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.wins, vec![vec![0, 0], vec![0, 0]]);
        let worse: Vec<f64> = a.iter().map(|v| v - 1.0).collect();
        let dom = pairwise_ll_wins(&names, &[a, worse]).unwrap();
        assert_eq!(dom.wins, vec![vec![0, 3], vec![0, 0]]);
        let mut buf = Vec::new();
        dom.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "model,a,b\na,,3\nb,0,\n");
    }
}
