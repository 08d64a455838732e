//! Evaluation metrics: tail-event classification, tail dependence, mutual
//! information and pairwise likelihood comparisons.

mod classify;
mod mi;
mod pairwise;
mod quantile;
mod tail;

pub use classify::{auc_permutation_null, pr_ap, roc_auc, tail_labels_scores, TailScores};
pub use mi::{model_mutual_information, mutual_information_quadrature, MiResult, QuadBox};
pub use pairwise::{all_pairs, pair_mean_lls, pairwise_ll_wins, WinMatrix};
pub use quantile::{quantile_invert, quantile_invert_many, BRACKET_DOUBLINGS, BRACKET_START, MAX_BISECTIONS};
pub use tail::{default_u_grid, empirical_tail_dep, model_tail_dep, TailDepGrid, TailSource};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    /// False positive rate against true positive rate.
    Roc,
    /// Recall against precision.
    PrecisionRecall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
    /// AUC for ROC curves, average precision for PR curves.
    pub summary: f64,
}

impl Curve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        write_row(&mut w, &["x", "y", "summary"])?;
        for &(x, y) in &self.points {
            write_row(&mut w, &[x.to_string(), y.to_string(), self.summary.to_string()])?;
        }
        flush(w)
    }
}

pub(crate) fn write_row<W: Write, S: AsRef<[u8]>>(w: &mut csv::Writer<W>, fields: &[S]) -> Result<()> {
    w.write_record(fields)
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

pub(crate) fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("csv output", e))
}
