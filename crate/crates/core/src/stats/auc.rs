use crate::error::{Error, Result};

/// Area under the ROC curve as the normalized Mann–Whitney U statistic:
/// (concordant pairs + ties / 2) / (positives × negatives), where a pair is
/// concordant when the positive has the higher score.
///
/// Runs in O(n log n) using mid-ranks.
pub fn auc_mann_whitney(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Untestable(
            "AUC needs at least one positive and one negative".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mid * pos_in_tie as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// Hanley–McNeil standard error of an AUC estimate.
pub fn hanley_mcneil_se(auc: f64, n_pos: usize, n_neg: usize) -> f64 {
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let a2 = auc * auc;
    let var = (auc * (1.0 - auc) + (np - 1.0) * (q1 - a2) + (nn - 1.0) * (q2 - a2)) / (np * nn);
    var.max(0.0).sqrt()
}
