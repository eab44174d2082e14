//! Evaluation statistics: accuracy, the pairwise run-comparison
//! probability `p*`, domain-discovery purity under optimal relabeling,
//! and assignment histograms.

use itertools::Itertools;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Usage(format!(
            "accuracy over {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// `p(X_a > X_b)`: fraction of ordered pairs with `a` strictly greater.
/// Ties contribute zero; report them via [`tie_fraction`].
pub fn p_star(accs_a: &[f64], accs_b: &[f64]) -> Result<f64> {
    if accs_a.is_empty() || accs_b.is_empty() {
        return Err(Error::Usage("p_star needs nonempty lists".into()));
    }
    let wins = accs_a
        .iter()
        .flat_map(|a| accs_b.iter().map(move |b| (a > b) as usize))
        .sum::<usize>();
    Ok(wins as f64 / (accs_a.len() * accs_b.len()) as f64)
}

pub fn tie_fraction(accs_a: &[f64], accs_b: &[f64]) -> Result<f64> {
    if accs_a.is_empty() || accs_b.is_empty() {
        return Err(Error::Usage("tie_fraction needs nonempty lists".into()));
    }
    let ties = accs_a
        .iter()
        .flat_map(|a| accs_b.iter().map(move |b| (a == b) as usize))
        .sum::<usize>();
    Ok(ties as f64 / (accs_a.len() * accs_b.len()) as f64)
}

/// Best accuracy over injective mappings from latent ids to true ids.
/// Latent ids left unmatched (when there are more latent than true
/// domains) score zero.
pub fn domain_purity(assignments: &[usize], true_domains: &[usize]) -> Result<f64> {
    if assignments.is_empty() || assignments.len() != true_domains.len() {
        return Err(Error::Usage("purity needs equal nonempty inputs".into()));
    }
    let n_latent = assignments.iter().max().unwrap() + 1;
    let n_true = true_domains.iter().max().unwrap() + 1;
    // confusion[latent][true]
    let mut confusion = vec![vec![0usize; n_true]; n_latent];
    for (&a, &t) in assignments.iter().zip(true_domains) {
        confusion[a][t] += 1;
    }
    let slots = n_latent.max(n_true);
    let mut best = 0usize;
    // exhaustive search over injective maps; domain counts are small here
    for perm in (0..slots).permutations(n_latent) {
        let score: usize = perm
            .iter()
            .enumerate()
            .map(|(l, &t)| if t < n_true { confusion[l][t] } else { 0 })
            .sum();
        best = best.max(score);
    }
    Ok(best as f64 / assignments.len() as f64)
}

/// Counts of argmax latent assignments tallied by true domain.
/// Ties in a row break toward the lowest latent index.
#[derive(Debug, Clone)]
pub struct AssignmentHistogram {
    /// counts[true][latent]
    pub counts: Vec<Vec<usize>>,
}

pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn assignment_histogram(
    soft_assignments: &Tensor,
    true_domains: &[usize],
) -> Result<AssignmentHistogram> {
    if soft_assignments.rows() != true_domains.len() {
        return Err(Error::Shape(format!(
            "{} assignment rows vs {} true domains",
            soft_assignments.rows(),
            true_domains.len()
        )));
    }
    let n_true = true_domains.iter().max().map(|&t| t + 1).unwrap_or(0);
    let n_latent = soft_assignments.cols();
    let mut counts = vec![vec![0usize; n_latent]; n_true];
    for (i, &t) in true_domains.iter().enumerate() {
        counts[t][argmax_row(soft_assignments.row(i))] += 1;
    }
    Ok(AssignmentHistogram { counts })
}
