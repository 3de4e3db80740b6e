//! Text-to-audio retrieval over clip-level embeddings.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct RetrievalReport {
    pub queries: usize,
    /// Mean of 1/rank over queries whose target ranks in the top 10,
    /// zero otherwise.
    pub map10: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
}

/// Rank of the correct candidate for one query row: one plus the number of
/// strictly better candidates, plus earlier-indexed exact ties. Index order
/// breaks ties so the result never depends on sort stability.
pub fn rank_of(similarities: &[f64], correct: usize) -> Result<usize> {
    if correct >= similarities.len() {
        return Err(Error::invalid(format!(
            "rank_of: target {} out of {} candidates",
            correct,
            similarities.len()
        )));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("rank_of: non-finite similarity"));
    }
    let target = similarities[correct];
    let mut rank = 1;
    for (i, &s) in similarities.iter().enumerate() {
        if s > target || (s == target && i < correct) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Scores each text row of `similarity` (queries by candidates) against its
/// paired audio column given by `correct`.
pub fn retrieval_report(similarity: &Tensor, correct: &[usize]) -> Result<RetrievalReport> {
    if similarity.rows() == 0 || similarity.cols() == 0 {
        return Err(Error::invalid("retrieval: empty similarity matrix"));
    }
    if correct.len() != similarity.rows() {
        return Err(Error::shape(format!(
            "retrieval: {} queries but {} targets",
            similarity.rows(),
            correct.len()
        )));
    }
    let mut map10 = 0.0;
    let mut hits = [0usize; 3];
    for (q, &c) in correct.iter().enumerate() {
        let rank = rank_of(similarity.row(q), c)?;
        if rank <= 10 {
            map10 += 1.0 / rank as f64;
        }
        for (slot, k) in [1, 5, 10].into_iter().enumerate() {
            if rank <= k {
                hits[slot] += 1;
            }
        }
    }
    let n = similarity.rows() as f64;
    Ok(RetrievalReport {
        queries: similarity.rows(),
        map10: map10 / n,
        r_at_1: hits[0] as f64 / n,
        r_at_5: hits[1] as f64 / n,
        r_at_10: hits[2] as f64 / n,
    })
}

/// Dot-product similarity between row-normalized text and audio embeddings.
pub fn similarity_matrix(text: &Tensor, audio: &Tensor) -> Result<Tensor> {
    if text.cols() != audio.cols() {
        return Err(Error::shape(format!(
            "similarity: text dim {} vs audio dim {}",
            text.cols(),
            audio.cols()
        )));
    }
    let mut sim = Tensor::zeros(text.rows(), audio.rows());
    for q in 0..text.rows() {
        for a in 0..audio.rows() {
            *sim.at_mut(q, a) = crate::tensor::dot(text.row(q), audio.row(a));
        }
    }
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Similarity matrix engineered so queries 0..4 rank their targets at
    /// 1, 2, 3, 11, and 4.
    fn fixture() -> (Tensor, Vec<usize>) {
        let n = 12;
        let mut sim = Tensor::zeros(5, n);
        for q in 0..5 {
            for a in 0..n {
                *sim.at_mut(q, a) = -1.0 - a as f64 * 0.01;
            }
        }
        // Query q's target is column q; plant `rank - 1` better columns.
        let ranks = [1usize, 2, 3, 11, 4];
        for (q, &r) in ranks.iter().enumerate() {
            *sim.at_mut(q, q) = 0.5;
            let mut planted = 0;
            for a in 0..n {
                if a != q && planted < r - 1 {
                    *sim.at_mut(q, a) = 0.6;
                    planted += 1;
                }
            }
        }
        (sim, (0..5).collect())
    }

    #[test]
    fn hand_worked_map_and_recall() {
        let (sim, correct) = fixture();
        let report = retrieval_report(&sim, &correct).unwrap();
        // (1 + 1/2 + 1/3 + 0 + 1/4) / 5 = 25/60 = 5/12.
        assert!((report.map10 - 5.0 / 12.0).abs() < 1e-12, "{}", report.map10);
        assert!((report.r_at_1 - 0.2).abs() < 1e-12);
        assert!((report.r_at_5 - 0.8).abs() < 1e-12);
        assert!((report.r_at_10 - 0.8).abs() < 1e-12);
        assert_eq!(report.queries, 5);
    }

    #[test]
    fn ties_break_toward_earlier_indices() {
        // Target at index 2 tied with indices 0 and 3: only the earlier
        // tie outranks it.
        assert_eq!(rank_of(&[0.5, 0.1, 0.5, 0.5], 2).unwrap(), 2);
        assert_eq!(rank_of(&[0.5, 0.1, 0.5, 0.5], 0).unwrap(), 1);
        assert_eq!(rank_of(&[0.5, 0.1, 0.5, 0.5], 3).unwrap(), 3);
        // All-equal scores degrade to index order.
        assert_eq!(rank_of(&[0.2, 0.2, 0.2], 1).unwrap(), 2);
    }

    #[test]
    fn perfect_and_worst_case() {
        let mut sim = Tensor::zeros(3, 3);
        for i in 0..3 {
            *sim.at_mut(i, i) = 1.0;
        }
        let r = retrieval_report(&sim, &[0, 1, 2]).unwrap();
        assert_eq!((r.map10, r.r_at_1), (1.0, 1.0));

        // Target always ranked last among 20 candidates.
        let mut sim = Tensor::zeros(2, 20);
        for q in 0..2 {
            for a in 0..20 {
                *sim.at_mut(q, a) = a as f64;
            }
        }
        let r = retrieval_report(&sim, &[0, 0]).unwrap();
        assert_eq!((r.map10, r.r_at_10), (0.0, 0.0));
    }

    #[test]
    fn similarity_matrix_is_pairwise_dot() {
        let text = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let audio = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        let sim = similarity_matrix(&text, &audio).unwrap();
        assert!((sim.at(0, 0) - 0.6).abs() < 1e-15);
        assert!((sim.at(1, 0) - 0.8).abs() < 1e-15);
        assert_eq!(sim.at(1, 1), 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let sim = Tensor::zeros(2, 3);
        assert!(retrieval_report(&sim, &[0]).is_err());
        assert!(retrieval_report(&sim, &[0, 5]).is_err());
        assert!(rank_of(&[0.1, f64::NAN], 0).is_err());
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 4);
        assert!(similarity_matrix(&a, &b).is_err());
    }
}
