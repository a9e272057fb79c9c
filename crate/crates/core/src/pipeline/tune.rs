use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validation-set quality of one candidate ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneScore {
    pub validity: f64,
    pub robustness: f64,
    pub mean_l2: Option<f64>,
}

impl TuneScore {
    /// Lexicographic on (validity, robustness, −ℓ2); a missing ℓ2 ranks last.
    pub fn compare(&self, other: &TuneScore) -> Ordering {
        self.validity
            .total_cmp(&other.validity)
            .then(self.robustness.total_cmp(&other.robustness))
            .then(match (self.mean_l2, other.mean_l2) {
                (Some(a), Some(b)) => b.total_cmp(&a),
                (Some(_), None) => Ordering::Greater,
                (None, Some(_)) => Ordering::Less,
                (None, None) => Ordering::Equal,
            })
    }

    pub fn perfect(&self) -> bool {
        self.validity >= 1.0 && self.robustness >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub epsilon: f64,
    pub score: Option<TuneScore>,
    /// `(ε, score)` for every grid value evaluated.
    pub trace: Vec<(f64, TuneScore)>,
}

/// Smallest ε in an ascending grid with the best score, stopping at the
/// first perfect one. When nothing on the grid produces a valid
/// counterfactual the largest ε is returned.
pub fn tune_epsilon(grid: &[f64], mut score: impl FnMut(f64) -> Result<TuneScore>) -> Result<Tuned> {
    if grid.is_empty() {
        return Err(Error::Config("ε grid is empty".into()));
    }
    let mut best: Option<(f64, TuneScore)> = None;
    let mut trace = Vec::with_capacity(grid.len());
    for &eps in grid {
        let s = score(eps)?;
        trace.push((eps, s));
        if best.is_none_or(|(_, b)| s.compare(&b) == Ordering::Greater) {
            best = Some((eps, s));
        }
        if s.perfect() {
            break;
        }
    }
    let (epsilon, score) = match best {
        Some((e, s)) if s.validity > 0.0 => (e, Some(s)),
        _ => (*grid.last().expect("non-empty grid"), trace.last().map(|t| t.1)),
    };
    Ok(Tuned { epsilon, score, trace })
}
