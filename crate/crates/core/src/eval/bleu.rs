use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// 0..100.
    pub score: f64,
    /// Clipped n-gram precisions for n = 1..4; NaN where the hypotheses hold no n-grams of that order.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Orders that entered the geometric mean.
    pub order: usize,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Case-insensitive corpus BLEU with one reference per hypothesis and no smoothing.
/// Orders for which the hypotheses contain no n-grams at all (every sentence
/// shorter than `n`) are left out of the geometric mean; any other zero
/// precision gives a score of 0.
pub fn bleu<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<BleuReport, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::CountMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Empty);
    }
    let fold = |s: &[S]| s.iter().map(|t| t.as_ref().to_lowercase()).collect::<Vec<_>>();
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (fold(h), fold(r));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngrams(&r, n);
            for (g, c) in ngrams(&h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [f64::NAN; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut order = 0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        precisions[n] = matches[n] as f64 / totals[n] as f64;
        log_sum += precisions[n].ln();
        order += 1;
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if order == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / order as f64).exp()
    };
    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn short_hypothesis_penalized() {
        let r = bleu(&[split("a b c d")], &[split("a b c d e")]).unwrap();
        assert_eq!(r.precisions, [1.0; 4]);
        assert!((r.brevity_penalty - (-0.25f64).exp()).abs() < 1e-15);
        assert!((r.score - 77.880078307).abs() < 1e-6);
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(bleu(&[split("x y z w")], &[split("a b c d")]).unwrap().score, 0.0);
    }

    #[test]
    fn case_folded() {
        assert_eq!(bleu(&[split("The Cat sat down")], &[split("the cat SAT down")]).unwrap().score, 100.0);
    }

    #[test]
    fn count_mismatch() {
        assert!(matches!(
            bleu(&[split("a")], &[split("a"), split("b")]),
            Err(EvalError::CountMismatch { .. })
        ));
    }
}
