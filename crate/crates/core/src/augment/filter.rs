use crate::metrics::{rouge_l_tokens, tokenize};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

/// Redundancy filter state: the comparison pool grows as candidates are kept.
#[derive(Debug, Clone)]
pub struct RougeFilter {
    threshold: f64,
    pool: Vec<Vec<String>>,
}

impl RougeFilter {
    pub fn new<S: AsRef<str>>(threshold: f64, pool: &[S]) -> Self {
        assert!((0.0..=1.0).contains(&threshold), "threshold {threshold} outside [0,1]");
        RougeFilter {
            threshold,
            pool: pool.iter().map(|p| tokenize(p.as_ref())).collect(),
        }
    }

    /// Highest ROUGE-L of `tokens` against the pool.
    fn max_score(&self, tokens: &[String]) -> f64 {
        let mut best = 0.0f64;
        for p in &self.pool {
            // F1 can never exceed 2·min/(a+b); skip pool entries that cannot
            // beat the current best or cross the threshold.
            let bound = 2.0 * tokens.len().min(p.len()) as f64 / (tokens.len() + p.len()).max(1) as f64;
            if bound <= best || bound <= self.threshold {
                continue;
            }
            best = best.max(rouge_l_tokens(tokens, p));
            if best > self.threshold {
                break;
            }
        }
        best
    }

    /// Keeps `text` iff its best ROUGE-L against the pool is ≤ threshold, in
    /// which case it joins the pool.
    pub fn offer(&mut self, text: &str) -> bool {
        let tokens = tokenize(text);
        if self.max_score(&tokens) <= self.threshold {
            self.pool.push(tokens);
            true
        } else {
            false
        }
    }
}

/// Splits `candidates` into kept and dropped, comparing each against
/// `accepted_pool` plus the candidates kept before it.
pub fn rouge_l_filter<S: AsRef<str>, P: AsRef<str>>(
    candidates: &[S],
    accepted_pool: &[P],
    threshold: f64,
) -> FilterOutcome {
    let mut filter = RougeFilter::new(threshold, accepted_pool);
    let mut out = FilterOutcome::default();
    for c in candidates {
        let c = c.as_ref();
        if filter.offer(c) {
            out.kept.push(c.to_string());
        } else {
            out.dropped.push(c.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_candidate_dropped() {
        let out = rouge_l_filter(&["the cat sat"], &["the cat sat"], 0.7);
        assert_eq!(out.dropped, vec!["the cat sat"]);
    }

    #[test]
    fn disjoint_candidate_kept() {
        let out = rouge_l_filter(&["alpha beta"], &["gamma delta"], 0.7);
        assert_eq!(out.kept, vec!["alpha beta"]);
    }

    #[test]
    fn reordered_candidate_above_threshold_dropped() {
        let out = rouge_l_filter(&["a b c d"], &["a c b d"], 0.7);
        assert_eq!(out.dropped.len(), 1);
        let out = rouge_l_filter(&["a b c d"], &["a c b d"], 0.75);
        assert_eq!(out.kept.len(), 1);
    }

    #[test]
    fn kept_candidates_join_the_pool() {
        let out = rouge_l_filter(&["one two three", "one two three"], &[] as &[&str], 0.7);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.dropped.len(), 1);
    }
}
