use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::vote::{AggregatedScore, FinalScore};
use crate::corpus::{PreferencePair, SeedGroup};
use crate::error::{Error, Result};
use crate::model::{reward_score, PolicyHandle};

/// Which score differences become preference pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// Every strict difference: 2≻1, 2≻0 and 1≻0.
    #[default]
    AllStrict,
    /// Only the extremes: 2≻0 for human scores, best≻worst for model scores.
    ExtremesOnly,
}

fn pair_id(chosen: &str, rejected: &str) -> String {
    format!("{chosen}>{rejected}")
}

/// Emits one pair per ordered `(a, b)` of variants in `group` with
/// `score(a) > score(b)`, walking `a` then `b` in variant order.
pub fn build_pairs(
    group: &SeedGroup,
    scores: &HashMap<String, AggregatedScore>,
    policy: PairPolicy,
) -> Result<Vec<PreferencePair>> {
    let resolved: Vec<u8> = group
        .variants
        .iter()
        .map(|v| {
            let agg = scores
                .get(&v.id)
                .ok_or_else(|| Error::invalid(&v.id, "score", "variant has no aggregated score"))?;
            match agg.final_score {
                FinalScore::Score(s) => Ok(s),
                FinalScore::Split => Err(Error::UnresolvedVote(v.id.clone())),
            }
        })
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for (a, &sa) in group.variants.iter().zip(&resolved) {
        for (b, &sb) in group.variants.iter().zip(&resolved) {
            let take = match policy {
                PairPolicy::AllStrict => sa > sb,
                PairPolicy::ExtremesOnly => sa == 2 && sb == 0,
            };
            if take && a.answer != b.answer {
                pairs.push(PreferencePair {
                    id: pair_id(&a.id, &b.id),
                    seed_id: group.seed_id.clone(),
                    prompt: group.prompt.clone(),
                    chosen: a.answer.clone(),
                    rejected: b.answer.clone(),
                    margin_scores: Some([sa as f64, sb as f64]),
                });
            }
        }
    }
    Ok(pairs)
}

/// A machine-generated pair whose reward gap was too small to trust.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedPair {
    pub pair: PreferencePair,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelOutcome {
    pub pairs: Vec<PreferencePair>,
    pub routed_to_humans: Vec<RoutedPair>,
}

/// Labels unannotated variants with a reward model. Variant pairs whose
/// reward gap is at least `margin` become preference pairs; smaller, nonzero
/// gaps are routed to human annotators instead.
pub fn label_with_reward_model(
    groups: &[SeedGroup],
    reward_model: &dyn PolicyHandle,
    margin: f64,
    policy: PairPolicy,
) -> Result<LabelOutcome> {
    let mut out = LabelOutcome::default();
    for g in groups {
        let rewards: Vec<f64> = g
            .variants
            .iter()
            .map(|v| reward_score(reward_model, &g.prompt, &v.answer))
            .collect::<Result<_>>()?;
        let mut candidates = Vec::new();
        for (i, a) in g.variants.iter().enumerate() {
            for (j, b) in g.variants.iter().enumerate() {
                if rewards[i] > rewards[j] && a.answer != b.answer {
                    candidates.push((i, j));
                }
            }
        }
        if policy == PairPolicy::ExtremesOnly {
            let best = candidates
                .iter()
                .max_by(|x, y| (rewards[x.0] - rewards[x.1]).total_cmp(&(rewards[y.0] - rewards[y.1])));
            candidates = best.into_iter().copied().collect();
        }
        for (i, j) in candidates {
            let (a, b) = (&g.variants[i], &g.variants[j]);
            let pair = PreferencePair {
                id: pair_id(&a.id, &b.id),
                seed_id: g.seed_id.clone(),
                prompt: g.prompt.clone(),
                chosen: a.answer.clone(),
                rejected: b.answer.clone(),
                margin_scores: Some([rewards[i], rewards[j]]),
            };
            let gap = rewards[i] - rewards[j];
            if gap >= margin {
                out.pairs.push(pair);
            } else {
                out.routed_to_humans.push(RoutedPair { pair, gap });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Origin, Variant};

    fn group(scores: &[(&str, u8)]) -> (SeedGroup, HashMap<String, AggregatedScore>) {
        let g = SeedGroup {
            seed_id: "s".into(),
            prompt: "How was your day?".into(),
            variants: scores
                .iter()
                .map(|(id, _)| Variant {
                    id: id.to_string(),
                    answer: format!("answer {id}"),
                    origin: Origin::SelfInstruct,
                })
                .collect(),
        };
        let m = scores
            .iter()
            .map(|(id, s)| {
                (
                    id.to_string(),
                    AggregatedScore::from_votes(id, &[*s, *s, *s], 3).unwrap(),
                )
            })
            .collect();
        (g, m)
    }

    #[test]
    fn two_variants_one_pair() {
        let (g, m) = group(&[("v1", 2), ("v2", 0)]);
        let p = build_pairs(&g, &m, PairPolicy::AllStrict).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].chosen, "answer v1");
    }

    #[test]
    fn four_variant_enumeration_order() {
        let (g, m) = group(&[("v1", 2), ("v2", 0), ("v3", 2), ("v4", 1)]);
        let ids: Vec<String> = build_pairs(&g, &m, PairPolicy::AllStrict)
            .unwrap()
            .into_iter()
            .map(|p| p.id)
            .collect();
        assert_eq!(ids, vec!["v1>v2", "v1>v4", "v3>v2", "v3>v4", "v4>v2"]);
        let extremes = build_pairs(&g, &m, PairPolicy::ExtremesOnly).unwrap();
        assert_eq!(extremes.len(), 2);
    }

    #[test]
    fn equal_scores_give_no_pairs() {
        let (g, m) = group(&[("v1", 1), ("v2", 1), ("v3", 1)]);
        assert!(build_pairs(&g, &m, PairPolicy::AllStrict).unwrap().is_empty());
    }

    #[test]
    fn split_variant_is_an_error() {
        let (g, mut m) = group(&[("v1", 2), ("v2", 0)]);
        m.insert("v2".into(), AggregatedScore::from_votes("v2", &[0, 1, 2], 3).unwrap());
        assert!(matches!(build_pairs(&g, &m, PairPolicy::AllStrict), Err(Error::UnresolvedVote(id)) if id == "v2"));
    }
}
