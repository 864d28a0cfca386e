//! Human preference annotation: vote aggregation, preference-pair
//! construction, reward-model labelling, and judge comparison.

mod judge;
mod pairs;
mod vote;

pub use judge::{
    judge_alignment, parse_judge_output, render_judge_prompt, score_with_judge, CriteriaScores, JudgeVerdict,
    MockJudge, Preference, CRITERIA, DEFAULT_JUDGE_TEMPLATE,
};
pub use pairs::{build_pairs, label_with_reward_model, LabelOutcome, PairPolicy, RoutedPair};
pub use vote::{majority_vote, AggregatedScore, FinalScore, Resolution, VoteLog};

use crate::corpus::PreferencePair;
use crate::error::Result;
use crate::model::{reward_score, PolicyHandle};

/// The reward model's preference on one pair.
pub fn reward_preference(reward_model: &dyn PolicyHandle, pair: &PreferencePair) -> Result<Preference> {
    let c = reward_score(reward_model, &pair.prompt, &pair.chosen)?;
    let r = reward_score(reward_model, &pair.prompt, &pair.rejected)?;
    Ok(match c.partial_cmp(&r) {
        Some(std::cmp::Ordering::Greater) => Preference::Chosen,
        Some(std::cmp::Ordering::Less) => Preference::Rejected,
        _ => Preference::Tie,
    })
}
