use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::AnnotationRecord;
use crate::error::{Error, Result};

/// Outcome of a vote: a score in {0, 1, 2}, or a split with no strict
/// plurality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FinalScore {
    Score(u8),
    Split,
}

impl FinalScore {
    pub fn score(self) -> Option<u8> {
        match self {
            FinalScore::Score(s) => Some(s),
            FinalScore::Split => None,
        }
    }
}

impl fmt::Display for FinalScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinalScore::Score(s) => write!(f, "{s}"),
            FinalScore::Split => f.write_str("split"),
        }
    }
}

impl Serialize for FinalScore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FinalScore::Score(v) => s.serialize_u8(*v),
            FinalScore::Split => s.serialize_str("split"),
        }
    }
}

impl<'de> Deserialize<'de> for FinalScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u8),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n <= 2 => Ok(FinalScore::Score(n)),
            Raw::S(s) if s == "split" => Ok(FinalScore::Split),
            _ => Err(serde::de::Error::custom("expected 0, 1, 2 or \"split\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Settled by the first quorum of votes.
    Majority,
    /// Split at quorum: needs, or received, further votes.
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedScore {
    pub item_id: String,
    pub final_score: FinalScore,
    /// Votes in ascending order.
    pub votes: Vec<u8>,
    pub resolution: Resolution,
}

fn check_votes(votes: &[u8]) -> Result<()> {
    if votes.is_empty() {
        return Err(Error::InvalidArgument("no votes to aggregate".into()));
    }
    if let Some(v) = votes.iter().find(|&&v| v > 2) {
        return Err(Error::InvalidArgument(format!("vote {v} is not in {{0,1,2}}")));
    }
    Ok(())
}

/// The score with a strict plurality, or `Split` when the top count is tied.
pub fn majority_vote(votes: &[u8]) -> Result<FinalScore> {
    check_votes(votes)?;
    let mut counts = [0usize; 3];
    for &v in votes {
        counts[v as usize] += 1;
    }
    let top = *counts.iter().max().expect("three counts");
    let mut leaders = (0..3u8).filter(|&s| counts[s as usize] == top);
    let first = leaders.next().expect("some score holds the maximum");
    Ok(if leaders.next().is_some() {
        FinalScore::Split
    } else {
        FinalScore::Score(first)
    })
}

impl AggregatedScore {
    /// Aggregates the votes of one item. `quorum` is the number of votes the
    /// first round collects; anything beyond it came from re-annotation.
    pub fn from_votes(item_id: &str, votes: &[u8], quorum: usize) -> Result<Self> {
        let final_score = majority_vote(votes)?;
        let mut sorted = votes.to_vec();
        sorted.sort_unstable();
        let resolution = if final_score == FinalScore::Split || votes.len() > quorum {
            Resolution::Escalated
        } else {
            Resolution::Majority
        };
        Ok(AggregatedScore {
            item_id: item_id.to_string(),
            final_score,
            votes: sorted,
            resolution,
        })
    }
}

/// Append-only log of annotation votes. Aggregated state is a pure fold over
/// the log, so replaying the records rebuilds it exactly.
#[derive(Debug, Clone, Default)]
pub struct VoteLog {
    records: Vec<AnnotationRecord>,
    seen: HashSet<(String, String)>,
    by_item: BTreeMap<String, Vec<u8>>,
}

impl VoteLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn replay(records: impl IntoIterator<Item = AnnotationRecord>) -> Result<Self> {
        let mut log = VoteLog::new();
        for r in records {
            log.append(r)?;
        }
        Ok(log)
    }

    /// Rejects out-of-range scores and a second vote by the same annotator
    /// on the same item.
    pub fn append(&mut self, record: AnnotationRecord) -> Result<()> {
        if record.score > 2 {
            return Err(Error::invalid(
                &record.item_id,
                "score",
                format!("{} is not in {{0,1,2}}", record.score),
            ));
        }
        let key = (record.item_id.clone(), record.annotator_id.clone());
        if !self.seen.insert(key) {
            return Err(Error::invalid(
                &record.item_id,
                "annotator_id",
                format!("{} already scored this item", record.annotator_id),
            ));
        }
        self.by_item
            .entry(record.item_id.clone())
            .or_default()
            .push(record.score);
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn votes(&self, item_id: &str) -> &[u8] {
        self.by_item.get(item_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_voted(&self, item_id: &str, annotator_id: &str) -> bool {
        self.seen.contains(&(item_id.to_string(), annotator_id.to_string()))
    }

    /// `None` until the item has `quorum` votes.
    pub fn aggregate(&self, item_id: &str, quorum: usize) -> Option<AggregatedScore> {
        let votes = self.votes(item_id);
        if votes.len() < quorum.max(1) {
            return None;
        }
        AggregatedScore::from_votes(item_id, votes, quorum).ok()
    }

    /// Aggregates for every item with at least `quorum` votes.
    pub fn aggregate_all(&self, quorum: usize) -> Vec<AggregatedScore> {
        self.by_item
            .keys()
            .filter_map(|id| self.aggregate(id, quorum))
            .collect()
    }
}
