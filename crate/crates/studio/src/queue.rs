//! Annotation queue: leases over an append-only vote log.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::time::Duration;

use persona_align::annotate::{majority_vote, FinalScore, VoteLog};
use persona_align::corpus::AnnotationRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub prompt: String,
    pub candidate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<String>,
    pub persona_summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Assigned,
    Resolved,
    Split,
}

/// An item handed to one annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    #[serde(flatten)]
    pub item: AnnotationItem,
    pub status: TaskStatus,
    /// Seconds until the assignment lapses.
    pub lease_secs: u64,
}

/// Aggregation state of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStatus {
    pub item_id: String,
    pub status: TaskStatus,
    pub votes: Vec<u8>,
    pub final_score: Option<FinalScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoteError {
    UnknownItem(String),
    OutOfRange(i64),
    Duplicate { item_id: String, annotator_id: String },
    AlreadyResolved(String),
    Storage(String),
}

impl std::fmt::Display for VoteError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VoteError::UnknownItem(id) => write!(f, "unknown item {id}"),
            VoteError::OutOfRange(s) => write!(f, "score {s} is not one of 0, 1, 2"),
            VoteError::Duplicate { item_id, annotator_id } => {
                write!(f, "{annotator_id} already scored item {item_id}")
            }
            VoteError::AlreadyResolved(id) => write!(f, "item {id} is already resolved"),
            VoteError::Storage(m) => write!(f, "vote log write failed: {m}"),
        }
    }
}

struct Lease {
    annotator_id: String,
    expires: Duration,
}

pub(crate) struct Queue {
    items: Vec<AnnotationItem>,
    position: HashMap<String, usize>,
    log: VoteLog,
    leases: HashMap<String, Vec<Lease>>,
    quorum: usize,
    lease: Duration,
    sink: Option<File>,
}

impl Queue {
    pub fn new(items: Vec<AnnotationItem>, log: VoteLog, quorum: usize, lease: Duration, sink: Option<File>) -> Self {
        let position = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.clone(), i))
            .collect();
        Queue {
            items,
            position,
            log,
            leases: HashMap::new(),
            quorum: quorum.max(1),
            lease,
            sink,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn vote_count(&self) -> usize {
        self.log.records().len()
    }

    fn final_score(&self, item_id: &str) -> Option<FinalScore> {
        let votes = self.log.votes(item_id);
        if votes.len() < self.quorum {
            return None;
        }
        majority_vote(votes).ok()
    }

    /// Votes still wanted: up to the quorum, then one at a time while split.
    fn needed(&self, item_id: &str) -> usize {
        let have = self.log.votes(item_id).len();
        match self.final_score(item_id) {
            None => self.quorum - have,
            Some(FinalScore::Split) => 1,
            Some(FinalScore::Score(_)) => 0,
        }
    }

    fn expire(&mut self, now: Duration) {
        for leases in self.leases.values_mut() {
            leases.retain(|l| l.expires > now);
        }
    }

    fn active_leases(&self, item_id: &str) -> usize {
        self.leases.get(item_id).map_or(0, Vec::len)
    }

    pub fn status(&self, item_id: &str) -> Option<ItemStatus> {
        self.position.get(item_id)?;
        let final_score = self.final_score(item_id);
        let status = match final_score {
            Some(FinalScore::Score(_)) => TaskStatus::Resolved,
            _ if self.active_leases(item_id) > 0 => TaskStatus::Assigned,
            Some(FinalScore::Split) => TaskStatus::Split,
            None => TaskStatus::Open,
        };
        Some(ItemStatus {
            item_id: item_id.to_string(),
            status,
            votes: self.log.votes(item_id).to_vec(),
            final_score,
        })
    }

    pub fn statuses(&mut self, now: Duration) -> Vec<ItemStatus> {
        self.expire(now);
        self.items.iter().filter_map(|it| self.status(&it.item_id)).collect()
    }

    /// Next item for `annotator_id`: one they hold a live lease on, else the
    /// first item still needing votes that they have not scored, preferring
    /// items not already covered by other leases.
    pub fn next(&mut self, annotator_id: &str, now: Duration) -> Option<AnnotationTask> {
        self.expire(now);
        let eligible: Vec<usize> = (0..self.items.len())
            .filter(|&i| {
                let id = &self.items[i].item_id;
                self.needed(id) > 0 && !self.log.has_voted(id, annotator_id)
            })
            .collect();
        let holds = |q: &Self, i: usize| {
            q.leases
                .get(&q.items[i].item_id)
                .is_some_and(|ls| ls.iter().any(|l| l.annotator_id == annotator_id))
        };
        let pick = eligible
            .iter()
            .copied()
            .find(|&i| holds(self, i))
            .or_else(|| {
                eligible
                    .iter()
                    .copied()
                    .find(|&i| self.active_leases(&self.items[i].item_id) < self.needed(&self.items[i].item_id))
            })
            .or_else(|| eligible.first().copied())?;

        let item = self.items[pick].clone();
        let expires = now + self.lease;
        let leases = self.leases.entry(item.item_id.clone()).or_default();
        match leases.iter_mut().find(|l| l.annotator_id == annotator_id) {
            Some(l) => l.expires = expires,
            None => leases.push(Lease {
                annotator_id: annotator_id.to_string(),
                expires,
            }),
        }
        Some(AnnotationTask {
            item,
            status: TaskStatus::Assigned,
            lease_secs: self.lease.as_secs(),
        })
    }

    pub fn score(
        &mut self,
        item_id: &str,
        annotator_id: &str,
        score: i64,
        now: Duration,
    ) -> Result<ItemStatus, VoteError> {
        self.expire(now);
        if !self.position.contains_key(item_id) {
            return Err(VoteError::UnknownItem(item_id.to_string()));
        }
        let score = u8::try_from(score)
            .ok()
            .filter(|s| *s <= 2)
            .ok_or(VoteError::OutOfRange(score))?;
        if self.log.has_voted(item_id, annotator_id) {
            return Err(VoteError::Duplicate {
                item_id: item_id.to_string(),
                annotator_id: annotator_id.to_string(),
            });
        }
        if self.needed(item_id) == 0 {
            return Err(VoteError::AlreadyResolved(item_id.to_string()));
        }
        let record = AnnotationRecord {
            item_id: item_id.to_string(),
            annotator_id: annotator_id.to_string(),
            score,
        };
        // Durable first: a vote that is not in the file never counts.
        if let Some(f) = self.sink.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| VoteError::Storage(e.to_string()))?;
        }
        self.log.append(record).map_err(|e| VoteError::Storage(e.to_string()))?;
        if let Some(ls) = self.leases.get_mut(item_id) {
            ls.retain(|l| l.annotator_id != annotator_id);
        }
        Ok(self.status(item_id).expect("item exists"))
    }
}
