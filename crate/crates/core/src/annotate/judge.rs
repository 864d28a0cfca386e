use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::augment::{persona_block, GeneratorBackend, RetryPolicy, SamplingParams};
use crate::corpus::{PersonaProfile, PreferencePair};
use crate::error::{Error, Result};
use crate::metrics::tokenize;

pub const DEFAULT_JUDGE_TEMPLATE: &str = "\
System: {persona}
Original message: {prompt}
Rate each candidate reply from 0 (poor) to 2 (strong) on: {criteria}.
Candidate A: {candidate_a}
Candidate B: {candidate_b}
Reply with exactly two lines:
A: empathy=<0-2> tone=<0-2> redundancy=<0-2> similarity=<0-2>
B: empathy=<0-2> tone=<0-2> redundancy=<0-2> similarity=<0-2>
";

pub const CRITERIA: [&str; 4] = ["empathy", "tone", "redundancy", "similarity"];

const CRITERIA_TEXT: &str = "empathy in the reply, appropriateness of tone, redundancy (2 = not redundant), similarity in meaning to the original message";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Chosen,
    Rejected,
    Tie,
}

/// Ordinal scores for one candidate. Higher is better on every criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CriteriaScores {
    pub empathy: u8,
    pub tone: u8,
    pub redundancy: u8,
    pub similarity: u8,
}

impl CriteriaScores {
    pub fn new(s: [u8; 4]) -> Self {
        CriteriaScores {
            empathy: s[0],
            tone: s[1],
            redundancy: s[2],
            similarity: s[3],
        }
    }

    /// Unweighted sum of the four criteria.
    pub fn total(&self) -> u32 {
        [self.empathy, self.tone, self.redundancy, self.similarity]
            .iter()
            .map(|&s| s as u32)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pair_id: String,
    pub preferred: Preference,
    pub chosen: CriteriaScores,
    pub rejected: CriteriaScores,
}

impl JudgeVerdict {
    pub fn from_scores(pair_id: &str, chosen: CriteriaScores, rejected: CriteriaScores) -> Self {
        let preferred = match chosen.total().cmp(&rejected.total()) {
            std::cmp::Ordering::Greater => Preference::Chosen,
            std::cmp::Ordering::Less => Preference::Rejected,
            std::cmp::Ordering::Equal => Preference::Tie,
        };
        JudgeVerdict {
            pair_id: pair_id.to_string(),
            preferred,
            chosen,
            rejected,
        }
    }
}

/// Fills `{persona}`, `{prompt}`, `{criteria}`, `{candidate_a}` and
/// `{candidate_b}`. Candidate A is the chosen side.
pub fn render_judge_prompt(template: &str, pair: &PreferencePair, persona: &PersonaProfile) -> String {
    template
        .replace("{persona}", &persona_block(persona))
        .replace("{prompt}", &pair.prompt)
        .replace("{criteria}", CRITERIA_TEXT)
        .replace("{candidate_a}", &pair.chosen)
        .replace("{candidate_b}", &pair.rejected)
}

fn parse_line(line: &str) -> Option<CriteriaScores> {
    let mut found: HashMap<&str, u8> = HashMap::new();
    for part in line.split(|c: char| c.is_whitespace() || c == ',') {
        if let Some((k, v)) = part.split_once('=') {
            if let Ok(n) = v.trim().parse::<u8>() {
                found.insert(k.trim(), n);
            }
        }
    }
    let get = |k: &str| found.get(k).copied();
    Some(CriteriaScores {
        empathy: get("empathy")?,
        tone: get("tone")?,
        redundancy: get("redundancy")?,
        similarity: get("similarity")?,
    })
}

/// Reads the `A:` and `B:` lines of a judge reply.
pub fn parse_judge_output(raw: &str) -> Result<(CriteriaScores, CriteriaScores)> {
    let mut a = None;
    let mut b = None;
    for line in raw.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("A:") {
            a = parse_line(rest);
        } else if let Some(rest) = line.strip_prefix("B:") {
            b = parse_line(rest);
        }
    }
    match (a, b) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::JudgeParse { raw: raw.to_string() }),
    }
}

/// Asks the judge to compare the two sides of `pair` in the voice of
/// `persona`. Unparseable replies are re-requested up to the retry budget;
/// the verdict is never guessed.
pub fn score_with_judge(
    pair: &PreferencePair,
    judge: &dyn GeneratorBackend,
    persona: &PersonaProfile,
    template: &str,
    retry: &RetryPolicy,
) -> Result<JudgeVerdict> {
    let prompt = render_judge_prompt(template, pair, persona);
    let mut last_raw = String::new();
    for attempt in 0..retry.max_attempts.max(1) {
        let params = SamplingParams {
            n: 1,
            temperature: 0.0,
            seed: attempt as u64,
        };
        let raw = retry
            .run(|| judge.complete(&prompt, &params))?
            .into_iter()
            .next()
            .unwrap_or_default();
        match parse_judge_output(&raw) {
            Ok((a, b)) => return Ok(JudgeVerdict::from_scores(&pair.id, a, b)),
            Err(_) => last_raw = raw,
        }
    }
    Err(Error::JudgeParse { raw: last_raw })
}

/// Share of comparable pairs on which the reward model and the judge agree.
/// Pairs where either side is a tie are left out of the denominator.
pub fn judge_alignment(rm_preferences: &[(String, Preference)], judge_verdicts: &[JudgeVerdict]) -> Result<f64> {
    let rm: HashMap<&str, Preference> = rm_preferences.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    let judge: HashMap<&str, Preference> = judge_verdicts
        .iter()
        .map(|v| (v.pair_id.as_str(), v.preferred))
        .collect();
    let rm_ids: BTreeSet<&str> = rm.keys().copied().collect();
    let judge_ids: BTreeSet<&str> = judge.keys().copied().collect();
    if rm_ids != judge_ids {
        return Err(Error::IdMismatch {
            only_rm: rm_ids.difference(&judge_ids).map(|s| s.to_string()).collect(),
            only_judge: judge_ids.difference(&rm_ids).map(|s| s.to_string()).collect(),
        });
    }
    let (mut agree, mut comparable) = (0usize, 0usize);
    for (id, p) in &rm {
        let j = judge[id];
        if j == Preference::Tie || *p == Preference::Tie {
            continue;
        }
        comparable += 1;
        if j == *p {
            agree += 1;
        }
    }
    if comparable == 0 {
        return Err(Error::InvalidArgument("no comparable (tie-free) pairs".into()));
    }
    Ok(agree as f64 / comparable as f64)
}

/// Scripted judge for tests and offline runs.
#[derive(Debug, Clone, PartialEq)]
pub enum MockJudge {
    /// Always rates A above B.
    PreferA,
    /// Emits the same criteria for every request.
    Fixed { a: [u8; 4], b: [u8; 4] },
    /// Scores candidates with small word lists: warm words raise empathy,
    /// curt words lower tone, repeated words lower redundancy, overlap with
    /// the original message raises similarity.
    Lexicon,
    /// Replies with text that does not parse.
    Garbage,
}

const WARM: &[&str] = &[
    "here",
    "with",
    "you",
    "together",
    "sorry",
    "understand",
    "care",
    "glad",
    "love",
    "always",
    "proud",
    "worry",
    "feel",
    "rest",
    "hug",
    "side",
    "listen",
    "safe",
];
const CURT: &[&str] = &[
    "whatever",
    "fine",
    "deal",
    "busy",
    "stop",
    "later",
    "no",
    "bother",
    "complaining",
    "so",
];

fn lexicon_scores(candidate: &str, original: &str) -> [u8; 4] {
    let toks = tokenize(candidate);
    let orig: BTreeSet<String> = tokenize(original).into_iter().collect();
    let warm = toks.iter().filter(|t| WARM.contains(&t.as_str())).count();
    let curt = toks.iter().filter(|t| CURT.contains(&t.as_str())).count();
    let distinct: BTreeSet<&String> = toks.iter().collect();
    let repeats = toks.len() - distinct.len();
    let overlap = distinct.iter().filter(|t| orig.contains(t.as_str())).count();
    [
        warm.min(2) as u8,
        2u8.saturating_sub(curt.min(2) as u8),
        if repeats > toks.len() / 3 {
            0
        } else if repeats > 2 {
            1
        } else {
            2
        },
        overlap.min(2) as u8,
    ]
}

fn fmt_scores(label: &str, s: [u8; 4]) -> String {
    format!(
        "{label}: empathy={} tone={} redundancy={} similarity={}",
        s[0], s[1], s[2], s[3]
    )
}

fn field<'a>(prompt: &'a str, prefix: &str) -> &'a str {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .map(str::trim)
        .unwrap_or("")
}

impl GeneratorBackend for MockJudge {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>> {
        let reply = match self {
            MockJudge::PreferA => format!("{}\n{}", fmt_scores("A", [2, 2, 2, 2]), fmt_scores("B", [0, 0, 0, 0])),
            MockJudge::Fixed { a, b } => format!("{}\n{}", fmt_scores("A", *a), fmt_scores("B", *b)),
            MockJudge::Lexicon => {
                let original = field(prompt, "Original message:");
                let a = lexicon_scores(field(prompt, "Candidate A:"), original);
                let b = lexicon_scores(field(prompt, "Candidate B:"), original);
                format!("{}\n{}", fmt_scores("A", a), fmt_scores("B", b))
            }
            MockJudge::Garbage => "I think both are lovely!".to_string(),
        };
        Ok(vec![reply; params.n.max(1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> PreferencePair {
        PreferencePair {
            id: "p1".into(),
            seed_id: "s".into(),
            prompt: "I failed my exam today.".into(),
            chosen: "I'm so sorry. I'm here with you, let's rest together.".into(),
            rejected: "Whatever, study harder.".into(),
            margin_scores: None,
        }
    }

    fn persona() -> PersonaProfile {
        PersonaProfile {
            id: "p".into(),
            name: "Rowan".into(),
            description: "Gentle".into(),
            style_notes: vec![],
        }
    }

    fn judge(j: MockJudge) -> Result<JudgeVerdict> {
        score_with_judge(
            &pair(),
            &j,
            &persona(),
            DEFAULT_JUDGE_TEMPLATE,
            &RetryPolicy::immediate(2),
        )
    }

    #[test]
    fn prefer_a_yields_chosen() {
        assert_eq!(judge(MockJudge::PreferA).unwrap().preferred, Preference::Chosen);
    }

    #[test]
    fn sum_aggregation() {
        let v = judge(MockJudge::Fixed {
            a: [2, 2, 0, 1],
            b: [1, 1, 1, 1],
        })
        .unwrap();
        assert_eq!((v.chosen.total(), v.rejected.total()), (5, 4));
        assert_eq!(v.preferred, Preference::Chosen);
        let v = judge(MockJudge::Fixed {
            a: [1, 1, 1, 1],
            b: [1, 1, 1, 1],
        })
        .unwrap();
        assert_eq!(v.preferred, Preference::Tie);
    }

    #[test]
    fn garbage_is_an_error_with_raw_output() {
        match judge(MockJudge::Garbage) {
            Err(Error::JudgeParse { raw }) => assert!(raw.contains("lovely")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lexicon_judge_prefers_warm_reply() {
        assert_eq!(judge(MockJudge::Lexicon).unwrap().preferred, Preference::Chosen);
    }

    #[test]
    fn prompt_contains_persona_and_candidates() {
        let p = render_judge_prompt(DEFAULT_JUDGE_TEMPLATE, &pair(), &persona());
        assert!(p.contains("You are Rowan"));
        assert!(p.contains(&pair().rejected));
    }

    #[test]
    fn alignment_counts_and_mismatch() {
        let rm = vec![
            ("a".to_string(), Preference::Chosen),
            ("b".to_string(), Preference::Chosen),
        ];
        let v = |id: &str, p| JudgeVerdict {
            pair_id: id.into(),
            preferred: p,
            chosen: Default::default(),
            rejected: Default::default(),
        };
        assert_eq!(
            judge_alignment(&rm, &[v("a", Preference::Chosen), v("b", Preference::Rejected)]).unwrap(),
            0.5
        );
        assert_eq!(
            judge_alignment(&rm, &[v("a", Preference::Chosen), v("b", Preference::Tie)]).unwrap(),
            1.0
        );
        match judge_alignment(&rm, &[v("a", Preference::Chosen), v("c", Preference::Chosen)]) {
            Err(Error::IdMismatch { only_rm, only_judge }) => {
                assert_eq!(only_rm, vec!["b"]);
                assert_eq!(only_judge, vec!["c"]);
            }
            other => panic!("{other:?}"),
        }
    }
}
