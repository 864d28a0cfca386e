//! ROUGE-L, accuracy and Macro-F1, and the evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{JsonlRecord, PersonaSet, Schema};
use crate::error::{Error, Result};

/// Lowercased alphanumeric runs. Whitespace and punctuation both separate
/// tokens and are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over token sequences.
pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-L F1 (β = 1) between two texts.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and Macro-F1. The class universe is every label that appears in
/// `gold` or `pred`; a class whose precision and recall are both zero
/// contributes F1 = 0.
pub fn classification_metrics<L: Ord>(gold: &[L], pred: &[L]) -> Result<ClassificationScores> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "gold has {} labels but pred has {}",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("no labels to score".into()));
    }
    let matches = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let classes: BTreeSet<&L> = gold.iter().chain(pred).collect();
    let mut f1_sum = 0.0;
    for c in &classes {
        let tp = gold.iter().zip(pred).filter(|(g, p)| g == c && p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| g != c && p == c).count() as f64;
        let fn_ = gold.iter().zip(pred).filter(|(g, p)| g == c && p != c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            f1_sum += 2.0 * tp / denom;
        }
    }
    Ok(ClassificationScores {
        accuracy: matches as f64 / gold.len() as f64,
        macro_f1: f1_sum / classes.len() as f64,
    })
}

/// One evaluation prompt with its reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalItem {
    pub id: String,
    pub prompt: String,
    pub gold_answer: String,
    #[serde(default)]
    pub key_facts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl JsonlRecord for EvalItem {
    const SCHEMA: Schema = Schema::Eval;

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("id", &self.id),
            ("prompt", &self.prompt),
            ("gold_answer", &self.gold_answer),
        ] {
            if v.trim().is_empty() {
                return Err(Error::invalid(&self.id, field, "must not be empty or whitespace-only"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grading {
    /// Correct iff every key fact occurs in the answer (normalized, on token
    /// boundaries). Items without key facts fall back to exact match.
    #[default]
    KeyFacts,
    /// Correct iff the normalized answer equals the normalized gold answer.
    ExactMatch,
}

pub const CORRECT: &str = "correct";
pub const INCORRECT: &str = "incorrect";

fn normalized(text: &str) -> String {
    tokenize(text).join(" ")
}

impl Grading {
    pub fn is_correct(self, item: &EvalItem, prediction: &str) -> bool {
        let pred = normalized(prediction);
        match self {
            Grading::KeyFacts if !item.key_facts.is_empty() => {
                let padded = format!(" {pred} ");
                item.key_facts
                    .iter()
                    .all(|f| padded.contains(&format!(" {} ", normalized(f))))
            }
            _ => pred == normalized(&item.gold_answer),
        }
    }
}

/// Gold label of an item and the label predicted for `prediction`.
///
/// The gold label is the item's `label` (or `"correct"`); a correct answer
/// predicts the gold label, a wrong one predicts `"incorrect"`.
pub fn grade_labels(grading: Grading, item: &EvalItem, prediction: &str) -> (String, String) {
    let gold = item.label.clone().unwrap_or_else(|| CORRECT.to_string());
    let pred = if grading.is_correct(item, prediction) {
        gold.clone()
    } else {
        INCORRECT.to_string()
    };
    (gold, pred)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult {
    pub item: EvalItem,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub rouge_l_by_persona: BTreeMap<String, f64>,
    pub alignment_rate: Option<f64>,
    pub run_manifest_id: String,
    pub items: usize,
}

/// Builds the report: every item is graded for accuracy and Macro-F1; items
/// bound to a persona also contribute their ROUGE-L against the gold answer
/// to that persona's mean.
pub fn assemble_report(
    results: &[ItemResult],
    grading: Grading,
    personas: &PersonaSet,
    alignment_rate: Option<f64>,
    run_manifest_id: &str,
) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no evaluation results".into()));
    }
    let mut gold = Vec::with_capacity(results.len());
    let mut pred = Vec::with_capacity(results.len());
    let mut rouge: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in results {
        let (g, p) = grade_labels(grading, &r.item, &r.prediction);
        gold.push(g);
        pred.push(p);
        if let Some(pid) = &r.item.persona_id {
            personas.resolve(pid)?;
            let e = rouge.entry(pid.clone()).or_default();
            e.0 += rouge_l(&r.prediction, &r.item.gold_answer);
            e.1 += 1;
        }
    }
    let scores = classification_metrics(&gold, &pred)?;
    if let Some(a) = alignment_rate {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidArgument(format!("alignment rate {a} outside [0,1]")));
        }
    }
    Ok(EvalReport {
        accuracy: scores.accuracy,
        macro_f1: scores.macro_f1,
        rouge_l_by_persona: rouge.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect(),
        alignment_rate,
        run_manifest_id: run_manifest_id.to_string(),
        items: results.len(),
    })
}

impl EvalReport {
    /// Plain-text rendering: a QA accuracy table followed by per-persona
    /// ROUGE-L.
    pub fn render_table(&self, model: &str, personas: &PersonaSet) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {:<24} | {:>8} | {:>8} |", "Model", "Accuracy", "Macro-F1");
        let _ = writeln!(s, "|{:-<26}|{:-<10}|{:-<10}|", "", "", "");
        let _ = writeln!(s, "| {:<24} | {:>8.4} | {:>8.4} |", model, self.accuracy, self.macro_f1);
        let _ = writeln!(s);
        let _ = writeln!(s, "| {:<24} | {:>8} |", "Model", "ROUGE-L");
        let _ = writeln!(s, "|{:-<26}|{:-<10}|", "", "");
        for (pid, score) in &self.rouge_l_by_persona {
            let name = personas.get(pid).map(|p| p.name.as_str()).unwrap_or(pid);
            let _ = writeln!(s, "| {:<24} | {:>8.4} |", format!("{model} {name}"), score);
        }
        if let Some(a) = self.alignment_rate {
            let _ = writeln!(s);
            let _ = writeln!(s, "judge alignment: {a:.4}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_lcs(a: &[&str], b: &[&str]) -> usize {
        // Every subsequence of `a`, tested against `b` greedily.
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&str> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            let mut it = b.iter();
            if sub.iter().all(|t| it.any(|u| u == t)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn rouge_spot_values() {
        assert_eq!(rouge_l("a b c d", "a c b d"), 0.75);
        assert_eq!(brute_force_lcs(&["a", "b", "c", "d"], &["a", "c", "b", "d"]), 3);
        assert_eq!(rouge_l("the same text", "the same text"), 1.0);
        assert_eq!(rouge_l("alpha beta", "gamma delta"), 0.0);
        assert_eq!(rouge_l("", "x"), 0.0);
        assert_eq!(rouge_l("", ""), 0.0);
    }

    #[test]
    fn tokenizer_drops_punctuation_and_case() {
        assert_eq!(tokenize("Hello, World!  it's"), vec!["hello", "world", "it", "s"]);
    }

    #[test]
    fn macro_f1_fixture() {
        let gold = ["A", "A", "B", "C"];
        let pred = ["A", "B", "B", "C"];
        let s = classification_metrics(&gold, &pred).unwrap();
        assert_eq!(s.accuracy, 0.75);
        // per-class F1: A = 2/3, B = 2/3, C = 1
        assert!((s.macro_f1 - (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-12);
        assert!((s.macro_f1 - 0.7778).abs() < 1e-4);
    }

    #[test]
    fn perfect_predictions() {
        let s = classification_metrics(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!((s.accuracy, s.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(classification_metrics(&[1, 2], &[1]).is_err());
        assert!(classification_metrics::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn key_fact_grading() {
        let item = EvalItem {
            id: "e".into(),
            prompt: "how many districts?".into(),
            gold_answer: "Four: Jianan, Binhe, Jinlan and Changtan.".into(),
            key_facts: vec!["four".into(), "binhe".into()],
            persona_id: None,
            label: None,
        };
        assert!(Grading::KeyFacts.is_correct(&item, "There are FOUR, incl. Binhe."));
        assert!(!Grading::KeyFacts.is_correct(&item, "There are fourteen, incl. Binhe."));
        assert!(!Grading::ExactMatch.is_correct(&item, "There are four, incl. Binhe."));
        assert!(Grading::ExactMatch.is_correct(&item, "four jianan binhe jinlan and changtan"));
    }
}
