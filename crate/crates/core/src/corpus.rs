//! Dataset records, JSONL loading, and seed-cohesive train/test splitting.
//!
//! Every file in the pipeline is JSON Lines: one object per line, field names
//! fixed by the record type. Loading validates each record as it is read and
//! keeps the 1-based line number alongside it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalItem;

/// A character definition used to condition prompts and group evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaProfile {
    pub id: String,
    pub name: String,
    pub description: String,
    pub style_notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GameQa,
    Casual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    BackTranslation,
    SelfInstruct,
}

/// One prompt/answer record; the unit of supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub id: String,
    pub prompt: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<String>,
    pub task: Task,
    pub origin: Origin,
    /// Lineage of augmented records: the id of the seed they derive from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_id: Option<String>,
}

impl QaPair {
    /// The seed this record belongs to. Seeds are their own group.
    pub fn group_id(&self) -> &str {
        self.seed_id.as_deref().unwrap_or(&self.id)
    }
}

/// `(prompt, chosen, rejected)` with the seed it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub id: String,
    pub seed_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    /// Scores of the chosen and rejected side, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_scores: Option<[f64; 2]>,
}

/// One annotator's 0/1/2 empathy score for one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub annotator_id: String,
    pub score: u8,
}

/// A seed prompt with all answer variants produced for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGroup {
    pub seed_id: String,
    pub prompt: String,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub id: String,
    pub answer: String,
    pub origin: Origin,
}

impl SeedGroup {
    /// Groups answer variants by seed. Every record of a group must share the
    /// seed prompt; variant ids must be unique within a group.
    pub fn from_records(records: &[QaPair]) -> Result<Vec<SeedGroup>> {
        let mut groups: BTreeMap<String, SeedGroup> = BTreeMap::new();
        for r in records {
            let group = groups.entry(r.group_id().to_string()).or_insert_with(|| SeedGroup {
                seed_id: r.group_id().to_string(),
                prompt: r.prompt.clone(),
                variants: Vec::new(),
            });
            if group.prompt != r.prompt {
                return Err(Error::invalid(
                    &r.id,
                    "prompt",
                    format!("differs from the prompt of seed group {}", group.seed_id),
                ));
            }
            if group.variants.iter().any(|v| v.id == r.id) {
                return Err(Error::invalid(&r.id, "id", "duplicated within seed group"));
            }
            group.variants.push(Variant {
                id: r.id.clone(),
                answer: r.answer.clone(),
                origin: r.origin,
            });
        }
        Ok(groups.into_values().collect())
    }
}

/// Ids of the train and test records of one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Qa,
    Persona,
    Pair,
    Annotation,
    Eval,
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa" => Ok(Schema::Qa),
            "persona" => Ok(Schema::Persona),
            "pair" => Ok(Schema::Pair),
            "annotation" => Ok(Schema::Annotation),
            "eval" => Ok(Schema::Eval),
            other => Err(Error::UnknownSchema(other.to_string())),
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Qa => "qa",
            Schema::Persona => "persona",
            Schema::Pair => "pair",
            Schema::Annotation => "annotation",
            Schema::Eval => "eval",
        })
    }
}

/// A record type that can live in a JSONL file.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    const SCHEMA: Schema;

    fn record_id(&self) -> String;

    /// Per-record invariants.
    fn validate(&self) -> Result<()>;

    /// Key that must be unique across a file.
    fn unique_key(&self) -> String {
        self.record_id()
    }
}

fn non_blank(record: &str, field: &str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::invalid(record, field, "must not be empty or whitespace-only"))
    } else {
        Ok(())
    }
}

impl JsonlRecord for PersonaProfile {
    const SCHEMA: Schema = Schema::Persona;

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_blank(&self.id, "id", &self.id)?;
        non_blank(&self.id, "name", &self.name)?;
        non_blank(&self.id, "description", &self.description)
    }
}

impl JsonlRecord for QaPair {
    const SCHEMA: Schema = Schema::Qa;

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_blank(&self.id, "id", &self.id)?;
        non_blank(&self.id, "prompt", &self.prompt)?;
        non_blank(&self.id, "answer", &self.answer)?;
        if let Some(p) = &self.persona_id {
            non_blank(&self.id, "persona_id", p)?;
        }
        Ok(())
    }
}

impl JsonlRecord for PreferencePair {
    const SCHEMA: Schema = Schema::Pair;

    fn record_id(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<()> {
        non_blank(&self.id, "id", &self.id)?;
        non_blank(&self.id, "seed_id", &self.seed_id)?;
        non_blank(&self.id, "prompt", &self.prompt)?;
        non_blank(&self.id, "chosen", &self.chosen)?;
        non_blank(&self.id, "rejected", &self.rejected)?;
        if self.chosen == self.rejected {
            return Err(Error::invalid(&self.id, "rejected", "is identical to chosen"));
        }
        if let Some([c, r]) = self.margin_scores {
            if c.is_nan() || r.is_nan() || c <= r {
                return Err(Error::invalid(
                    &self.id,
                    "margin_scores",
                    format!("chosen score {c} must exceed rejected score {r}"),
                ));
            }
        }
        Ok(())
    }
}

impl JsonlRecord for AnnotationRecord {
    const SCHEMA: Schema = Schema::Annotation;

    fn record_id(&self) -> String {
        format!("{}/{}", self.item_id, self.annotator_id)
    }

    fn validate(&self) -> Result<()> {
        let id = self.record_id();
        non_blank(&id, "item_id", &self.item_id)?;
        non_blank(&id, "annotator_id", &self.annotator_id)?;
        if self.score > 2 {
            return Err(Error::invalid(
                &id,
                "score",
                format!("{} is not in {{0,1,2}}", self.score),
            ));
        }
        Ok(())
    }
}

/// A record together with the line it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub line: usize,
    pub record: T,
}

/// Records of any schema, as returned by [`load_jsonl`].
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Qa(Loaded<QaPair>),
    Persona(Loaded<PersonaProfile>),
    Pair(Loaded<PreferencePair>),
    Annotation(Loaded<AnnotationRecord>),
    Eval(Loaded<EvalItem>),
}

pub fn load_jsonl(path: impl AsRef<Path>, schema: Schema) -> Result<Vec<Record>> {
    let path = path.as_ref();
    Ok(match schema {
        Schema::Qa => load_records::<QaPair>(path)?.into_iter().map(Record::Qa).collect(),
        Schema::Persona => load_records::<PersonaProfile>(path)?
            .into_iter()
            .map(Record::Persona)
            .collect(),
        Schema::Pair => load_records::<PreferencePair>(path)?
            .into_iter()
            .map(Record::Pair)
            .collect(),
        Schema::Annotation => load_records::<AnnotationRecord>(path)?
            .into_iter()
            .map(Record::Annotation)
            .collect(),
        Schema::Eval => load_records::<EvalItem>(path)?.into_iter().map(Record::Eval).collect(),
    })
}

pub fn load_records<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<Loaded<T>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

/// Loads records and drops line provenance.
pub fn read_records<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    Ok(load_records(path)?.into_iter().map(|l| l.record).collect())
}

pub fn parse_records<T: JsonlRecord>(text: &str) -> Result<Vec<Loaded<T>>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: strip_position(&e.to_string()),
        })?;
        record.validate().map_err(|e| e.at_line(line))?;
        if !seen.insert(record.unique_key()) {
            return Err(Error::Invalid {
                line: Some(line),
                record: record.record_id(),
                field: "id".into(),
                message: format!("duplicates an earlier {} record", T::SCHEMA),
            });
        }
        out.push(Loaded { line, record });
    }
    Ok(out)
}

// serde_json appends "at line 1 column N"; within a JSONL file only our own
// line number is meaningful.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let text = to_jsonl(records)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Personas indexed by id.
#[derive(Debug, Clone, Default)]
pub struct PersonaSet {
    personas: Vec<PersonaProfile>,
    index: HashMap<String, usize>,
}

impl PersonaSet {
    pub fn new(personas: Vec<PersonaProfile>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, p) in personas.iter().enumerate() {
            p.validate()?;
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::invalid(&p.id, "id", "is not unique in the persona set"));
            }
        }
        Ok(PersonaSet { personas, index })
    }

    pub fn get(&self, id: &str) -> Option<&PersonaProfile> {
        self.index.get(id).map(|&i| &self.personas[i])
    }

    pub fn resolve(&self, id: &str) -> Result<&PersonaProfile> {
        self.get(id).ok_or_else(|| Error::UnknownPersona(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PersonaProfile> {
        self.personas.iter()
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    /// Checks that every persona reference in `records` resolves.
    pub fn check_refs(&self, records: &[Loaded<QaPair>]) -> Result<()> {
        for l in records {
            if let Some(pid) = &l.record.persona_id {
                if self.get(pid).is_none() {
                    return Err(Error::Invalid {
                        line: Some(l.line),
                        record: l.record.id.clone(),
                        field: "persona_id".into(),
                        message: format!("`{pid}` does not resolve in the persona set"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Anything that can be split: an id plus the seed group it must stay with.
pub trait Splittable {
    fn split_id(&self) -> &str;
    fn split_group(&self) -> &str;
}

impl Splittable for QaPair {
    fn split_id(&self) -> &str {
        &self.id
    }
    fn split_group(&self) -> &str {
        self.group_id()
    }
}

impl Splittable for PreferencePair {
    fn split_id(&self) -> &str {
        &self.id
    }
    fn split_group(&self) -> &str {
        &self.seed_id
    }
}

/// Splits `records` into train and test so that exactly `test_size` ids land
/// in test and no seed group straddles the two sides.
///
/// Groups are shuffled with `seed`, then a subset-sum over group sizes picks
/// which groups make up the test side. Fails when no combination of whole
/// groups sums to `test_size`.
pub fn split_dataset<R: Splittable>(records: &[R], test_size: usize, seed: u64) -> Result<DatasetSplit> {
    if test_size > records.len() {
        return Err(Error::InvalidArgument(format!(
            "test_size {test_size} exceeds record count {}",
            records.len()
        )));
    }

    // Groups in first-appearance order, members in input order.
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in records {
        let g = r.split_group();
        members
            .entry(g)
            .or_insert_with(|| {
                order.push(g);
                Vec::new()
            })
            .push(r.split_id());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let sizes: Vec<usize> = order.iter().map(|g| members[g].len()).collect();
    let in_test = pick_exact_subset(&sizes, test_size).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no combination of whole seed groups has exactly {test_size} records"
        ))
    })?;

    let test_groups: HashSet<&str> = order
        .iter()
        .zip(&in_test)
        .filter(|(_, &t)| t)
        .map(|(g, _)| *g)
        .collect();

    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for r in records {
        let side = if test_groups.contains(r.split_group()) {
            &mut split.test
        } else {
            &mut split.train
        };
        side.push(r.split_id().to_string());
    }
    Ok(split)
}

// reach[i][s]: some subset of the first i groups sums to s. Reconstruction
// walks backwards and takes group i only when s is unreachable without it.
fn pick_exact_subset(sizes: &[usize], target: usize) -> Option<Vec<bool>> {
    let n = sizes.len();
    let width = target + 1;
    let mut reach = vec![false; (n + 1) * width];
    reach[0] = true;
    for i in 1..=n {
        let sz = sizes[i - 1];
        for s in 0..=target {
            let without = reach[(i - 1) * width + s];
            let with = s >= sz && reach[(i - 1) * width + s - sz];
            reach[i * width + s] = without || with;
        }
    }
    if !reach[n * width + target] {
        return None;
    }
    let mut take = vec![false; n];
    let mut s = target;
    for i in (1..=n).rev() {
        if !reach[(i - 1) * width + s] {
            take[i - 1] = true;
            s -= sizes[i - 1];
        }
    }
    debug_assert_eq!(s, 0);
    Some(take)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa(id: &str, seed: Option<&str>) -> QaPair {
        QaPair {
            id: id.into(),
            prompt: format!("prompt {}", seed.unwrap_or(id)),
            answer: "answer".into(),
            persona_id: None,
            task: Task::Casual,
            origin: if seed.is_some() {
                Origin::SelfInstruct
            } else {
                Origin::Seed
            },
            seed_id: seed.map(str::to_string),
        }
    }

    #[test]
    fn loads_two_valid_lines() {
        let text = r#"{"id":"q1","prompt":"hi","answer":"hello","task":"casual","origin":"seed"}
{"id":"q2","prompt":"where?","answer":"here","persona_id":"p1","task":"game_qa","origin":"seed"}
"#;
        let recs = parse_records::<QaPair>(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].line, 2);
        assert_eq!(recs[1].record.persona_id.as_deref(), Some("p1"));
    }

    #[test]
    fn missing_answer_names_field_and_line() {
        let text = "{\"id\":\"a\",\"prompt\":\"x\",\"answer\":\"y\",\"task\":\"casual\",\"origin\":\"seed\"}\n{\"prompt\":\"hi\"}\n";
        let err = parse_records::<QaPair>(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("line 2:"), "{msg}");
        assert!(msg.contains("missing field"), "{msg}");
    }

    #[test]
    fn missing_answer_is_reported() {
        let text = r#"{"id":"a","prompt":"hi","task":"casual","origin":"seed"}"#;
        let msg = parse_records::<QaPair>(text).unwrap_err().to_string();
        assert!(msg.contains("missing field `answer`"), "{msg}");
    }

    #[test]
    fn whitespace_only_answer_is_rejected() {
        let text = r#"{"id":"a","prompt":"hi","answer":"   ","task":"casual","origin":"seed"}"#;
        match parse_records::<QaPair>(text).unwrap_err() {
            Error::Invalid {
                line, record, field, ..
            } => {
                assert_eq!(line, Some(1));
                assert_eq!(record, "a");
                assert_eq!(field, "answer");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_json_names_line() {
        let text =
            "{\"id\":\"a\",\"prompt\":\"x\",\"answer\":\"y\",\"task\":\"casual\",\"origin\":\"seed\"}\n{not json\n";
        assert!(matches!(
            parse_records::<QaPair>(text),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_schema_is_an_error() {
        assert!(matches!("vectors".parse::<Schema>(), Err(Error::UnknownSchema(_))));
    }

    #[test]
    fn score_out_of_range_rejected() {
        let text = r#"{"item_id":"v1","annotator_id":"a","score":3}"#;
        assert!(parse_records::<AnnotationRecord>(text).is_err());
    }

    #[test]
    fn duplicate_annotation_rejected() {
        let text = "{\"item_id\":\"v1\",\"annotator_id\":\"a\",\"score\":1}\n{\"item_id\":\"v1\",\"annotator_id\":\"a\",\"score\":2}\n";
        let err = parse_records::<AnnotationRecord>(text).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }

    #[test]
    fn pair_with_inverted_scores_rejected() {
        let text = r#"{"id":"p","seed_id":"s","prompt":"x","chosen":"a","rejected":"b","margin_scores":[0.0,2.0]}"#;
        assert!(parse_records::<PreferencePair>(text).is_err());
    }

    #[test]
    fn persona_refs_must_resolve() {
        let personas = PersonaSet::new(vec![PersonaProfile {
            id: "p1".into(),
            name: "P".into(),
            description: "calm".into(),
            style_notes: vec![],
        }])
        .unwrap();
        let text = r#"{"id":"a","prompt":"hi","answer":"yo","persona_id":"p9","task":"casual","origin":"seed"}"#;
        let recs = parse_records::<QaPair>(text).unwrap();
        assert!(personas.check_refs(&recs).is_err());
    }

    #[test]
    fn split_zero_keeps_everything_in_train() {
        let recs: Vec<_> = (0..5).map(|i| qa(&format!("q{i}"), None)).collect();
        let s = split_dataset(&recs, 0, 7).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.len(), 5);
    }

    #[test]
    fn split_too_large_errors() {
        let recs: Vec<_> = (0..3).map(|i| qa(&format!("q{i}"), None)).collect();
        assert!(split_dataset(&recs, 4, 0).is_err());
    }

    #[test]
    fn split_keeps_groups_together() {
        let mut recs = Vec::new();
        for g in 0..10 {
            for v in 0..3 {
                recs.push(qa(&format!("g{g}v{v}"), Some(&format!("g{g}"))));
            }
        }
        let s = split_dataset(&recs, 9, 3).unwrap();
        assert_eq!(s.test.len(), 9);
        let test: HashSet<_> = s.test.iter().map(|id| &id[..id.find('v').unwrap()]).collect();
        let train: HashSet<_> = s.train.iter().map(|id| &id[..id.find('v').unwrap()]).collect();
        assert!(test.is_disjoint(&train));
    }

    #[test]
    fn split_impossible_with_whole_groups() {
        let recs: Vec<_> = (0..4).map(|i| qa(&format!("v{i}"), Some("g"))).collect();
        assert!(split_dataset(&recs, 2, 0).is_err());
    }

    #[test]
    fn seed_groups_share_prompt() {
        let mut a = qa("v1", Some("s"));
        let mut b = qa("v2", Some("s"));
        a.prompt = "same".into();
        b.prompt = "other".into();
        assert!(SeedGroup::from_records(&[a.clone(), b]).is_err());
        let mut c = qa("v3", Some("s"));
        c.prompt = "same".into();
        let groups = SeedGroup::from_records(&[a, c]).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].variants.len(), 2);
    }
}
