use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Augment,
    Sft,
    Annotate,
    Rm,
    LabelRemainder,
    Pairs,
    Dpo,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Augment,
        Stage::Sft,
        Stage::Annotate,
        Stage::Rm,
        Stage::LabelRemainder,
        Stage::Pairs,
        Stage::Dpo,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Augment => "augment",
            Stage::Sft => "sft",
            Stage::Annotate => "annotate",
            Stage::Rm => "rm",
            Stage::LabelRemainder => "label-remainder",
            Stage::Pairs => "pairs",
            Stage::Dpo => "dpo",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Augment => &[Stage::Ingest],
            Stage::Sft => &[Stage::Ingest, Stage::Augment],
            Stage::Annotate => &[Stage::Ingest],
            Stage::Rm => &[Stage::Ingest, Stage::Sft, Stage::Annotate],
            Stage::LabelRemainder => &[Stage::Augment, Stage::Rm],
            Stage::Pairs => &[Stage::Rm, Stage::LabelRemainder],
            Stage::Dpo => &[Stage::Sft, Stage::Pairs],
            Stage::Eval => &[Stage::Ingest, Stage::Rm, Stage::Pairs, Stage::Dpo],
        }
    }

    /// What the stage produces, as named in prerequisite errors.
    pub fn product(self) -> &'static str {
        match self {
            Stage::Ingest => "corpus",
            Stage::Augment => "augmented corpus",
            Stage::Sft => "checkpoint",
            Stage::Annotate => "annotations",
            Stage::Rm => "reward model",
            Stage::LabelRemainder => "machine labels",
            Stage::Pairs => "preference pairs",
            Stage::Dpo => "checkpoint",
            Stage::Eval => "report",
        }
    }

    /// Short label for status listings ("blocked on annotations").
    pub fn product_label(self) -> String {
        match self.product() {
            "checkpoint" => format!("{} checkpoint", self.name()),
            p => p.to_string(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}
