use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{PersonaProfile, QaPair};
use crate::error::{Error, Result};

pub const DEFAULT_BODY: &str = "{instruction}\n{persona}\n{requirements}\nInput: {seed_prompt}\n";

/// A generation prompt with named slots.
///
/// The body is plain text; `{instruction}`, `{seed_prompt}`, `{persona}` and
/// `{requirements}` are substituted at render time. Demo examples are
/// rendered as part of `{instruction}`. A body that mentions `{persona}`
/// makes the persona mandatory. Lines left blank by empty slots are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub body: String,
    pub instruction: String,
    #[serde(default)]
    pub extra_requirements: Vec<String>,
    #[serde(default)]
    pub demo_examples: Vec<(String, String)>,
}

impl PromptTemplate {
    pub fn new(instruction: impl Into<String>) -> Self {
        PromptTemplate {
            body: "{instruction}\n{requirements}\nInput: {seed_prompt}\n".into(),
            instruction: instruction.into(),
            extra_requirements: Vec::new(),
            demo_examples: Vec::new(),
        }
    }

    /// Template whose body binds a persona.
    pub fn with_persona(instruction: impl Into<String>) -> Self {
        PromptTemplate {
            body: DEFAULT_BODY.into(),
            ..PromptTemplate::new(instruction)
        }
    }

    pub fn requirement(mut self, r: impl Into<String>) -> Self {
        self.extra_requirements.push(r.into());
        self
    }

    pub fn persona_slot(&self) -> bool {
        self.body.contains("{persona}")
    }
}

pub fn persona_block(p: &PersonaProfile) -> String {
    let mut s = format!("You are {}. {}", p.name, p.description.trim());
    if !p.style_notes.is_empty() {
        let _ = write!(s, " Style: {}.", p.style_notes.join("; "));
    }
    s
}

pub fn render_prompt(template: &PromptTemplate, seed: &QaPair, persona: Option<&PersonaProfile>) -> Result<String> {
    render_text(template, &seed.prompt, persona)
}

/// Renders with an arbitrary input text in the `{seed_prompt}` slot.
pub fn render_text(template: &PromptTemplate, input: &str, persona: Option<&PersonaProfile>) -> Result<String> {
    let mut instruction = template.instruction.trim().to_string();
    if instruction.is_empty() {
        return Err(Error::UnboundSlot("instruction".into()));
    }
    if input.trim().is_empty() {
        return Err(Error::UnboundSlot("seed_prompt".into()));
    }
    for (q, a) in &template.demo_examples {
        let _ = write!(instruction, "\nExample: {q} => {a}");
    }
    let persona_text = match persona {
        Some(p) => persona_block(p),
        None if template.persona_slot() => return Err(Error::UnboundSlot("persona".into())),
        None => String::new(),
    };
    let requirements = template.extra_requirements.join("\n");

    let mut out = String::new();
    let mut rest = template.body.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::InvalidArgument("unterminated slot in template body".into()))?;
        let name = &after[..close];
        out.push_str(match name {
            "instruction" => &instruction,
            "seed_prompt" => input.trim(),
            "persona" => &persona_text,
            "requirements" => &requirements,
            _ => return Err(Error::UnboundSlot(name.to_string())),
        });
        rest = &after[close + 1..];
    }
    out.push_str(rest);

    let lines: Vec<&str> = out.lines().filter(|l| !l.trim().is_empty()).collect();
    Ok(lines.join("\n"))
}
