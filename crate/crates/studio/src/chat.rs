//! Persona chat sessions with a sliding history window.

use std::fmt::Write as _;
use std::sync::Mutex;

use persona_align::augment::persona_block;
use persona_align::corpus::PersonaProfile;
use persona_align::model::{GenerationParams, PolicyHandle};
use serde::{Deserialize, Serialize};

/// Produces a reply for a fully constructed prompt.
pub trait ChatBackend: Send + Sync {
    fn reply(&self, prompt: &str) -> Result<String, String>;
}

/// Chat over a policy checkpoint. Generation is serialized: one inference at
/// a time per checkpoint.
pub struct PolicyChat {
    model: Mutex<Box<dyn PolicyHandle>>,
    params: GenerationParams,
}

impl PolicyChat {
    pub fn new(model: Box<dyn PolicyHandle>, params: GenerationParams) -> Self {
        PolicyChat {
            model: Mutex::new(model),
            params,
        }
    }
}

impl ChatBackend for PolicyChat {
    fn reply(&self, prompt: &str) -> Result<String, String> {
        let model = self.model.lock().map_err(|_| "model lock poisoned".to_string())?;
        let text = model.generate(prompt, &self.params).map_err(|e| e.to_string())?;
        let text = text.trim();
        if text.is_empty() {
            Err("the model produced an empty reply".into())
        } else {
            Ok(text.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub persona_id: String,
    pub history: Vec<Turn>,
    /// The prompt sent to the model for the latest reply.
    pub last_prompt: Option<String>,
}

/// Persona block, then the last `window` turns, then the new message.
pub fn build_prompt(persona: &PersonaProfile, history: &[Turn], window: usize, message: &str) -> String {
    let mut s = persona_block(persona);
    s.push('\n');
    let start = history.len().saturating_sub(window);
    for t in &history[start..] {
        let _ = writeln!(s, "User: {}", t.user);
        let _ = writeln!(s, "{}: {}", persona.name, t.reply);
    }
    let _ = write!(s, "User: {}", message.trim());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn persona(name: &str) -> PersonaProfile {
        PersonaProfile {
            id: name.to_lowercase(),
            name: name.into(),
            description: "A test character.".into(),
            style_notes: vec![],
        }
    }

    #[test]
    fn window_keeps_last_turns() {
        let history: Vec<Turn> = (0..5)
            .map(|i| Turn {
                user: format!("q{i}"),
                reply: format!("r{i}"),
            })
            .collect();
        let p = build_prompt(&persona("Ren"), &history, 2, "hello");
        assert!(!p.contains("q2") && p.contains("q3") && p.contains("q4"));
        assert!(p.starts_with("You are Ren."));
        assert!(p.ends_with("User: hello"));
    }

    #[test]
    fn personas_change_the_prompt() {
        assert_ne!(
            build_prompt(&persona("Ren"), &[], 8, "hi"),
            build_prompt(&persona("Kai"), &[], 8, "hi")
        );
    }
}
