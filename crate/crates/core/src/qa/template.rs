use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{QaError, TaskKind};

const DEFAULT_BANK: &str = include_str!("../../assets/templates.json");

/// Shape of a task's answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSchema {
    Text,
    Box,
    Track,
    Trajectory,
}

impl AnswerSchema {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::BoxDetection => AnswerSchema::Box,
            TaskKind::Tracking | TaskKind::BoxPrediction => AnswerSchema::Track,
            TaskKind::Planning => AnswerSchema::Trajectory,
            _ => AnswerSchema::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub task: TaskKind,
    pub answer: AnswerSchema,
    pub text: String,
}

/// Value kinds a placeholder accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// Rendered as a whole number (pixels).
    Int,
    /// Rendered with one decimal (seconds, speed).
    Decimal,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Int(i64),
    Decimal(f64),
    Text(String),
}

impl Binding {
    fn kind(&self) -> SlotKind {
        match self {
            Binding::Int(_) => SlotKind::Int,
            Binding::Decimal(_) => SlotKind::Decimal,
            Binding::Text(_) => SlotKind::Text,
        }
    }

    fn render(&self) -> String {
        match self {
            Binding::Int(v) => v.to_string(),
            Binding::Decimal(v) => format!("{v:.1}"),
            Binding::Text(s) => s.clone(),
        }
    }
}

/// Placeholders each task's templates may use, with their kinds.
pub fn task_slots(task: TaskKind) -> &'static [(&'static str, SlotKind)] {
    const BOX: &[(&str, SlotKind)] = &[("c", SlotKind::Text), ("u", SlotKind::Int), ("v", SlotKind::Int)];
    const TIMED_BOX: &[(&str, SlotKind)] = &[
        ("c", SlotKind::Text),
        ("u", SlotKind::Int),
        ("v", SlotKind::Int),
        ("t", SlotKind::Decimal),
    ];
    const OFFSET: &[(&str, SlotKind)] = &[("t", SlotKind::Decimal)];
    const EVENTS: &[(&str, SlotKind)] = &[("event_a", SlotKind::Text), ("event_b", SlotKind::Text)];
    const PLAN: &[(&str, SlotKind)] = &[("direction", SlotKind::Text), ("s", SlotKind::Decimal)];
    match task {
        TaskKind::BoxDetection => BOX,
        TaskKind::Tracking | TaskKind::BoxPrediction => TIMED_BOX,
        TaskKind::MomentRecap | TaskKind::ActivityPrediction => OFFSET,
        TaskKind::EventQuery => EVENTS,
        TaskKind::Planning => PLAN,
        _ => &[],
    }
}

/// Names of all `{name}` placeholders in order of appearance.
pub fn extract_placeholders(text: &str) -> Result<Vec<String>, QaError> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(QaError::Template(format!("unmatched '}}' in {text:?}")));
        }
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| QaError::Template(format!("unclosed '{{' in {text:?}")))?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(QaError::Template(format!("bad placeholder {{{name}}} in {text:?}")));
        }
        out.push(name.to_string());
        rest = &after[close + 1..];
    }
    Ok(out)
}

/// Substitutes every placeholder. Each must be bound, with a value of the
/// kind its task declares.
pub fn fill_template(tpl: &Template, bindings: &BTreeMap<&str, Binding>) -> Result<String, QaError> {
    let slots = task_slots(tpl.task);
    let mut out = String::with_capacity(tpl.text.len());
    let mut rest = tpl.text.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| QaError::Template(format!("unclosed '{{' in {}", tpl.id)))?;
        let name = &rest[open + 1..open + close];
        let value = bindings
            .get(name)
            .ok_or_else(|| QaError::MissingBinding(name.to_string()))?;
        let expected = slots.iter().find(|(n, _)| *n == name).map(|(_, k)| *k);
        if expected != Some(value.kind()) {
            return Err(QaError::BindingType {
                name: name.to_string(),
                template: tpl.id.clone(),
            });
        }
        out.push_str(&value.render());
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    templates: Vec<Template>,
}

impl TemplateBank {
    /// Parses and validates a JSON list of templates.
    pub fn from_json(text: &str) -> Result<Self, QaError> {
        let templates: Vec<Template> = serde_json::from_str(text)
            .map_err(|e| QaError::Parse {
                source_name: "template bank".into(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        let bank = Self { templates };
        bank.validate()?;
        Ok(bank)
    }

    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_BANK).expect("shipped template bank is valid")
    }

    pub fn validate(&self) -> Result<(), QaError> {
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.templates {
            if !ids.insert(&t.id) {
                return Err(QaError::Template(format!("duplicate template id {}", t.id)));
            }
            if t.answer != AnswerSchema::for_task(t.task) {
                return Err(QaError::Template(format!(
                    "template {} declares answer {:?} but {} answers are {:?}",
                    t.id,
                    t.answer,
                    t.task,
                    AnswerSchema::for_task(t.task)
                )));
            }
            let slots = task_slots(t.task);
            for name in extract_placeholders(&t.text)? {
                if !slots.iter().any(|(n, _)| *n == name) {
                    return Err(QaError::Template(format!(
                        "template {} uses {{{name}}}, which {} does not bind",
                        t.id, t.task
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn for_task(&self, task: TaskKind) -> Vec<&Template> {
        self.templates.iter().filter(|t| t.task == task).collect()
    }
}
