//! Structured policy I/O: the `<think>`/`<answer>` response grammar with its
//! JSON `bbox_2d` payload, and the sensing prompts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::{BBox, Frame};
use crate::TaskKind;

pub const OBJECT_PLACEHOLDER: &str = "{object}";

const DETECTION_PROMPT: &str = include_str!("../assets/detection_prompt.txt");
const SEGMENTATION_PROMPT: &str = include_str!("../assets/segmentation_prompt.txt");

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("missing <think>...</think> block")]
    MissingThink,
    #[error("missing <answer>...</answer> block")]
    MissingAnswer,
    #[error("tags out of order")]
    TagOrder,
    #[error("tag {0} appears more than once")]
    DuplicateTags(&'static str),
    #[error("answer is not a JSON array of objects: {0}")]
    InvalidJson(String),
    #[error("proposal {0} has no bbox_2d field")]
    MissingBboxField(usize),
    #[error("proposal {index} has {len} bbox_2d values, expected 4")]
    BadArity { index: usize, len: usize },
    #[error("proposal {0} has a non-numeric or non-finite coordinate")]
    NonFiniteNumber(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("proposal {index} {bbox:?} lies outside the {width}x{height} frame")]
    OutOfFrame {
        index: usize,
        bbox: [i64; 4],
        width: u32,
        height: u32,
    },
    #[error("proposal {index} {bbox:?} is inverted")]
    Inverted { index: usize, bbox: [i64; 4] },
    #[error("{count} proposals, expected between {min} and {max}")]
    CountViolation { count: usize, min: usize, max: usize },
}

/// Either failure that zeroes the format reward.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResponseError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProposal {
    pub bbox: [f64; 4],
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub think_text: String,
    pub answer_text: String,
    pub proposals: Vec<RawProposal>,
}

impl StructuredResponse {
    /// Renders the response back into tagged text that `parse_response` accepts.
    pub fn to_text(&self) -> String {
        let items: Vec<Value> = self
            .proposals
            .iter()
            .map(|p| {
                let mut obj = serde_json::Map::new();
                obj.insert("bbox_2d".into(), serde_json::json!(p.bbox));
                if let Some(label) = &p.label {
                    obj.insert("label".into(), Value::String(label.clone()));
                }
                Value::Object(obj)
            })
            .collect();
        format!(
            "{THINK_OPEN}{}{THINK_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}",
            self.think_text,
            Value::Array(items)
        )
    }
}

fn single(text: &str, tag: &'static str) -> Result<Option<usize>, FormatError> {
    let mut hits = text.match_indices(tag);
    let first = hits.next().map(|(i, _)| i);
    if hits.next().is_some() {
        return Err(FormatError::DuplicateTags(tag));
    }
    Ok(first)
}

fn strip_code_fence(s: &str) -> &str {
    let s = s.trim();
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let lang_len = rest
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        .unwrap_or(rest.len());
    let rest = &rest[lang_len..];
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

pub fn parse_response(text: &str) -> Result<StructuredResponse, FormatError> {
    let think_open = single(text, THINK_OPEN)?;
    let think_close = single(text, THINK_CLOSE)?;
    let answer_open = single(text, ANSWER_OPEN)?;
    let answer_close = single(text, ANSWER_CLOSE)?;

    let (Some(t0), Some(t1)) = (think_open, think_close) else {
        return Err(FormatError::MissingThink);
    };
    let (Some(a0), Some(a1)) = (answer_open, answer_close) else {
        return Err(FormatError::MissingAnswer);
    };
    let think_body = t0 + THINK_OPEN.len();
    let answer_body = a0 + ANSWER_OPEN.len();
    if t1 < think_body || a1 < answer_body || a0 < t1 + THINK_CLOSE.len() {
        return Err(FormatError::TagOrder);
    }

    let think_text = text[think_body..t1].trim().to_string();
    let answer_text = text[answer_body..a1].trim().to_string();
    let proposals = parse_proposals(strip_code_fence(&answer_text))?;
    Ok(StructuredResponse {
        think_text,
        answer_text,
        proposals,
    })
}

fn parse_proposals(json: &str) -> Result<Vec<RawProposal>, FormatError> {
    let value: Value = serde_json::from_str(json).map_err(|e| FormatError::InvalidJson(e.to_string()))?;
    let Value::Array(items) = value else {
        return Err(FormatError::InvalidJson("top-level value is not an array".into()));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let Value::Object(mut obj) = item else {
                return Err(FormatError::InvalidJson(format!("element {index} is not an object")));
            };
            let raw = match obj.remove("bbox_2d") {
                Some(Value::Array(raw)) => raw,
                Some(_) | None => return Err(FormatError::MissingBboxField(index)),
            };
            if raw.len() != 4 {
                return Err(FormatError::BadArity { index, len: raw.len() });
            }
            let mut bbox = [0.0; 4];
            for (slot, v) in bbox.iter_mut().zip(&raw) {
                *slot = v
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or(FormatError::NonFiniteNumber(index))?;
            }
            let label = match obj.remove("label") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s),
                Some(other) => {
                    return Err(FormatError::InvalidJson(format!(
                        "element {index} has non-string label {other}"
                    )))
                }
            };
            Ok(RawProposal { bbox, label })
        })
        .collect()
}

/// Converts parsed proposals into frame-bound boxes, truncating coordinates
/// toward zero.
pub fn validate_proposals(
    r: &StructuredResponse,
    frame: Frame,
    k_min: usize,
    k_max: usize,
) -> Result<Vec<BBox>, ValidationError> {
    let count = r.proposals.len();
    if count < k_min || count > k_max {
        return Err(ValidationError::CountViolation {
            count,
            min: k_min,
            max: k_max,
        });
    }
    r.proposals
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let c = p.bbox.map(|v| v.trunc() as i64);
            let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|_| ValidationError::Inverted { index, bbox: c })?;
            if !bbox.in_frame(frame) {
                return Err(ValidationError::OutOfFrame {
                    index,
                    bbox: c,
                    width: frame.width,
                    height: frame.height,
                });
            }
            Ok(bbox)
        })
        .collect()
}

/// Parses and validates in one go, using the task's proposal count bounds.
pub fn parse_and_validate(text: &str, frame: Frame, task: TaskKind) -> Result<Vec<BBox>, ResponseError> {
    let (k_min, k_max) = task.proposal_bounds();
    let parsed = parse_response(text)?;
    Ok(validate_proposals(&parsed, frame, k_min, k_max)?)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template has no {OBJECT_PLACEHOLDER} placeholder")]
    MissingPlaceholder,
    #[error("object name is empty")]
    EmptyObjectName,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    task: TaskKind,
    body: String,
}

impl PromptTemplate {
    pub fn new(task: TaskKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        if !body.contains(OBJECT_PLACEHOLDER) {
            return Err(PromptError::MissingPlaceholder);
        }
        Ok(Self { task, body })
    }

    pub fn builtin(task: TaskKind) -> Self {
        let body = match task {
            TaskKind::Detection => DETECTION_PROMPT,
            TaskKind::Segmentation => SEGMENTATION_PROMPT,
        };
        Self {
            task,
            body: body.to_string(),
        }
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

pub fn render_prompt(t: &PromptTemplate, object_name: &str) -> Result<String, PromptError> {
    if object_name.trim().is_empty() {
        return Err(PromptError::EmptyObjectName);
    }
    Ok(t.body.replace(OBJECT_PLACEHOLDER, object_name))
}
