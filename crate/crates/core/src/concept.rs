//! Shape-driven concept interpretation: a fixed structured query about the
//! silhouette, and a strict parser for the two-field reply.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::{with_retries, Interpreter, RetryPolicy};
use crate::error::{Error, Result};
use crate::imaging::{Mask, MaskKind, Raster};

/// Every rendering prompt ends with this sentence.
pub const BACKGROUND_CLAUSE: &str = "No background.";

const INSTRUCTION_HEAD: &str = "\
The image is a silhouette: the white region is the outline of a natural object \
(such as a stone, a cloud or a flame) on a black background. Ignore what the \
object really is and look only at its shape.";

const INSTRUCTION_SINGLE: &str = "\
1. Name the single animal this silhouette most plausibly resembles.
2. Write a rendering prompt for an image generator describing that animal \
filling the silhouette exactly: its pose, where its body parts sit inside the \
shape, and the colors and textures of its surface. End the prompt with the \
sentence \"No background.\"

Reply with a JSON object only, with exactly these two fields:
{\"label\": \"<animal name>\", \"prompt\": \"<rendering prompt>\"}";

const REPROMPT_NOTE: &str = "\n\nYour previous reply could not be parsed. Reply with the JSON object only, no other text.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptCandidate {
    pub label: String,
    pub render_prompt: String,
}

impl ConceptCandidate {
    /// Trims and lowercases the label, trims the prompt and appends the
    /// background clause when missing.
    pub fn new(label: &str, render_prompt: &str) -> Result<Self> {
        let label = label.trim().to_lowercase();
        if label.is_empty() {
            return Err(Error::Validation("concept label is empty".into()));
        }
        let prompt = render_prompt.trim();
        if prompt.is_empty() {
            return Err(Error::Validation("rendering prompt is empty".into()));
        }
        Ok(Self {
            label,
            render_prompt: with_background_clause(prompt),
        })
    }
}

fn with_background_clause(prompt: &str) -> String {
    if prompt.ends_with(BACKGROUND_CLAUSE) {
        return prompt.to_string();
    }
    let sep = if prompt.ends_with(['.', '!', '?']) { " " } else { ". " };
    format!("{prompt}{sep}{BACKGROUND_CLAUSE}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnimalConcept {
    pub label: String,
    pub render_prompt: String,
    /// Backend reply exactly as received.
    pub raw_response: String,
    /// Further candidates when more than one was requested, best first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<ConceptCandidate>,
}

impl AnimalConcept {
    pub fn new(label: &str, render_prompt: &str, raw_response: impl Into<String>) -> Result<Self> {
        let c = ConceptCandidate::new(label, render_prompt)?;
        Ok(Self {
            label: c.label,
            render_prompt: c.render_prompt,
            raw_response: raw_response.into(),
            alternatives: Vec::new(),
        })
    }

    /// The reply format the interpreter is asked for.
    pub fn to_structured(&self) -> String {
        let one = |label: &str, prompt: &str| json!({ "label": label, "prompt": prompt });
        if self.alternatives.is_empty() {
            one(&self.label, &self.render_prompt).to_string()
        } else {
            let all: Vec<Value> = std::iter::once(one(&self.label, &self.render_prompt))
                .chain(self.alternatives.iter().map(|c| one(&c.label, &c.render_prompt)))
                .collect();
            json!({ "candidates": all }).to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = ConceptCandidate::new(&self.label, &self.render_prompt)?;
        if c.label != self.label || c.render_prompt != self.render_prompt {
            return Err(Error::Validation(format!(
                "concept `{}` is not normalized",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptRequest {
    /// White-on-black rendering of the mask.
    pub silhouette: Raster,
    pub instruction: String,
    pub response_schema: Value,
    pub candidates: u32,
}

/// White foreground on black background.
pub fn render_mask_for_query(mask: &Mask) -> Result<Raster> {
    if mask.kind() != MaskKind::Binary {
        return Err(Error::Precondition("silhouette mask must be binary".into()));
    }
    if mask.is_empty() {
        return Err(Error::Degenerate("silhouette mask is empty".into()));
    }
    Ok(mask.to_raster())
}

fn single_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "label": { "type": "string" },
            "prompt": { "type": "string" }
        },
        "required": ["label", "prompt"]
    })
}

pub fn build_interpretation_request(mask: &Mask) -> Result<ConceptRequest> {
    build_interpretation_request_with(mask, 1)
}

/// Request asking for `candidates` animals, best first. With one candidate
/// the reply is the bare two-field object.
pub fn build_interpretation_request_with(mask: &Mask, candidates: u32) -> Result<ConceptRequest> {
    let silhouette = render_mask_for_query(mask)?;
    let candidates = candidates.max(1);
    let (instruction, response_schema) = if candidates == 1 {
        (format!("{INSTRUCTION_HEAD}\n\n{INSTRUCTION_SINGLE}"), single_schema())
    } else {
        (
            format!(
                "{INSTRUCTION_HEAD}\n\n\
                 1. Name the {candidates} animals this silhouette most plausibly resembles, most plausible first.\n\
                 2. For each, write a rendering prompt for an image generator describing that animal filling the \
                 silhouette exactly: its pose, where its body parts sit inside the shape, and the colors and \
                 textures of its surface. End each prompt with the sentence \"No background.\"\n\n\
                 Reply with a JSON object only, with exactly one field holding {candidates} two-field entries:\n\
                 {{\"candidates\": [{{\"label\": \"<animal name>\", \"prompt\": \"<rendering prompt>\"}}, ...]}}"
            ),
            json!({
                "type": "object",
                "properties": { "candidates": { "type": "array", "items": single_schema() } },
                "required": ["candidates"]
            }),
        )
    };
    Ok(ConceptRequest {
        silhouette,
        instruction,
        response_schema,
        candidates,
    })
}

/// Strips a Markdown code fence and any prose around the outermost object.
fn json_payload(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn field<'a>(obj: &'a Value, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| obj.get(*n)?.as_str())
}

pub fn parse_concept_response(raw: &str) -> Result<AnimalConcept> {
    let fail = |message: String| Error::Parse {
        message,
        raw: raw.to_string(),
    };
    let payload = json_payload(raw).ok_or_else(|| fail("no JSON object in response".into()))?;
    let value: Value = serde_json::from_str(payload).map_err(|e| fail(format!("invalid JSON: {e}")))?;

    let entries: Vec<&Value> = match value.get("candidates") {
        Some(Value::Array(list)) if !list.is_empty() => list.iter().collect(),
        Some(_) => return Err(fail("`candidates` must be a nonempty array".into())),
        None => vec![&value],
    };
    let mut parsed = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let label = field(e, &["label"]).ok_or_else(|| fail(format!("entry {i}: missing `label`")))?;
        let prompt = field(e, &["prompt", "render_prompt"])
            .ok_or_else(|| fail(format!("entry {i}: missing `prompt`")))?;
        parsed.push(ConceptCandidate::new(label, prompt).map_err(|e| fail(format!("entry {i}: {e}")))?);
    }
    let mut iter = parsed.into_iter();
    let first = iter.next().expect("at least one entry");
    Ok(AnimalConcept {
        label: first.label,
        render_prompt: first.render_prompt,
        raw_response: raw.to_string(),
        alternatives: iter.collect(),
    })
}

/// Queries the interpreter; a reply that does not parse earns one reprompt.
pub fn interpret(
    interpreter: &dyn Interpreter,
    mask: &Mask,
    candidates: u32,
    retry: &RetryPolicy,
) -> Result<AnimalConcept> {
    let mut request = build_interpretation_request_with(mask, candidates)?;
    let raw = with_retries(retry, |_| interpreter.interpret(&request))?.value;
    match parse_concept_response(&raw) {
        Ok(c) => Ok(c),
        Err(first) => {
            tracing::warn!(backend = %interpreter.descriptor().id, "concept reply unparseable, reprompting: {first}");
            request.instruction.push_str(REPROMPT_NOTE);
            let raw = with_retries(retry, |_| interpreter.interpret(&request))?.value;
            parse_concept_response(&raw)
        }
    }
}
