//! Concept-study metrics computed from recorded participant responses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concept::AnimalConcept;
use crate::error::{Error, Result};
use crate::pipeline::ConceptArtifact;

const HEADER: [&str; 4] = ["image_id", "participant_id", "task", "answer"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Match,
    Plausibility,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Match => "match",
            Task::Plausibility => "plausibility",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRow {
    pub image_id: String,
    pub participant_id: String,
    pub task: Task,
    /// Free text for `match`; `yes` or `no` for `plausibility`.
    pub answer: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StudyResponses {
    pub rows: Vec<StudyRow>,
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

fn check_row(row: &StudyRow) -> std::result::Result<(), String> {
    if row.image_id.trim().is_empty() {
        return Err("empty image id".into());
    }
    if row.participant_id.trim().is_empty() {
        return Err("empty participant id".into());
    }
    if row.task == Task::Plausibility && !matches!(normalize(&row.answer).as_str(), "yes" | "no") {
        return Err(format!("plausibility answer must be yes or no, found `{}`", row.answer));
    }
    Ok(())
}

impl StudyResponses {
    pub fn new(rows: Vec<StudyRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            check_row(row).map_err(|m| Error::Validation(format!("row {}: {m}", i + 1)))?;
        }
        Ok(Self { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses `image_id,participant_id,task,answer` text. The first malformed
    /// row is reported with its line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Validation(format!("line 1: {e}")))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Validation(format!(
                "line 1: header must be `{}`, found `{}`",
                HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Validation(format!("line {line}: {e}"))
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let row: StudyRow = record
                .deserialize(Some(&headers))
                .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
            check_row(&row).map_err(|m| Error::Validation(format!("line {line}: {m}")))?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn to_text(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    pub fn of_task(&self, task: Task) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.task == task)
    }

    /// Every image id must satisfy `known`.
    pub fn check_ids(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        match self.rows.iter().find(|r| !known(&r.image_id)) {
            Some(r) => Err(Error::Validation(format!("response for unknown image `{}`", r.image_id))),
            None => Ok(()),
        }
    }
}

/// Maps answer variants onto a canonical label. Both sides of a comparison
/// pass through it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymTable {
    map: HashMap<String, String>,
}

impl SynonymTable {
    pub fn new(pairs: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<str>)>) -> Self {
        Self {
            map: pairs
                .into_iter()
                .map(|(v, c)| (normalize(v.as_ref()), normalize(c.as_ref())))
                .collect(),
        }
    }

    /// Two columns, `variant,canonical`; an initial row with exactly those
    /// names is treated as a header.
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut pairs = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Validation(format!("line {line}: {e}"))
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 2 {
                return Err(Error::Validation(format!("line {line}: expected two columns")));
            }
            if pairs.is_empty() && &record[0] == "variant" && &record[1] == "canonical" {
                continue;
            }
            pairs.push((record[0].to_string(), record[1].to_string()));
        }
        Ok(Self::new(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn canonical(&self, s: &str) -> String {
        let n = normalize(s);
        self.map.get(&n).cloned().unwrap_or(n)
    }
}

/// Anything that carries an animal label.
pub trait ConceptLabel {
    fn concept_label(&self) -> &str;
}

impl ConceptLabel for AnimalConcept {
    fn concept_label(&self) -> &str {
        &self.label
    }
}

impl ConceptLabel for ConceptArtifact {
    fn concept_label(&self) -> &str {
        &self.label
    }
}

impl ConceptLabel for String {
    fn concept_label(&self) -> &str {
        self
    }
}

impl ConceptLabel for &str {
    fn concept_label(&self) -> &str {
        self
    }
}

/// Matched and total counts behind a rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub hits: usize,
    pub n: usize,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.n as f64
    }
}

pub fn concept_agreement_tally<C: ConceptLabel>(
    responses: &StudyResponses,
    concepts: &BTreeMap<String, C>,
    synonyms: Option<&SynonymTable>,
) -> Result<Tally> {
    let canon = |s: &str| match synonyms {
        Some(t) => t.canonical(s),
        None => normalize(s),
    };
    let mut tally = Tally { hits: 0, n: 0 };
    for row in responses.of_task(Task::Match) {
        let concept = concepts
            .get(&row.image_id)
            .ok_or_else(|| Error::Validation(format!("no concept recorded for image `{}`", row.image_id)))?;
        tally.n += 1;
        if canon(&row.answer) == canon(concept.concept_label()) {
            tally.hits += 1;
        }
    }
    if tally.n == 0 {
        return Err(Error::Degenerate("no match-task responses".into()));
    }
    Ok(tally)
}

/// Fraction of match-task answers equal to the interpreted label after
/// trimming and lowercasing (and synonym mapping, when given).
pub fn eval_concept_agreement<C: ConceptLabel>(
    responses: &StudyResponses,
    concepts: &BTreeMap<String, C>,
    synonyms: Option<&SynonymTable>,
) -> Result<f64> {
    concept_agreement_tally(responses, concepts, synonyms).map(|t| t.rate())
}

pub fn plausibility_tally(responses: &StudyResponses) -> Result<Tally> {
    let mut tally = Tally { hits: 0, n: 0 };
    for row in responses.of_task(Task::Plausibility) {
        tally.n += 1;
        match normalize(&row.answer).as_str() {
            "yes" => tally.hits += 1,
            "no" => {}
            other => {
                return Err(Error::Validation(format!(
                    "plausibility answer must be yes or no, found `{other}`"
                )))
            }
        }
    }
    if tally.n == 0 {
        return Err(Error::Degenerate("no plausibility-task responses".into()));
    }
    Ok(tally)
}

/// Fraction of plausibility-task answers that are `yes`.
pub fn eval_plausibility_rate(responses: &StudyResponses) -> Result<f64> {
    plausibility_tally(responses).map(|t| t.rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, task: Task, answer: &str) -> StudyRow {
        StudyRow {
            image_id: id.into(),
            participant_id: "p1".into(),
            task,
            answer: answer.into(),
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let ok = "image_id,participant_id,task,answer\na,p1,match,Fox\na,p2,plausibility,YES\n";
        let r = StudyResponses::parse(ok).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[1].task, Task::Plausibility);

        let bad = "image_id,participant_id,task,answer\na,p1,match,fox\na,p2,plausibility,maybe\n";
        let e = StudyResponses::parse(bad).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");

        let bad = "image_id,participant_id,task,answer\na,p1,rank,fox\n";
        assert!(StudyResponses::parse(bad).unwrap_err().to_string().contains("line 2"));

        let bad = "image_id,participant_id,task,answer\na,p1,match\n";
        assert!(StudyResponses::parse(bad).unwrap_err().to_string().contains("line 2"));

        assert!(StudyResponses::parse("id,who,task,answer\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let r = StudyResponses::new(vec![row("a", Task::Match, "sea turtle, green"), row("b", Task::Plausibility, "no")]).unwrap();
        assert_eq!(StudyResponses::parse(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn agreement_normalizes_and_uses_synonyms() {
        let concepts = BTreeMap::from([("a".to_string(), "turtle".to_string())]);
        let r = StudyResponses::new(vec![
            row("a", Task::Match, " Turtle "),
            row("a", Task::Match, "sea turtle"),
            row("a", Task::Plausibility, "yes"),
        ])
        .unwrap();
        assert_eq!(eval_concept_agreement(&r, &concepts, None).unwrap(), 0.5);
        let syn = SynonymTable::parse("variant,canonical\nsea turtle,turtle\n").unwrap();
        assert_eq!(eval_concept_agreement(&r, &concepts, Some(&syn)).unwrap(), 1.0);
    }

    #[test]
    fn agreement_errors() {
        let concepts: BTreeMap<String, String> = BTreeMap::new();
        let r = StudyResponses::new(vec![row("a", Task::Match, "fox")]).unwrap();
        assert!(matches!(eval_concept_agreement(&r, &concepts, None), Err(Error::Validation(_))));
        let r = StudyResponses::new(vec![row("a", Task::Plausibility, "yes")]).unwrap();
        assert!(matches!(eval_concept_agreement(&r, &concepts, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn plausibility_extremes() {
        let all = |a: &str| StudyResponses::new((0..5).map(|_| row("a", Task::Plausibility, a)).collect()).unwrap();
        assert_eq!(eval_plausibility_rate(&all("yes")).unwrap(), 1.0);
        assert_eq!(eval_plausibility_rate(&all("no")).unwrap(), 0.0);
        assert!(matches!(
            eval_plausibility_rate(&StudyResponses::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn unknown_ids_are_reported() {
        let r = StudyResponses::new(vec![row("zz", Task::Match, "fox")]).unwrap();
        assert!(r.check_ids(|id| id == "a").is_err());
        assert!(r.check_ids(|_| true).is_ok());
    }
}
