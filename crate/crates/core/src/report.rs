//! Per-index lemma check tables shared by the tree and surface verifiers.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaEntry {
    pub index: String,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl LemmaEntry {
    pub fn new(index: String, measured: f64, bound: f64) -> Self {
        LemmaEntry { index, measured, bound, margin: bound - measured, pass: measured < bound }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub level: usize,
    pub pass: bool,
    pub samples_per_item: usize,
    pub entries: Vec<LemmaEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LemmaReport {
    pub fn new(lemma: &str, level: usize, samples_per_item: usize, entries: Vec<LemmaEntry>) -> Self {
        let pass = entries.iter().all(|e| e.pass);
        LemmaReport { lemma: lemma.into(), level, pass, samples_per_item, entries, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn worst(&self) -> Option<&LemmaEntry> {
        self.entries.iter().min_by(|a, b| (a.margin / a.bound).total_cmp(&(b.margin / b.bound)))
    }

    pub fn summary(&self) -> String {
        let worst = self.worst().map(|e| format!(", worst {} measured {:.6e} < {:.6e}", e.index, e.measured, e.bound)).unwrap_or_default();
        format!("{} level {}: {} ({} items{})", self.lemma, self.level, if self.pass { "pass" } else { "FAIL" }, self.entries.len(), worst)
    }
}
