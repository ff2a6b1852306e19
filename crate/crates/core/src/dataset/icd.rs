use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_words;

/// The 20-code desk-scale list shipped with the crate.
pub const BUILTIN_ICD_LIST: &str = include_str!("../../data/icd_desk.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdCode {
    pub code: String,
    /// Lowercase description words.
    pub words: Vec<String>,
}

impl IcdCode {
    pub fn description(&self) -> String {
        self.words.join(" ")
    }
}

/// Parse `CODE<TAB>Description` lines. Blank lines are skipped.
pub fn parse_icd_list(text: &str) -> Result<Vec<IcdCode>> {
    let mut codes = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (code, desc) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected CODE<TAB>Description".into(),
        })?;
        let code = code.trim();
        if code.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty code id".into(),
            });
        }
        let words = normalize_words(desc);
        if words.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("code {code} has an empty description"),
            });
        }
        if !seen.insert(code.to_string()) {
            return Err(Error::Validation(format!(
                "duplicate code id {code} at line {line_no}"
            )));
        }
        codes.push(IcdCode {
            code: code.to_string(),
            words,
        });
    }
    Ok(codes)
}

pub fn load_icd_list(path: &Path) -> Result<Vec<IcdCode>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_icd_list(&text)
}

pub fn builtin_icd_list() -> Vec<IcdCode> {
    parse_icd_list(BUILTIN_ICD_LIST).expect("shipped ICD list parses")
}
