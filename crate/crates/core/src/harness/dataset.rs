//! JSONL dataset ingestion.
//!
//! One object per line:
//! `{"id": str, "image": str|null, "question": str, "options": [str, ...],
//!   "gold_index": int|null, "metadata": {str: str}}`.
//! Images are filesystem paths (relative to the dataset file) or
//! `base64:<payload>`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{ImageData, ImageRef};
use crate::scoring::OptionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default)]
    pub image: Option<ImageRef>,
    pub question: String,
    pub options: OptionSet,
    #[serde(default)]
    pub gold_index: Option<usize>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("sample id is empty"));
        }
        if self.question.trim().is_empty() {
            return Err(Error::validation(format!(
                "sample `{}` has an empty question",
                self.id
            )));
        }
        if let Some(g) = self.gold_index {
            if g >= self.options.len() {
                return Err(Error::validation(format!(
                    "sample `{}`: gold_index {g} out of range for {} options",
                    self.id,
                    self.options.len()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_image(&self) -> Result<Option<ImageData>> {
        self.image.as_ref().map(ImageRef::load).transpose()
    }
}

fn strip_position(msg: String) -> String {
    match msg.find(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg,
    }
}

/// Parses and validates a JSONL dataset. Blank lines are skipped; an empty
/// file yields an empty dataset with a warning.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<Sample>> {
    let base_dir = path.parent();
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Dataset {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let mut sample: Sample =
            serde_json::from_str(line).map_err(|e| err(strip_position(e.to_string())))?;
        if let (Some(ImageRef::Path(p)), Some(dir)) = (&sample.image, base_dir) {
            if p.is_relative() {
                sample.image = Some(ImageRef::Path(dir.join(p)));
            }
        }
        sample.validate().map_err(|e| err(e.to_string()))?;
        if !seen.insert(sample.id.clone()) {
            return Err(err(format!("duplicate sample id `{}`", sample.id)));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        log::warn!("dataset {} is empty", path.display());
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"a","image":"base64:aGk=","question":"Is it red?","options":["yes","no"],"gold_index":0,"metadata":{"task":"color"}}
{"id":"b","image":"img/b.png","question":"Which?","options":["x","y","z"],"gold_index":null}
{"id":"c","image":null,"question":"Q","options":["1","2"]}
"#;

    fn parse(text: &str) -> Result<Vec<Sample>> {
        parse_dataset(text, Path::new("/data/set.jsonl"))
    }

    #[test]
    fn parses_well_formed_lines() {
        let s = parse(GOOD).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].image, Some(ImageRef::Inline(b"hi".to_vec())));
        assert_eq!(s[0].metadata["task"], "color");
        assert_eq!(s[1].image, Some(ImageRef::Path("/data/img/b.png".into())));
        assert_eq!(s[1].gold_index, None);
        assert_eq!(s[2].image, None);
    }

    #[test]
    fn missing_field_cites_line() {
        let text = "{\"id\":\"a\",\"question\":\"q\",\"options\":[\"y\",\"n\"]}\n{\"id\":\"b\",\"question\":\"q\"}\n";
        let err = parse(text).unwrap_err();
        match err {
            Error::Dataset { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("options"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_samples() {
        let dup = "{\"id\":\"a\",\"question\":\"q\",\"options\":[\"y\",\"n\"]}\n{\"id\":\"a\",\"question\":\"q\",\"options\":[\"y\",\"n\"]}\n";
        assert!(matches!(parse(dup), Err(Error::Dataset { line: 2, .. })));

        let gold = "{\"id\":\"a\",\"question\":\"q\",\"options\":[\"y\",\"n\"],\"gold_index\":2}\n";
        assert!(matches!(parse(gold), Err(Error::Dataset { line: 1, .. })));

        let one = "{\"id\":\"a\",\"question\":\"q\",\"options\":[\"y\"]}\n";
        assert!(parse(one).is_err());

        assert!(parse("not json\n").is_err());
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            load_dataset("/nonexistent/x.jsonl"),
            Err(Error::Io { .. })
        ));
    }
}
