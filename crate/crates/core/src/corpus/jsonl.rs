use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{LabelVocab, Origin, TextRecord};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct LineOut<'a> {
    id: &'a str,
    text: &'a str,
    label: &'a str,
    origin: Origin,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineIn {
    id: String,
    text: String,
    label: String,
    origin: Origin,
}

type AccessHook = Box<dyn Fn(&Path) + Send + Sync>;

static PRIVATE_ACCESS_HOOK: RwLock<Option<AccessHook>> = RwLock::new(None);

/// Installs a callback invoked with the path every time a private corpus is
/// opened through [`load_private_jsonl`].
pub fn set_private_access_hook(hook: impl Fn(&Path) + Send + Sync + 'static) {
    *PRIVATE_ACCESS_HOOK.write().unwrap() = Some(Box::new(hook));
}

/// One JSON object per line: `{"id", "text", "label", "origin"}`, labels by
/// name. A leading UTF-8 BOM is ignored; blank lines are skipped.
pub fn load_jsonl(path: &Path, vocab: &LabelVocab) -> Result<Vec<TextRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = if line_no == 1 {
            line.strip_prefix('\u{feff}').unwrap_or(&line).to_string()
        } else {
            line
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LineIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = vocab.label(&parsed.label)?;
        out.push(TextRecord::new(parsed.id, parsed.text, label, parsed.origin));
    }
    Ok(out)
}

/// Loads a corpus that must be entirely private, reporting the access to the
/// installed hook.
pub fn load_private_jsonl(path: &Path, vocab: &LabelVocab) -> Result<Vec<TextRecord>> {
    if let Some(hook) = PRIVATE_ACCESS_HOOK.read().unwrap().as_ref() {
        hook(path);
    }
    let records = load_jsonl(path, vocab)?;
    if let Some(r) = records.iter().find(|r| r.origin() != Origin::Private) {
        return Err(Error::Integrity(format!(
            "{}: record {} has origin {} in a private corpus",
            path.display(),
            r.id(),
            r.origin()
        )));
    }
    Ok(records)
}

pub fn save_jsonl<'a>(
    records: impl IntoIterator<Item = &'a TextRecord>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = LineOut {
            id: r.id(),
            text: r.text(),
            label: &r.label().name,
            origin: r.origin(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<LabelVocab> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = serde_json::from_str(text.trim_start_matches('\u{feff}'))?;
    LabelVocab::new(names)
}

pub fn save_vocab(vocab: &LabelVocab, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(vocab)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
