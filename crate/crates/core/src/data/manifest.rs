use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub duration_ms: f64,
    pub words: Vec<String>,
}

/// Utterance list, one `id<TAB>audio<TAB>duration_ms<TAB>transcript` per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Relative audio paths resolve against the manifest's directory. Audio
    /// files are not opened here.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            DataError::Manifest { line, message, .. } => {
                DataError::Manifest { file: path.display().to_string(), line, message }
            }
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, DataError> {
        let err = |line: usize, message: String| DataError::Manifest { file: "<manifest>".into(), line, message };
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(i + 1, format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(err(i + 1, "empty utterance id".into()));
            }
            let duration_ms: f64 =
                fields[2].trim().parse().map_err(|_| err(i + 1, format!("bad duration {:?}", fields[2])))?;
            if !(duration_ms > 0.0 && duration_ms.is_finite()) {
                return Err(err(i + 1, format!("duration must be positive, got {duration_ms}")));
            }
            if !seen.insert(id.to_string()) {
                return Err(err(i + 1, format!("duplicate utterance id {id:?}")));
            }
            let audio = Path::new(fields[1].trim());
            entries.push(ManifestEntry {
                id: id.to_string(),
                audio: if audio.is_absolute() { audio.to_path_buf() } else { base.join(audio) },
                duration_ms,
                words: fields[3].split_whitespace().map(String::from).collect(),
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\n", e.id, e.audio.display(), e.duration_ms, e.words.join(" ")))
            .collect()
    }
}
