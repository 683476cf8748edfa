use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pose::{load_pose, save_pose, PoseFormat, PoseSequence};
use super::synthetic::SyntheticSpec;
use super::vocab::{tokenize, VocabKind, Vocabulary};
use crate::error::{Result, SignError};

/// One aligned (sentence, gloss, pose) example.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub sentence: Vec<String>,
    pub gloss: Vec<String>,
    pub pose: PoseSequence,
}

impl CorpusSample {
    /// CTC needs at least one frame per gloss.
    pub fn is_ctc_feasible(&self) -> bool {
        self.gloss.len() <= self.pose.len()
    }

    pub fn source(&self, kind: SourceKind) -> &[String] {
        match kind {
            SourceKind::Text => &self.sentence,
            SourceKind::Gloss => &self.gloss,
        }
    }
}

/// Which token stream feeds a pose generator: spoken-language text (T2P) or
/// glosses (G2P).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Text,
    Gloss,
}

impl SourceKind {
    pub fn arm_name(self) -> &'static str {
        match self {
            SourceKind::Text => "T2P",
            SourceKind::Gloss => "G2P",
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = SignError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "t2p" => Ok(SourceKind::Text),
            "gloss" | "g2p" => Ok(SourceKind::Gloss),
            other => Err(SignError::invalid("source", format!("`{other}` is neither text nor gloss"))),
        }
    }
}

/// Source of corpus samples by id; a real dataset loader plugs in here.
pub trait DatasetAdapter {
    fn ids(&self) -> Vec<String>;
    fn load(&self, id: &str) -> Result<CorpusSample>;

    fn load_all(&self) -> Result<Vec<CorpusSample>> {
        self.ids().iter().map(|id| self.load(id)).collect()
    }
}

/// Word vocabulary over sentences (spoken-language side).
pub fn word_vocabulary(corpus: &[CorpusSample]) -> Vocabulary {
    Vocabulary::build(VocabKind::Word, corpus.iter().flat_map(|s| s.sentence.iter().map(String::as_str)))
}

/// Gloss vocabulary with the CTC blank.
pub fn gloss_vocabulary(corpus: &[CorpusSample]) -> Vocabulary {
    Vocabulary::build(VocabKind::Gloss, corpus.iter().flat_map(|s| s.gloss.iter().map(String::as_str)))
}

/// Word-style vocabulary (with PAD/BOS/EOS/UNK) over the chosen source stream.
pub fn source_vocabulary(corpus: &[CorpusSample], kind: SourceKind) -> Vocabulary {
    Vocabulary::build(VocabKind::Word, corpus.iter().flat_map(|s| s.source(kind).iter().map(String::as_str)))
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPEC_FILE: &str = "corpus_spec.json";

#[derive(Clone, Debug, PartialEq)]
struct ManifestRow {
    id: String,
    sentence: String,
    gloss: String,
    pose_path: PathBuf,
}

/// Corpus stored as `manifest.tsv` lines `id<TAB>sentence<TAB>gloss<TAB>pose-path`
/// with pose paths relative to the manifest directory.
#[derive(Clone, Debug)]
pub struct ManifestDataset {
    root: PathBuf,
    rows: Vec<ManifestRow>,
}

impl ManifestDataset {
    /// Opens a corpus directory or a manifest file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&manifest).map_err(|e| SignError::io(&manifest, e))?;
        let mut rows = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(SignError::Parse {
                    offset: start,
                    message: format!("manifest line has {} fields, expected 4", fields.len()),
                });
            }
            rows.push(ManifestRow {
                id: fields[0].to_owned(),
                sentence: fields[1].to_owned(),
                gloss: fields[2].to_owned(),
                pose_path: PathBuf::from(fields[3]),
            });
        }
        Ok(ManifestDataset { root, rows })
    }

    /// `(id, sentence tokens)` without touching pose files.
    pub fn references(&self) -> Vec<(String, Vec<String>)> {
        self.rows.iter().map(|r| (r.id.clone(), tokenize(&r.sentence))).collect()
    }

    pub fn pose_path(&self, id: &str) -> Option<PathBuf> {
        self.rows.iter().find(|r| r.id == id).map(|r| self.root.join(&r.pose_path))
    }
}

impl DatasetAdapter for ManifestDataset {
    fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    fn load(&self, id: &str) -> Result<CorpusSample> {
        let row = self
            .rows
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| SignError::invalid("id", format!("no sample `{id}` in manifest")))?;
        Ok(CorpusSample {
            id: row.id.clone(),
            sentence: tokenize(&row.sentence),
            gloss: row.gloss.split_whitespace().map(str::to_owned).collect(),
            pose: load_pose(self.root.join(&row.pose_path))?,
        })
    }
}

/// Writes a corpus directory: manifest, one pose file per sample, and the
/// generating spec when there is one.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    samples: &[CorpusSample],
    spec: Option<&SyntheticSpec>,
    format: PoseFormat,
) -> Result<()> {
    let dir = dir.as_ref();
    let poses = dir.join("poses");
    fs::create_dir_all(&poses).map_err(|e| SignError::io(&poses, e))?;
    let mut manifest = String::new();
    for s in samples {
        let rel = format!("poses/{}.pose", s.id);
        save_pose(dir.join(&rel), &s.pose, format)?;
        manifest.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, s.sentence.join(" "), s.gloss.join(" "), rel));
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| SignError::io(&mpath, e))?;
    if let Some(spec) = spec {
        let spath = dir.join(SPEC_FILE);
        let json = serde_json::to_string_pretty(spec).expect("spec serialises");
        fs::write(&spath, json + "\n").map_err(|e| SignError::io(&spath, e))?;
    }
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusSample>> {
    ManifestDataset::open(path)?.load_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::generate_synthetic_corpus;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::default();
        let corpus = generate_synthetic_corpus(&spec, 5).unwrap();
        write_corpus(dir.path(), &corpus, Some(&spec), PoseFormat::Text).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.lines().next().unwrap().split('\t').count(), 4);
        assert!(dir.path().join(SPEC_FILE).exists());
    }

    #[test]
    fn malformed_manifest_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "a\tb\tc\n").unwrap();
        assert!(matches!(ManifestDataset::open(dir.path()), Err(SignError::Parse { offset: 0, .. })));
    }

    #[test]
    fn vocabularies_cover_corpus() {
        let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 30).unwrap();
        let words = word_vocabulary(&corpus);
        let glosses = gloss_vocabulary(&corpus);
        for s in &corpus {
            assert_eq!(words.decode(&words.encode(&s.sentence).unwrap()), s.sentence);
            assert!(glosses.encode(&s.gloss).is_ok());
        }
        assert_eq!(words.len() - 4, glosses.len() - 1);
    }
}
