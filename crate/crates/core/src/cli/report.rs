//! Structured text report of a back-translation run.

use std::fmt;

use crate::error::{Result, SignError};
use crate::metrics::{corpus_bleu, BleuReport};

/// One evaluated pose file.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub reference: Vec<String>,
    pub predicted: Vec<String>,
}

/// Header (config echo), one line per sample, then a summary block.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub config: Vec<(String, String)>,
    pub rows: Vec<EvalRow>,
    pub bleu: BleuReport,
    /// Mean normalised DTW against reference poses, when those were available.
    pub mean_dtw: Option<f64>,
}

impl EvalReport {
    /// Scores `rows` with corpus BLEU; ids must be unique.
    pub fn new(config: Vec<(String, String)>, rows: Vec<EvalRow>, mean_dtw: Option<f64>) -> Result<Self> {
        let mut ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SignError::invalid("id", format!("sample `{}` evaluated twice", w[0])));
        }
        let cands: Vec<Vec<String>> = rows.iter().map(|r| r.predicted.clone()).collect();
        let refs: Vec<Vec<String>> = rows.iter().map(|r| r.reference.clone()).collect();
        let bleu = corpus_bleu(&cands, &refs)?;
        Ok(EvalReport {
            config,
            rows,
            bleu,
            mean_dtw,
        })
    }
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[header]")?;
        for (k, v) in &self.config {
            writeln!(f, "{}\t{}", clean(k), clean(v))?;
        }
        writeln!(f, "samples\t{}", self.rows.len())?;
        writeln!(f)?;
        writeln!(f, "[samples]")?;
        writeln!(f, "id\treference\tpredicted")?;
        for r in &self.rows {
            writeln!(
                f,
                "{}\t{}\t{}",
                clean(&r.id),
                clean(&r.reference.join(" ")),
                clean(&r.predicted.join(" "))
            )?;
        }
        writeln!(f)?;
        writeln!(f, "[summary]")?;
        writeln!(f, "{}", self.bleu)?;
        match self.mean_dtw {
            Some(d) => writeln!(f, "mean_dtw\t{d:.6}"),
            None => writeln!(f, "mean_dtw\tn/a"),
        }
    }
}
