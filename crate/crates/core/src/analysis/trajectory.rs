use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{fertility, fertility_histogram, morph_boundary_prf, segment_corpus, GoldMorphology, SegmentedCorpus, SubwordStats};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::AnyModel;

/// Where a segmentation comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentationSource {
    /// A model checkpoint directory, segmented with the best lattice path.
    Checkpoint(PathBuf),
    /// A pipe-format file produced elsewhere.
    PipeFile(PathBuf),
}

impl SegmentationSource {
    /// Directories are checkpoints; files are pipe-format corpora.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if path.is_file() {
            SegmentationSource::PipeFile(path)
        } else {
            SegmentationSource::Checkpoint(path)
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            SegmentationSource::Checkpoint(p) | SegmentationSource::PipeFile(p) => p,
        }
    }

    /// Short name used in reports.
    pub fn label(&self) -> String {
        let p = self.path();
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    }

    pub fn segment(&self, eval: &[Document]) -> Result<SegmentedCorpus> {
        let label = self.label();
        match self {
            SegmentationSource::PipeFile(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                SegmentedCorpus::from_pipe_text(label, &text)
            }
            SegmentationSource::Checkpoint(dir) => match AnyModel::load(dir)?.0 {
                AnyModel::F32(m) => segment_corpus(&m, eval, label),
                AnyModel::F64(m) => segment_corpus(&m, eval, label),
            },
        }
    }
}

/// Metrics of one segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMetrics {
    pub fertility: f64,
    pub mean_productivity: f64,
    pub mean_idiosyncrasy: f64,
    pub morph_p: f64,
    pub morph_r: f64,
    pub morph_f1: f64,
    pub histogram: BTreeMap<usize, usize>,
}

impl SegmentationMetrics {
    pub fn compute(seg: &SegmentedCorpus, gold: &GoldMorphology) -> Result<Self> {
        let (mean_productivity, mean_idiosyncrasy) = SubwordStats::compute(seg).type_means()?;
        let morph = morph_boundary_prf(seg, gold)?;
        Ok(SegmentationMetrics {
            fertility: fertility(seg)?,
            mean_productivity,
            mean_idiosyncrasy,
            morph_p: morph.precision,
            morph_r: morph.recall,
            morph_f1: morph.f1,
            histogram: fertility_histogram(seg),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub checkpoint: String,
    /// The error message when the source could not be analysed.
    pub result: std::result::Result<SegmentationMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub rows: Vec<TrajectoryRow>,
}

pub const TRAJECTORY_HEADER: &str = "checkpoint,fertility,mean_productivity,mean_idiosyncrasy,morph_p,morph_r,morph_f1";
pub const HISTOGRAM_HEADER: &str = "checkpoint,subwords_per_word,count";

impl TrajectoryReport {
    /// Failed rows are written with `NaN` in every metric column.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAJECTORY_HEADER}\n");
        for row in &self.rows {
            let values = match &row.result {
                Ok(m) => [m.fertility, m.mean_productivity, m.mean_idiosyncrasy, m.morph_p, m.morph_r, m.morph_f1],
                Err(_) => [f64::NAN; 6],
            };
            let cols: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{}", row.checkpoint, cols.join(",")).unwrap();
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = format!("{HISTOGRAM_HEADER}\n");
        for row in &self.rows {
            if let Ok(m) = &row.result {
                for (k, n) in &m.histogram {
                    writeln!(out, "{},{k},{n}", row.checkpoint).unwrap();
                }
            }
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }
}

/// Segments `eval` with every source in order and computes its metrics. A
/// source that cannot be loaded or analysed yields a failed row.
pub fn build_trajectory(sources: &[SegmentationSource], eval: &[Document], gold: &GoldMorphology) -> TrajectoryReport {
    let rows = sources
        .iter()
        .map(|src| {
            let result = src
                .segment(eval)
                .and_then(|seg| SegmentationMetrics::compute(&seg, gold))
                .map_err(|e| {
                    log::warn!("{}: {e}", src.path().display());
                    e.to_string()
                });
            TrajectoryRow {
                checkpoint: src.label(),
                result,
            }
        })
        .collect();
    TrajectoryReport { rows }
}
