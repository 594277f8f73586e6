//! Executable trackers: a template-matching siamese tracker with local,
//! global and hybrid search, and a MOSSE correlation-filter tracker.
//!
//! The a-priori similarity function is normalized cross-correlation on
//! grayscale patches, so every search returns maps bounded in `[-1, 1]`.

mod fft;
mod mosse;
mod ncc;
mod siamese;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Grid};

pub use fft::{fft2, good_size};
pub use rustfft::num_complex::Complex64;
pub use mosse::{correlate_frequency, mosse_init, mosse_step, MosseConfig, MosseState};
pub use ncc::{ncc_map, ncc_map_direct, ncc_map_fft, Template};
pub use siamese::{
    global_search, global_search_traced, hybrid_step, local_search, ncc_similarity, siamese_init,
    template_update, GlobalTrace, SiameseConfig, SiameseState,
};

/// Similarity scores over a grid of candidate placements.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub values: Grid,
    /// Frame coordinates of the placement at cell (0, 0) (template top-left).
    pub origin: (f64, f64),
    /// Frame pixels per cell along x and y.
    pub stride: (f64, f64),
    /// Search scale relative to the reference box.
    pub scale: f64,
}

impl SimilarityMap {
    pub fn max(&self) -> f64 {
        self.values.max()
    }

    /// Frame position of a cell.
    pub fn cell_to_frame(&self, u: usize, v: usize) -> (f64, f64) {
        (
            self.origin.0 + u as f64 * self.stride.0,
            self.origin.1 + v as f64 * self.stride.1,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Local,
    Global,
}

impl SearchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchKind::Local => "local",
            SearchKind::Global => "global",
        }
    }
}

impl fmt::Display for SearchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tracker output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Reported box; absent when the tracker declares the target gone.
    pub bbox: BBox,
    /// Best located box, kept even when `bbox` is reported absent.
    pub candidate: BBox,
    pub score: f64,
    pub kind: SearchKind,
    /// The winning similarity map (`None` when nothing could be searched).
    pub map: Option<SimilarityMap>,
}

impl Prediction {
    pub(crate) fn lost(kind: SearchKind) -> Self {
        Self {
            bbox: BBox::absent(),
            candidate: BBox::absent(),
            score: f64::NEG_INFINITY,
            kind,
            map: None,
        }
    }
}

const PREDICTION_HEADER: [&str; 8] = ["frame", "x", "y", "w", "h", "present", "score", "search_kind"];

/// Writes `frame,x,y,w,h,present,score,search_kind` with 1-based frames.
pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(PREDICTION_HEADER).map_err(|e| Error::csv(path, e))?;
    for (i, p) in preds.iter().enumerate() {
        let b = if p.bbox.present { p.bbox } else { BBox::absent() };
        w.write_record(&[
            (i + 1).to_string(),
            b.x.to_string(),
            b.y.to_string(),
            b.w.to_string(),
            b.h.to_string(),
            u8::from(b.present).to_string(),
            p.score.to_string(),
            p.kind.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a prediction stream; maps are not stored and come back as `None`.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != PREDICTION_HEADER {
        return Err(Error::parse(path, 1, format!("expected header {}", PREDICTION_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.len() != 8 {
            return Err(Error::parse(path, line, format!("expected 8 fields, got {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad number {:?}", &rec[k])))
        };
        if num(0)? != (out.len() + 1) as f64 {
            return Err(Error::parse(path, line, format!("expected frame {}", out.len() + 1)));
        }
        let bbox = match rec[5].trim() {
            "1" => {
                let b = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?);
                b.validate().map_err(|e| Error::parse(path, line, e.to_string()))?;
                b
            }
            "0" => BBox::absent(),
            other => return Err(Error::parse(path, line, format!("bad present flag {other:?}"))),
        };
        let kind = match rec[7].trim() {
            "local" => SearchKind::Local,
            "global" => SearchKind::Global,
            other => return Err(Error::parse(path, line, format!("bad search kind {other:?}"))),
        };
        out.push(Prediction {
            bbox,
            candidate: bbox,
            score: num(6)?,
            kind,
            map: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let preds = vec![
            Prediction {
                bbox: BBox::new(1.5, 2.25, 16.0, 12.0),
                candidate: BBox::new(1.5, 2.25, 16.0, 12.0),
                score: 0.8125,
                kind: SearchKind::Local,
                map: None,
            },
            Prediction::lost(SearchKind::Global),
        ];
        write_predictions(&path, &preds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame,x,y,w,h,present,score,search_kind\n"));
        assert!(text.contains("2,0,0,0,0,0,-inf,global"));
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }

    #[test]
    fn bad_kind_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "frame,x,y,w,h,present,score,search_kind\n1,0,0,4,4,1,0.5,local\n2,0,0,4,4,1,0.5,sideways\n",
        )
        .unwrap();
        match read_predictions(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
