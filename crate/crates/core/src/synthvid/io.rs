//! Sequence directories: `frames/%06d.pgm` (binary 8-bit P5, 1-based),
//! `annotations.csv` (`frame,x,y,w,h,present`) and `meta.json`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};
use serde::{Deserialize, Serialize};

use super::generate::quantize;
use super::{ChallengeTag, Sequence};
use crate::error::{Error, Result};
use crate::geom::{BBox, Frame};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    tags: Vec<ChallengeTag>,
    seed: u64,
    width: usize,
    height: usize,
    repetition_boundaries: Vec<usize>,
}

pub fn write_sequence(s: &Sequence, dir: &Path) -> Result<()> {
    if s.frames.len() != s.truth.len() {
        return Err(Error::Data(format!(
            "sequence has {} frames but {} truth boxes",
            s.frames.len(),
            s.truth.len()
        )));
    }
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    for (i, f) in s.frames.iter().enumerate() {
        let path = frame_path(dir, i + 1);
        let bytes = frame_bytes(f).ok_or_else(|| {
            Error::Data(format!("frame {} is not on the 8-bit intensity grid", i + 1))
        })?;
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        PnmEncoder::new(BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, f.width() as u32, f.height() as u32, ExtendedColorType::L8)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }

    let ann_path = dir.join("annotations.csv");
    let mut w = csv::Writer::from_path(&ann_path).map_err(|e| csv_error(&ann_path, e))?;
    w.write_record(["frame", "x", "y", "w", "h", "present"])
        .map_err(|e| csv_error(&ann_path, e))?;
    for (i, b) in s.truth.iter().enumerate() {
        let b = if b.present { *b } else { BBox::absent() };
        w.write_record(&[
            (i + 1).to_string(),
            b.x.to_string(),
            b.y.to_string(),
            b.w.to_string(),
            b.h.to_string(),
            u8::from(b.present).to_string(),
        ])
        .map_err(|e| csv_error(&ann_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&ann_path, e))?;

    let meta = Meta {
        tags: s.tags.iter().copied().collect(),
        seed: s.seed,
        width: s.width(),
        height: s.height(),
        repetition_boundaries: s.repetition_boundaries.clone(),
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;

    let truth = read_annotations(&dir.join("annotations.csv"))?;

    let frames_dir = dir.join("frames");
    let count = fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "pgm"))
        .count();
    if count != truth.len() {
        return Err(Error::Data(format!(
            "{}: {count} frame files but {} annotation rows",
            dir.display(),
            truth.len()
        )));
    }

    let mut frames = Vec::with_capacity(count);
    for i in 1..=count {
        let path = frame_path(dir, i);
        let frame = read_pgm(&path)?;
        if frame.width() != meta.width || frame.height() != meta.height {
            return Err(Error::Data(format!(
                "{}: {}x{} frame in a {}x{} sequence",
                path.display(),
                frame.width(),
                frame.height(),
                meta.width,
                meta.height
            )));
        }
        frames.push(Arc::new(frame));
    }

    Ok(Sequence {
        frames,
        truth,
        tags: meta.tags.into_iter().collect::<BTreeSet<_>>(),
        seed: meta.seed,
        repetition_boundaries: meta.repetition_boundaries,
    })
}

fn frame_path(dir: &Path, number: usize) -> PathBuf {
    dir.join("frames").join(format!("{number:06}.pgm"))
}

fn frame_bytes(f: &Frame) -> Option<Vec<u8>> {
    f.pixels()
        .iter()
        .map(|&v| (quantize(v) == v).then(|| (v * 255.0).round() as u8))
        .collect()
}

fn read_pgm(path: &Path) -> Result<Frame> {
    let data_err = |e: image::ImageError| Error::Data(format!("{}: {e}", path.display()));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = PnmDecoder::new(BufReader::new(file)).map_err(data_err)?;
    if dec.color_type() != image::ColorType::L8 {
        return Err(Error::Data(format!(
            "{}: expected 8-bit greyscale, got {:?}",
            path.display(),
            dec.color_type()
        )));
    }
    let (w, h) = dec.dimensions();
    let mut buf = vec![0u8; dec.total_bytes() as usize];
    dec.read_image(&mut buf).map_err(data_err)?;
    Frame::new(
        w as usize,
        h as usize,
        buf.into_iter().map(|b| b as f64 / 255.0).collect(),
    )
}

fn read_annotations(path: &Path) -> Result<Vec<BBox>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame", "x", "y", "w", "h", "present"] {
        return Err(parse_error(path, 1, "expected header frame,x,y,w,h,present"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(path, line, &e.to_string()))?;
        if rec.len() != 6 {
            return Err(parse_error(path, line, &format!("expected 6 fields, got {}", rec.len())));
        }
        let frame: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, "bad frame number"))?;
        if frame != out.len() + 1 {
            return Err(parse_error(
                path,
                line,
                &format!("expected frame {}, got {frame}", out.len() + 1),
            ));
        }
        let mut c = [0.0; 4];
        for (k, v) in c.iter_mut().enumerate() {
            *v = rec[k + 1]
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line, &format!("bad number {:?}", &rec[k + 1])))?;
        }
        let present = match rec[5].trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_error(path, line, &format!("bad present flag {other:?}"))),
        };
        if present {
            let b = BBox::from_coords(c);
            b.validate().map_err(|e| parse_error(path, line, &e.to_string()))?;
            out.push(b);
        } else {
            out.push(BBox::absent());
        }
    }
    Ok(out)
}

fn parse_error(path: &Path, line: usize, message: &str) -> Error {
    Error::parse(path, line, message)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::csv(path, e)
}
