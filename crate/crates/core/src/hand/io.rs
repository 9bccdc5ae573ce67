//! Line-oriented dataset files: one JSON object per sample.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::dataset::PoseSample;
use super::skeleton::{Handedness, DOF, NUM_JOINTS};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    index: usize,
    handedness: String,
    labeled: bool,
    joints3d: Vec<f64>,
    joints2d: Vec<f64>,
    angles: Vec<f64>,
}

fn push_array(line: &mut String, values: impl Iterator<Item = f64>) {
    line.push('[');
    for (i, v) in values.enumerate() {
        if i > 0 {
            line.push(',');
        }
        // 17 significant digits.
        write!(line, "{v:.16e}").unwrap();
    }
    line.push(']');
}

pub fn format_record(s: &PoseSample) -> String {
    let mut line = String::with_capacity(4096);
    write!(
        line,
        "{{\"index\":{},\"handedness\":\"{}\",\"labeled\":{},\"joints3d\":",
        s.index,
        s.handedness.code(),
        s.labeled
    )
    .unwrap();
    push_array(&mut line, s.joints3d.iter().flatten().copied());
    line.push_str(",\"joints2d\":");
    push_array(&mut line, s.joints2d.iter().flatten().copied());
    line.push_str(",\"angles\":");
    push_array(&mut line, s.angles.iter().copied());
    line.push('}');
    line
}

pub fn parse_record(line: &str) -> Result<PoseSample> {
    let r: Record = serde_json::from_str(line).map_err(|e| Error::Format(format!("bad record: {e}")))?;
    let arity = |name: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(Error::Format(format!("record {}: {name} has {got} values, expected {want}", r.index)))
        }
    };
    arity("joints3d", r.joints3d.len(), 3 * NUM_JOINTS)?;
    arity("joints2d", r.joints2d.len(), 2 * NUM_JOINTS)?;
    arity("angles", r.angles.len(), DOF)?;
    let handedness = Handedness::from_code(&r.handedness)
        .ok_or_else(|| Error::Format(format!("record {}: handedness {:?}", r.index, r.handedness)))?;
    Ok(PoseSample {
        index: r.index,
        angles: r.angles,
        joints3d: r.joints3d.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        joints2d: r.joints2d.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        handedness,
        labeled: r.labeled,
    })
}

pub fn write_dataset(path: &Path, samples: &[PoseSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        writeln!(w, "{}", format_record(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<PoseSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}
