//! Line-delimited JSON stroke files, one sample per line:
//!
//! ```text
//! {"id":"s0001","label":"A","granularity":"char","strokes":[[[x,y],...],...]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::{Granularity, Point2, Stroke, StrokeSample};

#[derive(Serialize, Deserialize)]
struct StrokeRecord {
    id: String,
    label: String,
    granularity: Granularity,
    strokes: Vec<Vec<[f64; 2]>>,
}

impl From<&StrokeSample> for StrokeRecord {
    fn from(s: &StrokeSample) -> Self {
        Self {
            id: s.id.clone(),
            label: s.label.clone(),
            granularity: s.granularity,
            strokes: s
                .strokes
                .iter()
                .map(|st| st.points.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
        }
    }
}

impl TryFrom<StrokeRecord> for StrokeSample {
    type Error = Error;

    fn try_from(r: StrokeRecord) -> Result<Self> {
        let sample = StrokeSample {
            id: r.id,
            label: r.label,
            granularity: r.granularity,
            strokes: r
                .strokes
                .into_iter()
                .map(|st| Stroke::new(st.into_iter().map(|[x, y]| Point2::new(x, y)).collect()))
                .collect(),
        };
        sample.validate()?;
        Ok(sample)
    }
}

pub fn sample_to_line(sample: &StrokeSample) -> Result<String> {
    Ok(serde_json::to_string(&StrokeRecord::from(sample))?)
}

pub fn sample_from_line(line: &str) -> Result<StrokeSample> {
    let record: StrokeRecord = serde_json::from_str(line)?;
    StrokeSample::try_from(record)
}

pub fn write_samples<W: Write>(mut w: W, samples: &[StrokeSample]) -> Result<()> {
    for s in samples {
        writeln!(w, "{}", sample_to_line(s)?)?;
    }
    Ok(())
}

pub fn read_samples<R: Read>(r: R) -> Result<Vec<StrokeSample>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = sample_from_line(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn save_samples(path: &Path, samples: &[StrokeSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<StrokeSample>> {
    read_samples(open(path)?)
}

/// Opens a file, naming the path in the error.
pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
