//! Detector outcome records and the `#gbs-counts v1` text format.
//!
//! ```text
//! #gbs-counts v1 detector=threshold modes=4 cmax=1
//! 0110
//! 1000
//! ```
//!
//! PNR records are comma-separated decimal counts.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{GbsError, Result};
use crate::rng::{stream, StreamPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Threshold,
    Pnr,
}

impl Detector {
    pub fn as_str(&self) -> &'static str {
        match self {
            Detector::Threshold => "threshold",
            Detector::Pnr => "pnr",
        }
    }
}

impl FromStr for Detector {
    type Err = GbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Detector::Threshold),
            "pnr" => Ok(Detector::Pnr),
            other => Err(GbsError::Parse(format!("unknown detector type '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sampler,
    Experiment,
    Oracle,
}

/// `N` outcome records over `M` modes, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountDataset {
    detector: Detector,
    modes: usize,
    c_max: u8,
    data: Vec<u8>,
    pub provenance: Provenance,
}

impl CountDataset {
    /// `c_max` is forced to 1 for threshold detectors.
    pub fn new(detector: Detector, modes: usize, c_max: u8, data: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if modes == 0 {
            return Err(GbsError::Config("dataset has zero modes".into()));
        }
        if data.len() % modes != 0 {
            return Err(GbsError::Dimension(format!(
                "{} entries do not form records of width {modes}",
                data.len()
            )));
        }
        let c_max = match detector {
            Detector::Threshold => 1,
            Detector::Pnr => c_max,
        };
        if let Some(pos) = data.iter().position(|&c| c > c_max) {
            return Err(GbsError::Validation(format!(
                "record {} mode {} has count {} above the maximum {c_max}",
                pos / modes,
                pos % modes,
                data[pos]
            )));
        }
        Ok(CountDataset { detector, modes, c_max, data, provenance })
    }

    pub fn from_records(detector: Detector, modes: usize, c_max: u8, records: &[Vec<u8>], provenance: Provenance) -> Result<Self> {
        if let Some(i) = records.iter().position(|r| r.len() != modes) {
            return Err(GbsError::Dimension(format!("record {i} has width {} not {modes}", records[i].len())));
        }
        Self::new(detector, modes, c_max, records.concat(), provenance)
    }

    pub fn detector(&self) -> Detector {
        self.detector
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn c_max(&self) -> u8 {
        self.c_max
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn record(&self, i: usize) -> &[u8] {
        &self.data[i * self.modes..(i + 1) * self.modes]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.data.chunks_exact(self.modes)
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    /// Uniformly chosen records, without replacement, in their original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<CountDataset> {
        if n > self.len() {
            return Err(GbsError::Config(format!("cannot draw {n} records from {}", self.len())));
        }
        let mut rng = stream(seed, StreamPurpose::Subsampling);
        let mut idx = sample_indices(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        let mut data = Vec::with_capacity(n * self.modes);
        for i in idx {
            data.extend_from_slice(self.record(i));
        }
        Ok(CountDataset { data, ..self.clone() })
    }

    pub fn header(&self) -> String {
        format!(
            "#gbs-counts v1 detector={} modes={} cmax={}",
            self.detector.as_str(),
            self.modes,
            self.c_max
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header())?;
        let mut line = String::with_capacity(self.modes * 3);
        for rec in self.records() {
            line.clear();
            match self.detector {
                Detector::Threshold => line.extend(rec.iter().map(|&c| if c == 0 { '0' } else { '1' })),
                Detector::Pnr => {
                    for (j, c) in rec.iter().enumerate() {
                        if j > 0 {
                            line.push(',');
                        }
                        let _ = write!(line, "{c}");
                    }
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R, provenance: Provenance) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| GbsError::Parse("empty dataset file".into()))??;
        let (detector, modes, c_max) = parse_header(&header)?;
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            match detector {
                Detector::Threshold => {
                    for ch in line.chars() {
                        match ch {
                            '0' => data.push(0),
                            '1' => data.push(1),
                            _ => return Err(GbsError::Parse(format!("record {lineno}: invalid click character '{ch}'"))),
                        }
                    }
                }
                Detector::Pnr => {
                    for field in line.split(',') {
                        let v: u8 = field
                            .trim()
                            .parse()
                            .map_err(|_| GbsError::Parse(format!("record {lineno}: invalid count '{field}'")))?;
                        data.push(v);
                    }
                }
            }
            if data.len() - before != modes {
                return Err(GbsError::Dimension(format!(
                    "record {lineno} has width {} but the header declares {modes} modes",
                    data.len() - before
                )));
            }
        }
        Self::new(detector, modes, c_max, data, provenance)
    }

    pub fn read_file(path: &Path, provenance: Provenance) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?, provenance)
    }
}

fn parse_header(line: &str) -> Result<(Detector, usize, u8)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("#gbs-counts") || parts.next() != Some("v1") {
        return Err(GbsError::Parse(format!("bad dataset header '{line}'")));
    }
    let (mut detector, mut modes, mut c_max) = (None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| GbsError::Parse(format!("bad header field '{kv}'")))?;
        match k {
            "detector" => detector = Some(v.parse::<Detector>()?),
            "modes" => modes = Some(v.parse::<usize>().map_err(|e| GbsError::Parse(e.to_string()))?),
            "cmax" => c_max = Some(v.parse::<u8>().map_err(|e| GbsError::Parse(e.to_string()))?),
            _ => return Err(GbsError::Parse(format!("unknown header field '{k}'"))),
        }
    }
    match (detector, modes, c_max) {
        (Some(d), Some(m), Some(c)) => Ok((d, m, c)),
        _ => Err(GbsError::Parse(format!("incomplete dataset header '{line}'"))),
    }
}
