use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::matching::{Instability, StabilityEntry, StabilityRecord};
use crate::scene::Point;

pub const LOSS_HEADER: &str = "epoch,step,l_cls,l_loc,l_point,l_apg_pos,l_apg_neg,l_apg,l_overall";
pub const STABILITY_HEADER: &str = "epoch,image_id,gt_index,proposal_id,x,y";
pub const IR_HEADER: &str = "epoch,ir,avg_delta";

/// Append-only CSV with a fixed header. Floats use the shortest
/// round-trip representation, so identical values give identical bytes.
pub(crate) struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    pub(crate) fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        log.line(header)?;
        Ok(log)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn loss(&mut self, epoch: usize, step: usize, b: &LossBreakdown) -> Result<()> {
        let mut row = format!("{epoch},{step}");
        for (_, v) in b.fields() {
            row.push_str(&format!(",{v:?}"));
        }
        self.line(&row)
    }

    pub(crate) fn stability(&mut self, record: &StabilityRecord) -> Result<()> {
        for e in &record.entries {
            let row = format!(
                "{},{},{},{},{:?},{:?}",
                record.epoch, e.image_id, e.gt_index, e.proposal, e.position.x, e.position.y
            );
            self.line(&row)?;
        }
        Ok(())
    }

    pub(crate) fn ir(&mut self, epoch: usize, v: &Instability) -> Result<()> {
        self.line(&format!("{epoch},{:?},{:?}", v.ir, v.avg_delta))
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Csv(e),
    })?;
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got.join(",") != header {
        return Err(parse_err(path, 1, format!("expected header `{header}`")));
    }
    r.records().map(|rec| rec.map_err(Error::from)).collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, line, format!("bad `{name}`")))
}

/// Reads `stability.csv` back into one record per epoch, in file order.
pub fn read_stability_csv(path: &Path) -> Result<Vec<StabilityRecord>> {
    let mut out: Vec<StabilityRecord> = Vec::new();
    for (i, rec) in read_rows(path, STABILITY_HEADER)?.iter().enumerate() {
        let line = i + 2;
        let epoch: usize = field(path, line, rec, 0, "epoch")?;
        let entry = StabilityEntry {
            image_id: rec.get(1).unwrap_or_default().to_string(),
            gt_index: field(path, line, rec, 2, "gt_index")?,
            proposal: field(path, line, rec, 3, "proposal_id")?,
            position: Point::new(field(path, line, rec, 4, "x")?, field(path, line, rec, 5, "y")?),
        };
        match out.last_mut() {
            Some(r) if r.epoch == epoch => r.entries.push(entry),
            _ => {
                if out.iter().any(|r| r.epoch == epoch) {
                    return Err(parse_err(path, line, format!("epoch {epoch} is not contiguous")));
                }
                out.push(StabilityRecord {
                    epoch,
                    entries: vec![entry],
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrRow {
    pub epoch: usize,
    pub ir: f64,
    pub avg_delta: f64,
}

pub fn read_ir_csv(path: &Path) -> Result<Vec<IrRow>> {
    read_rows(path, IR_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(IrRow {
                epoch: field(path, i + 2, rec, 0, "epoch")?,
                ir: field(path, i + 2, rec, 1, "ir")?,
                avg_delta: field(path, i + 2, rec, 2, "avg_delta")?,
            })
        })
        .collect()
}
