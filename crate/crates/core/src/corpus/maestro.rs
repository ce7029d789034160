use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::midi::{self, GridSpec, NoteEvent};
use crate::{Error, Result};

/// One performance from a MAESTRO-style note table.
#[derive(Clone, Debug, PartialEq)]
pub struct MaestroPiece {
    pub id: String,
    pub split: Option<String>,
    pub notes: Vec<NoteEvent>,
}

const REQUIRED: [&str; 5] = ["piece_id", "onset_sec", "offset_sec", "pitch", "velocity"];

pub fn load_maestro(path: &Path) -> Result<Vec<MaestroPiece>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_maestro(f, &path.display().to_string())
}

/// Parse a delimited note table with header
/// `piece_id, split, onset_sec, offset_sec, pitch, velocity` (`split`
/// optional). Pieces keep first-appearance order; notes are sorted by onset.
pub fn parse_maestro<R: Read>(reader: R, label: &str) -> Result<Vec<MaestroPiece>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{label}: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| col(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("{label}: missing columns {}", missing.join(", "))));
    }
    let idx: Vec<usize> = REQUIRED.iter().map(|c| col(c).unwrap()).collect();
    let split_col = col("split");

    let mut order: Vec<MaestroPiece> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: label.into(),
                line,
                msg: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse {
            path: label.into(),
            line,
            msg,
        };
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| perr(format!("bad {} value {:?}", REQUIRED[i], field(i))))
        };
        let int = |i: usize| -> Result<u8> {
            field(i)
                .parse::<u8>()
                .ok()
                .filter(|&v| v <= 127)
                .ok_or_else(|| perr(format!("bad {} value {:?}", REQUIRED[i], field(i))))
        };
        let note = NoteEvent::new(num(1)?, num(2)?, int(3)?, int(4)?).map_err(|e| perr(e.to_string()))?;
        let id = field(0).to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(MaestroPiece {
                id,
                split: split_col.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()).map(String::from),
                notes: Vec::new(),
            });
            order.len() - 1
        });
        order[slot].notes.push(note);
    }
    for p in &mut order {
        p.notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    }
    Ok(order)
}

/// Tokenize pieces (optionally only one split) and concatenate them in
/// order. Long silences split a piece into separate segments.
pub fn maestro_stream(pieces: &[MaestroPiece], grid: &GridSpec, split: Option<&str>) -> Vec<u32> {
    let mut out = Vec::new();
    for p in pieces {
        if split.is_some() && p.split.as_deref() != split {
            continue;
        }
        for seg in midi::encode_segments(&p.notes, grid) {
            out.extend(seg);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_row_fixture() {
        let t = "piece_id,split,onset_sec,offset_sec,pitch,velocity\n\
                 a,train,0.5,0.75,62,70\n\
                 a,train,0.0,0.25,60,64\n";
        let pieces = parse_maestro(t.as_bytes(), "fixture").unwrap();
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].notes.len(), 2);
        assert_eq!(pieces[0].notes[0].pitch, 60);
        assert_eq!(pieces[0].split.as_deref(), Some("train"));
        let s = maestro_stream(&pieces, &GridSpec::default(), Some("train"));
        assert_eq!(midi::validate_grammar(&s), Ok(()));
        assert!(maestro_stream(&pieces, &GridSpec::default(), Some("test")).is_empty());
    }

    #[test]
    fn bad_rows_report_line() {
        let t = "piece_id,split,onset_sec,offset_sec,pitch,velocity\n\
                 a,train,0.0,0.25,60,64\n\
                 a,train,1.0,0.5,60,64\n";
        match parse_maestro(t.as_bytes(), "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let t = "piece_id,onset_sec,pitch\nx,0,1\n";
        assert!(matches!(parse_maestro(t.as_bytes(), "f"), Err(Error::Schema(_))));
        let t = "piece_id,onset_sec,offset_sec,pitch,velocity\nx,0,1,200,3\n";
        assert!(matches!(parse_maestro(t.as_bytes(), "f"), Err(Error::Parse { line: 2, .. })));
    }
}
