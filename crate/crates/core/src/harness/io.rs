//! File formats: the sensor CSV and the frame JSON-lines stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruction::{SolveResult, StateFrame};
use crate::sensor::SensorFrame;
use crate::topology::{Coords, NODE_COUNT, TENDON_COUNT};

/// `t_ms,r00,...,r23`
pub fn sensor_csv_header() -> Vec<String> {
    std::iter::once("t_ms".to_string())
        .chain((0..TENDON_COUNT).map(|k| format!("r{k:02}")))
        .collect()
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

/// Reads sensor frames. Accepts `\n` or `\r\n` line endings and a trailing
/// newline; every rejection names its 1-based line.
pub fn parse_sensor_csv<R: Read>(input: R) -> Result<Vec<SensorFrame>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_error(1, "missing header")),
        Some(r) => r.map_err(|e| parse_error(1, e.to_string()))?,
    };
    let expected = sensor_csv_header();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_error(
            1,
            format!("header must be `{}`", expected.join(",")),
        ));
    }
    let mut frames: Vec<SensorFrame> = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != TENDON_COUNT + 1 {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", TENDON_COUNT + 1, record.len()),
            ));
        }
        let mut values = [0.0; TENDON_COUNT + 1];
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_error(line, format!("column {}: `{cell}` is not a number", expected[i])))?;
            if !v.is_finite() {
                return Err(parse_error(line, format!("column {}: non-finite value", expected[i])));
            }
            values[i] = v;
        }
        let t_ms = values[0];
        if let Some(prev) = frames.last() {
            if !(t_ms > prev.t_ms) {
                return Err(parse_error(
                    line,
                    format!("timestamp {t_ms} ms does not follow {} ms", prev.t_ms),
                ));
            }
        }
        frames.push(SensorFrame::new(t_ms, std::array::from_fn(|k| values[k + 1])));
    }
    Ok(frames)
}

pub fn read_sensor_csv(path: impl AsRef<Path>) -> Result<Vec<SensorFrame>> {
    parse_sensor_csv(BufReader::new(File::open(path)?))
}

/// Shortest round-trip decimal for every value, so a re-parse is exact.
pub fn write_sensor_csv<W: Write>(frames: &[SensorFrame], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sensor_csv_header())
        .map_err(|e| Error::Io(e.into()))?;
    for f in frames {
        let row = std::iter::once(f.t_ms)
            .chain(f.resistances.iter().copied())
            .map(|v| v.to_string());
        w.write_record(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_sensor_csv(frames: &[SensorFrame], path: impl AsRef<Path>) -> Result<()> {
    write_sensor_csv(frames, BufWriter::new(File::create(path)?))
}

/// One line of a frames file. Ground-truth files leave the solver fields out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_norm: Option<f64>,
    pub coords_m: [[f64; 3]; NODE_COUNT],
    /// Set when the frame could not be solved; coords then repeat the last good state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn to_rows(c: &Coords) -> [[f64; 3]; NODE_COUNT] {
    std::array::from_fn(|n| [c[n].x, c[n].y, c[n].z])
}

impl FrameRecord {
    pub fn truth(s: &StateFrame) -> Self {
        Self {
            t_ms: s.t_ms,
            converged: None,
            iters: None,
            residual_norm: None,
            coords_m: to_rows(&s.coords),
            error: None,
        }
    }

    pub fn failed(t_ms: f64, last_good: &StateFrame, err: &Error) -> Self {
        Self {
            t_ms,
            converged: Some(false),
            iters: Some(0),
            residual_norm: None,
            coords_m: to_rows(&last_good.coords),
            error: Some(err.to_string()),
        }
    }

    pub fn state(&self) -> StateFrame {
        StateFrame {
            t_ms: self.t_ms,
            coords: std::array::from_fn(|n| self.coords_m[n].into()),
        }
    }
}

impl From<&SolveResult> for FrameRecord {
    fn from(r: &SolveResult) -> Self {
        Self {
            t_ms: r.state.t_ms,
            converged: Some(r.converged),
            iters: Some(r.iterations),
            residual_norm: Some(r.residual_norm),
            coords_m: to_rows(&r.state.coords),
            error: None,
        }
    }
}

pub const FRAMES_HEADER: &str =
    "# tenserecon frames v1: one JSON object per line; t_ms, converged, iters, residual_norm, coords_m (12 nodes, meters)";

/// Header comment line, then one JSON object per frame.
pub fn write_frames<W: Write>(records: &[FrameRecord], mut out: W) -> Result<()> {
    writeln!(out, "{FRAMES_HEADER}")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_frames(records: &[FrameRecord], path: impl AsRef<Path>) -> Result<()> {
    write_frames(records, BufWriter::new(File::create(path)?))
}

/// Skips `#` comments and blank lines.
pub fn parse_frames<R: BufRead>(input: R) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let r: FrameRecord = serde_json::from_str(trimmed).map_err(|e| parse_error(i as u64 + 1, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    parse_frames(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_canonical;

    fn csv_row(t: f64, r: f64) -> String {
        std::iter::once(t.to_string())
            .chain(std::iter::repeat_n(r.to_string(), TENDON_COUNT))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn header() -> String {
        sensor_csv_header().join(",")
    }

    #[test]
    fn two_rows() {
        let text = format!("{}\n{}\n{}\n", header(), csv_row(0.0, 5.8e6), csv_row(100.0, 5.9e6));
        let f = parse_sensor_csv(text.as_bytes()).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].t_ms, 100.0);
        assert_eq!(f[1].resistances, [5.9e6; TENDON_COUNT]);
    }

    #[test]
    fn crlf_and_scientific_notation() {
        let row = format!("0,{}", vec!["5.8e6"; TENDON_COUNT].join(","));
        let text = format!("{}\r\n{}\r\n", header(), row);
        let f = parse_sensor_csv(text.as_bytes()).unwrap();
        assert_eq!(f[0].resistances[23], 5_800_000.0);
    }

    #[test]
    fn short_row_names_its_line() {
        let mut row = csv_row(0.0, 1.0);
        row.truncate(row.rfind(',').unwrap());
        let text = format!("{}\n{}\n", header(), row);
        match parse_sensor_csv(text.as_bytes()) {
            Err(Error::Parse { line: 2, message }) => assert!(message.contains("found 24")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cells_and_order() {
        let nan = csv_row(0.0, 1.0).replacen(",1,", ",NaN,", 1);
        let text = format!("{}\n{}\n{}\n", header(), csv_row(0.0, 1.0), nan.replacen('0', "5", 1));
        assert!(matches!(parse_sensor_csv(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = format!("{}\n{}\n{}\n", header(), csv_row(10.0, 1.0), csv_row(10.0, 1.0));
        assert!(matches!(parse_sensor_csv(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = format!("{}\n{}\n", header(), csv_row(0.0, 1.0).replacen(",1", ",abc", 1));
        assert!(matches!(parse_sensor_csv(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn header_is_required() {
        assert!(matches!(parse_sensor_csv(&b""[..]), Err(Error::Parse { line: 1, .. })));
        let text = format!("{}\n", csv_row(0.0, 1.0));
        assert!(matches!(parse_sensor_csv(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let frames: Vec<_> = (0..5)
            .map(|i| {
                SensorFrame::new(
                    i as f64 * 100.0 + 0.1,
                    std::array::from_fn(|k| 5.8e6 * (1.0 + 0.1 * (k as f64 + i as f64).sin()) / 3.0),
                )
            })
            .collect();
        let mut buf = Vec::new();
        write_sensor_csv(&frames, &mut buf).unwrap();
        assert_eq!(parse_sensor_csv(buf.as_slice()).unwrap(), frames);
    }

    #[test]
    fn frames_round_trip_and_header() {
        let t = build_canonical(0.3).unwrap();
        let mut s = StateFrame::nominal(&t, 12.5);
        s.coords[7].x += 1.0 / 3.0;
        let records = vec![FrameRecord::truth(&s)];
        let mut buf = Vec::new();
        write_frames(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with('#'));
        assert!(!text.lines().nth(1).unwrap().contains("converged"));
        let back = parse_frames(buf.as_slice()).unwrap();
        assert_eq!(back[0].state(), s);

        let mut empty = Vec::new();
        write_frames(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{FRAMES_HEADER}\n"));
    }

    #[test]
    fn frame_parse_errors_name_the_line() {
        let text = format!("{FRAMES_HEADER}\n{{\"t_ms\": 1}}\n");
        assert!(matches!(parse_frames(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
