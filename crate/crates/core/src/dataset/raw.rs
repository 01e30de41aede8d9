use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_token, meta_f64, parse_meta_line, DatasetError, Result};

const BIN_MAGIC: &[u8; 8] = b"BIOZRAW1";

/// Acquisition metadata carried alongside the three sample streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub sample_rate_hz: f64,
    pub excitation_freq_hz: f64,
    pub r0_ohm: f64,
    pub subject_id: String,
    pub trial_id: String,
}

impl Default for RecordingMeta {
    fn default() -> Self {
        RecordingMeta {
            sample_rate_hz: 100_000.0,
            excitation_freq_hz: 10_000.0,
            r0_ohm: 10_000.0,
            subject_id: "S00".into(),
            trial_id: "T00".into(),
        }
    }
}

/// Synchronised high-rate excitation voltage (`vs`), sense-resistor voltage
/// (`vr`) and ECG streams.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    vs: Vec<f64>,
    vr: Vec<f64>,
    ecg: Vec<f64>,
    meta: RecordingMeta,
}

impl RawRecording {
    pub fn new(vs: Vec<f64>, vr: Vec<f64>, ecg: Vec<f64>, meta: RecordingMeta) -> Result<Self> {
        if vs.len() != vr.len() || vs.len() != ecg.len() {
            return Err(DatasetError::LengthMismatch {
                vs: vs.len(),
                vr: vr.len(),
                ecg: ecg.len(),
            });
        }
        if vs.is_empty() {
            return Err(DatasetError::InvalidRecording("recording has no samples".into()));
        }
        validate_meta(&meta)?;
        for (name, col) in [("vs", &vs), ("vr", &vr), ("ecg", &ecg)] {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFiniteSample {
                    row: i + 1,
                    column: name.into(),
                });
            }
        }
        Ok(RawRecording { vs, vr, ecg, meta })
    }

    pub fn vs(&self) -> &[f64] {
        &self.vs
    }

    pub fn vr(&self) -> &[f64] {
        &self.vr
    }

    pub fn ecg(&self) -> &[f64] {
        &self.ecg
    }

    pub fn meta(&self) -> &RecordingMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.vs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vs.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.vs.len() as f64 / self.meta.sample_rate_hz
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, Vec<f64>, RecordingMeta) {
        (self.vs, self.vr, self.ecg, self.meta)
    }
}

fn validate_meta(meta: &RecordingMeta) -> Result<()> {
    for (field, v) in [
        ("sample_rate_hz", meta.sample_rate_hz),
        ("excitation_freq_hz", meta.excitation_freq_hz),
        ("r0_ohm", meta.r0_ohm),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(DatasetError::InvalidHeaderField {
                field: field.into(),
                reason: format!("{v} is not a positive finite number"),
            });
        }
    }
    if meta.sample_rate_hz / meta.excitation_freq_hz < 4.0 {
        return Err(DatasetError::InvalidRecording(format!(
            "excitation {} Hz is not resolvable at {} Hz (need at least 4 samples per period)",
            meta.excitation_freq_hz, meta.sample_rate_hz
        )));
    }
    check_token("subject_id", &meta.subject_id)?;
    check_token("trial_id", &meta.trial_id)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawFormat {
    Csv,
    Bin,
}

impl std::str::FromStr for RawFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(RawFormat::Csv),
            "bin" => Ok(RawFormat::Bin),
            other => Err(format!("unknown raw format `{other}` (expected csv or bin)")),
        }
    }
}

/// Loads a raw recording. Sample rows in error messages are 1-based data
/// rows (the first sample after the column header is row 1).
pub fn load_raw(path: impl AsRef<Path>, format: RawFormat) -> Result<RawRecording> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        RawFormat::Csv => read_raw_csv(reader, path),
        RawFormat::Bin => read_raw_bin(reader, path),
    }
}

pub fn save_raw(rec: &RawRecording, path: impl AsRef<Path>, format: RawFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        RawFormat::Csv => write_raw_csv(rec, &mut w).map_err(|e| DatasetError::io(path, e))?,
        RawFormat::Bin => write_raw_bin(rec, &mut w).map_err(|e| DatasetError::io(path, e))?,
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

fn write_raw_csv<W: Write>(rec: &RawRecording, w: &mut W) -> std::io::Result<()> {
    let m = &rec.meta;
    writeln!(
        w,
        "# sample_rate_hz={} excitation_freq_hz={} r0_ohm={} subject_id={} trial_id={} duration_s={}",
        m.sample_rate_hz,
        m.excitation_freq_hz,
        m.r0_ohm,
        m.subject_id,
        m.trial_id,
        rec.duration_s()
    )?;
    writeln!(w, "vs,vr,ecg")?;
    for i in 0..rec.len() {
        writeln!(w, "{},{},{}", rec.vs[i], rec.vr[i], rec.ecg[i])?;
    }
    Ok(())
}

fn read_raw_csv<R: Read>(reader: BufReader<R>, path: &Path) -> Result<RawRecording> {
    let mut reader = reader;
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| DatasetError::io(path, e))?;
    let meta_map = parse_meta_line(&first)?;
    let meta = RecordingMeta {
        sample_rate_hz: meta_f64(&meta_map, "sample_rate_hz")?,
        excitation_freq_hz: meta_f64(&meta_map, "excitation_freq_hz")?,
        r0_ohm: meta_f64(&meta_map, "r0_ohm")?,
        subject_id: meta_map
            .get("subject_id")
            .cloned()
            .unwrap_or_else(|| "unknown".into()),
        trial_id: meta_map
            .get("trial_id")
            .cloned()
            .unwrap_or_else(|| "unknown".into()),
    };
    let declared_duration = match meta_map.get("duration_s") {
        Some(_) => Some(meta_f64(&meta_map, "duration_s")?),
        None => None,
    };

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let expected = ["vs", "vr", "ecg"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(DatasetError::Malformed(format!(
            "expected columns vs,vr,ecg, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }

    let mut cols: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut ended = [false; 3];
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    while csv.read_record(&mut record)? {
        row += 1;
        for (c, name) in expected.iter().enumerate() {
            let field = record.get(c).map(str::trim).unwrap_or("");
            if field.is_empty() {
                ended[c] = true;
                continue;
            }
            if ended[c] {
                return Err(DatasetError::Malformed(format!(
                    "column `{name}` has a gap before row {row}"
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                DatasetError::Malformed(format!("row {row} column `{name}`: `{field}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(DatasetError::NonFiniteSample {
                    row,
                    column: (*name).into(),
                });
            }
            cols[c].push(v);
        }
    }
    let [vs, vr, ecg] = cols;
    let rec = RawRecording::new(vs, vr, ecg, meta)?;
    if let Some(d) = declared_duration {
        if (d - rec.duration_s()).abs() > 1.0 / rec.meta.sample_rate_hz {
            return Err(DatasetError::InvalidRecording(format!(
                "declared duration {d} s disagrees with {} samples at {} Hz",
                rec.len(),
                rec.meta.sample_rate_hz
            )));
        }
    }
    Ok(rec)
}

fn write_raw_bin<W: Write>(rec: &RawRecording, w: &mut W) -> std::io::Result<()> {
    w.write_all(BIN_MAGIC)?;
    w.write_all(&(rec.len() as u64).to_le_bytes())?;
    for v in [rec.meta.sample_rate_hz, rec.meta.excitation_freq_hz, rec.meta.r0_ohm] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in [&rec.meta.subject_id, &rec.meta.trial_id] {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        w.write_all(s.as_bytes())?;
    }
    for col in [&rec.vs, &rec.vr, &rec.ecg] {
        for v in col.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_raw_bin<R: Read>(mut reader: BufReader<R>, path: &Path) -> Result<RawRecording> {
    let io = |e| DatasetError::io(path, e);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(io)?;
    if &magic != BIN_MAGIC {
        return Err(DatasetError::Malformed("not a raw binary recording (bad magic)".into()));
    }
    let mut b8 = [0u8; 8];
    reader.read_exact(&mut b8).map_err(io)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut read_f64 = |r: &mut BufReader<R>| -> Result<f64> {
        r.read_exact(&mut b8).map_err(io)?;
        Ok(f64::from_le_bytes(b8))
    };
    let sample_rate_hz = read_f64(&mut reader)?;
    let excitation_freq_hz = read_f64(&mut reader)?;
    let r0_ohm = read_f64(&mut reader)?;
    let read_str = |r: &mut BufReader<R>| -> Result<String> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut buf).map_err(io)?;
        String::from_utf8(buf).map_err(|e| DatasetError::Malformed(e.to_string()))
    };
    let subject_id = read_str(&mut reader)?;
    let trial_id = read_str(&mut reader)?;

    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != n * 3 * 8 {
        let have = bytes.len() / 8;
        return Err(DatasetError::LengthMismatch {
            vs: have.min(n),
            vr: have.saturating_sub(n).min(n),
            ecg: have.saturating_sub(2 * n),
        });
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let vs: Vec<f64> = values.by_ref().take(n).collect();
    let vr: Vec<f64> = values.by_ref().take(n).collect();
    let ecg: Vec<f64> = values.collect();
    RawRecording::new(
        vs,
        vr,
        ecg,
        RecordingMeta {
            sample_rate_hz,
            excitation_freq_hz,
            r0_ohm,
            subject_id,
            trial_id,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn small() -> RawRecording {
        RawRecording::new(
            vec![0.5, -0.25, 1e-300, 0.0],
            vec![0.1, 0.2, 0.3, -0.4],
            vec![1.0, 2.0, 3.0, 4.0],
            RecordingMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn csv_and_bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = small();
        for fmt in [RawFormat::Csv, RawFormat::Bin] {
            let p = dir.path().join(format!("r.{fmt:?}"));
            save_raw(&rec, &p, fmt).unwrap();
            assert_eq!(load_raw(&p, fmt).unwrap(), rec);
        }
    }

    #[test]
    fn duration_from_header_rate() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("# sample_rate_hz=1000 excitation_freq_hz=100 r0_ohm=10000\nvs,vr,ecg\n");
        for _ in 0..3000 {
            body.push_str("1,0.5,0\n");
        }
        let p = write_file(&dir, "a.csv", &body);
        let rec = load_raw(&p, RawFormat::Csv).unwrap();
        assert_eq!(rec.len(), 3000);
        assert_eq!(rec.duration_s(), 3.0);
    }

    #[test]
    fn short_vr_column_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let body = "# sample_rate_hz=1000 excitation_freq_hz=100 r0_ohm=10000\nvs,vr,ecg\n1,1,1\n2,2,2\n3,,3\n";
        let p = write_file(&dir, "b.csv", body);
        match load_raw(&p, RawFormat::Csv) {
            Err(DatasetError::LengthMismatch { vs, vr, ecg }) => {
                assert_eq!((vs, vr, ecg), (3, 2, 3));
            }
            other => panic!("expected LengthMismatch, got {other:?}"),
        }
    }

    #[test]
    fn nan_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("# sample_rate_hz=1000 excitation_freq_hz=100 r0_ohm=10000\nvs,vr,ecg\n");
        for row in 1..=10 {
            if row == 7 {
                body.push_str("NaN,1,1\n");
            } else {
                body.push_str("1,1,1\n");
            }
        }
        let p = write_file(&dir, "c.csv", &body);
        match load_raw(&p, RawFormat::Csv) {
            Err(DatasetError::NonFiniteSample { row, column }) => {
                assert_eq!(row, 7);
                assert_eq!(column, "vs");
            }
            other => panic!("expected NonFiniteSample, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "# sample_rate_hz=1000 r0_ohm=1\nvs,vr,ecg\n1,1,1\n");
        assert!(matches!(
            load_raw(&p, RawFormat::Csv),
            Err(DatasetError::MissingHeaderField(f)) if f == "excitation_freq_hz"
        ));
    }

    #[test]
    fn unresolvable_excitation_rejected() {
        let meta = RecordingMeta {
            sample_rate_hz: 1000.0,
            excitation_freq_hz: 300.0,
            ..RecordingMeta::default()
        };
        assert!(RawRecording::new(vec![1.0], vec![1.0], vec![1.0], meta).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_raw("/nonexistent/nowhere.csv", RawFormat::Csv),
            Err(DatasetError::Io { .. })
        ));
    }
}
