//! On-disk formats. Text files open with a `# <format>/<version>` line;
//! the record file is a little-endian binary layout.
//!
//! Record file:
//!
//! ```text
//! file header   "MTRECORD" | u32 version | f64 sampling_rate_hz | u32 n_channels | u32 n_samples
//! per record    "MTWR" | u64 record_id | u8 trigger_channel | u32 trigger_index
//!               | u64 start_sample | u64 t0_seconds | u64 t0_nanoseconds
//!               | n_channels × n_samples f32 (channel-major)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coincidence::{DelayHistogram, RateReport, Table};
use crate::daq::WaveformRecord;
use crate::error::{Error, Result};
use crate::geometry::{DetectorId, Vec3};
use crate::pulse::{NoisePsd, Pulse};
use crate::sources::{Primary, Species};
use crate::transport::{EnergyDeposit, SimEvent};

pub const EVENTS_FORMAT: &str = "muontag-events/1";
pub const PULSES_FORMAT: &str = "muontag-pulses/1";
pub const HISTOGRAM_FORMAT: &str = "muontag-delays/1";
pub const PSD_FORMAT: &str = "muontag-psd/1";
pub const TABLE_FORMAT: &str = "muontag-table/1";

pub const RECORD_MAGIC: &[u8; 8] = b"MTRECORD";
pub const RECORD_VERSION: u32 = 1;
const RECORD_TAG: &[u8; 4] = b"MTWR";

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn write_format_line(w: &mut impl Write, format: &str, path: &Path) -> Result<()> {
    writeln!(w, "# {format}").map_err(|e| Error::io(path, e))
}

/// Reads the `# format` line and checks it.
fn expect_format_line(r: &mut impl BufRead, format: &str, path: &Path) -> Result<()> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let found = line.trim_end().strip_prefix("# ").unwrap_or("");
    if found == format {
        return Ok(());
    }
    let (name, _) = format.split_once('/').unwrap_or((format, ""));
    if found.starts_with(&format!("{name}/")) {
        Err(Error::Schema(format!("{}: expected {format}, found {found}", path.display())))
    } else {
        Err(Error::format(path, format!("missing '# {format}' header")))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn write_csv<T: Serialize>(path: &Path, format: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    write_format_line(&mut w, format, path)?;
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    csv.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<T>> {
    let mut r = open(path)?;
    expect_format_line(&mut r, format, path)?;
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    event_id: u64,
    species: Species,
    t_s: f64,
    top_kev: Option<f64>,
    center_kev: Option<f64>,
    bottom_kev: Option<f64>,
    energy_mev: f64,
    x: f64,
    y: f64,
    z: f64,
    dx: f64,
    dy: f64,
    dz: f64,
}

/// Events as CSV: id, species, time, per-detector deposits (empty when
/// absent), then the primary's energy, origin and direction.
pub fn write_events(path: &Path, events: &[SimEvent]) -> Result<()> {
    write_csv(
        path,
        EVENTS_FORMAT,
        events.iter().map(|e| {
            let p = &e.primary;
            EventRow {
                event_id: e.event_id,
                species: p.species,
                t_s: p.time_s,
                top_kev: e.deposit(DetectorId::Top),
                center_kev: e.deposit(DetectorId::Center),
                bottom_kev: e.deposit(DetectorId::Bottom),
                energy_mev: p.energy_mev,
                x: p.origin.x,
                y: p.origin.y,
                z: p.origin.z,
                dx: p.direction.x,
                dy: p.direction.y,
                dz: p.direction.z,
            }
        }),
    )
}

pub fn read_events(path: &Path) -> Result<Vec<SimEvent>> {
    let rows: Vec<EventRow> = read_csv(path, EVENTS_FORMAT)?;
    rows.into_iter()
        .map(|r| {
            let deposits: Vec<EnergyDeposit> = [(DetectorId::Top, r.top_kev), (DetectorId::Center, r.center_kev), (DetectorId::Bottom, r.bottom_kev)]
                .into_iter()
                .filter_map(|(detector, e)| {
                    e.map(|energy_kev| EnergyDeposit {
                        detector,
                        energy_kev,
                        time_s: r.t_s,
                    })
                })
                .collect();
            if deposits.iter().any(|d| !(d.energy_kev > 0.0)) {
                return Err(Error::format(path, format!("event {} has a non-positive deposit", r.event_id)));
            }
            Ok(SimEvent {
                event_id: r.event_id,
                primary: Primary {
                    species: r.species,
                    energy_mev: r.energy_mev,
                    origin: Vec3::new(r.x, r.y, r.z),
                    direction: Vec3::new(r.dx, r.dy, r.dz),
                    time_s: r.t_s,
                },
                deposits,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = open(path)?;
    serde_json::from_reader(r).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a rate report and checks its format tag.
pub fn read_report(path: &Path) -> Result<RateReport> {
    let value: serde_json::Value = read_json(path)?;
    let format = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
    if format != crate::coincidence::REPORT_FORMAT {
        return Err(Error::Schema(format!(
            "{}: expected {}, found '{format}'",
            path.display(),
            crate::coincidence::REPORT_FORMAT
        )));
    }
    serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))
}

/// Streaming writer for the binary record file.
pub struct RecordWriter<W: Write> {
    inner: W,
    n_channels: usize,
    n_samples: usize,
    written: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut inner: W, sampling_rate_hz: f64, n_channels: usize, n_samples: usize) -> std::io::Result<RecordWriter<W>> {
        inner.write_all(RECORD_MAGIC)?;
        inner.write_all(&RECORD_VERSION.to_le_bytes())?;
        inner.write_all(&sampling_rate_hz.to_le_bytes())?;
        inner.write_all(&(n_channels as u32).to_le_bytes())?;
        inner.write_all(&(n_samples as u32).to_le_bytes())?;
        Ok(RecordWriter {
            inner,
            n_channels,
            n_samples,
            written: 0,
        })
    }

    pub fn write(&mut self, r: &WaveformRecord) -> std::io::Result<()> {
        if r.channels.len() != self.n_channels || r.channels.iter().any(|c| c.len() != self.n_samples) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "record shape differs from file header"));
        }
        let t0 = r.start_sample as f64 / r.sampling_rate_hz;
        let secs = t0.floor();
        let nanos = ((t0 - secs) * 1e9).round().min(999_999_999.0);
        let w = &mut self.inner;
        w.write_all(RECORD_TAG)?;
        w.write_all(&r.record_id.to_le_bytes())?;
        w.write_all(&[r.trigger_channel.index() as u8])?;
        w.write_all(&r.trigger_index.to_le_bytes())?;
        w.write_all(&r.start_sample.to_le_bytes())?;
        w.write_all(&(secs as u64).to_le_bytes())?;
        w.write_all(&(nanos as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.n_samples);
        for ch in &r.channels {
            buf.clear();
            for x in ch {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordFileHeader {
    pub version: u32,
    pub sampling_rate_hz: f64,
    pub n_channels: usize,
    pub n_samples: usize,
}

/// Iterates over the records of a record file.
pub struct RecordReader<R: Read> {
    inner: R,
    pub header: RecordFileHeader,
    path: std::path::PathBuf,
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        RecordReader::new(open(path)?, path)
    }
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut inner: R, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason.to_string());
        let mut head = [0u8; 28];
        match read_exact_or(&mut inner, &mut head) {
            Ok(true) => {}
            Ok(false) | Err(_) => return Err(bad("truncated record file header")),
        }
        if &head[..8] != RECORD_MAGIC {
            return Err(bad("bad magic, not a muontag record file"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != RECORD_VERSION {
            return Err(Error::Schema(format!(
                "{}: record file version {version}, expected {RECORD_VERSION}",
                path.display()
            )));
        }
        let header = RecordFileHeader {
            version,
            sampling_rate_hz: f64::from_le_bytes(head[12..20].try_into().unwrap()),
            n_channels: u32_at(20) as usize,
            n_samples: u32_at(24) as usize,
        };
        if !(header.sampling_rate_hz > 0.0) || header.n_channels != 3 || header.n_samples == 0 {
            return Err(bad("implausible record file header"));
        }
        Ok(RecordReader {
            inner,
            header,
            path: path.to_path_buf(),
        })
    }

    fn read_one(&mut self) -> Result<Option<WaveformRecord>> {
        let path = self.path.clone();
        let io = |e: std::io::Error| Error::format(&path, format!("truncated record: {e}"));
        let mut head = [0u8; 4 + 8 + 1 + 4 + 8 + 8 + 8];
        if !read_exact_or(&mut self.inner, &mut head).map_err(io)? {
            return Ok(None);
        }
        if &head[..4] != RECORD_TAG {
            return Err(Error::format(&path, "record tag missing"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(head[i..i + 8].try_into().unwrap());
        let record_id = u64_at(4);
        let trigger_channel = DetectorId::from_index(head[12] as usize).ok_or_else(|| Error::format(&path, "bad trigger channel"))?;
        let trigger_index = u32::from_le_bytes(head[13..17].try_into().unwrap());
        let start_sample = u64_at(17);
        let (secs, nanos) = (u64_at(25), u64_at(33));
        let expected = (start_sample as f64 / self.header.sampling_rate_hz * 1e9).round();
        if ((secs as f64) * 1e9 + nanos as f64 - expected).abs() > 1.0 {
            return Err(Error::format(&path, format!("record {record_id}: t0 disagrees with start sample")));
        }
        let mut bytes = vec![0u8; 4 * self.header.n_samples];
        let mut channels = Vec::with_capacity(self.header.n_channels);
        for _ in 0..self.header.n_channels {
            self.inner.read_exact(&mut bytes).map_err(io)?;
            channels.push(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect());
        }
        Ok(Some(WaveformRecord {
            record_id,
            trigger_channel,
            trigger_index,
            start_sample,
            sampling_rate_hz: self.header.sampling_rate_hz,
            channels,
        }))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<WaveformRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_one().transpose()
    }
}

/// One record as CSV, a column per channel, for inspection.
pub fn write_record_csv(path: &Path, record: &WaveformRecord) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "# muontag-record-csv/1 record_id={} t0_s={}", record.record_id, record.t0_s()).map_err(io)?;
    writeln!(w, "sample,time_s,top,center,bottom").map_err(io)?;
    for i in 0..record.n_samples() {
        let t = (record.start_sample + i as u64) as f64 / record.sampling_rate_hz;
        writeln!(w, "{i},{t},{},{},{}", record.channels[0][i], record.channels[1][i], record.channels[2][i]).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_pulses(path: &Path, pulses: &[Pulse]) -> Result<()> {
    write_csv(path, PULSES_FORMAT, pulses)
}

pub fn read_pulses(path: &Path) -> Result<Vec<Pulse>> {
    read_csv(path, PULSES_FORMAT)
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramRow {
    bin_low_us: f64,
    bin_high_us: f64,
    counts: u64,
}

pub fn write_histogram(path: &Path, hist: &DelayHistogram) -> Result<()> {
    let edges = hist.bin_edges();
    write_csv(
        path,
        HISTOGRAM_FORMAT,
        hist.counts.iter().enumerate().map(|(i, &counts)| HistogramRow {
            bin_low_us: edges[i],
            bin_high_us: edges[i + 1],
            counts,
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct PsdRow {
    frequency_hz: f64,
    top: f64,
    center: f64,
    bottom: f64,
}

/// Per-channel PSDs on a shared grid.
pub fn write_psd(path: &Path, psd: &[NoisePsd; 3]) -> Result<()> {
    write_csv(
        path,
        PSD_FORMAT,
        (0..psd[0].psd.len()).map(|k| PsdRow {
            frequency_hz: psd[0].frequency(k),
            top: psd[0].psd[k],
            center: psd[1].psd[k],
            bottom: psd[2].psd[k],
        }),
    )
}

/// A table as CSV: `row`, then `<column>` and `<column>_err` pairs.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut w = create(path)?;
    write_format_line(&mut w, TABLE_FORMAT, path)?;
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["row".to_string()];
    for c in &table.columns {
        header.push(c.to_string());
        header.push(format!("{c}_err"));
    }
    csv.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in &table.rows {
        let mut fields = vec![row.label.to_string()];
        for cell in &row.cells {
            fields.push(cell.value.to_string());
            fields.push(cell.error.to_string());
        }
        csv.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    csv.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::CoincidenceWindow;

    fn event(id: u64, t: f64, kev: [Option<f64>; 3]) -> SimEvent {
        SimEvent {
            event_id: id,
            primary: Primary {
                species: [Species::Muon, Species::Gamma][(id % 2) as usize],
                energy_mev: 1.0 / 3.0,
                origin: Vec3::new(0.1, -2.0 / 7.0, 8.0),
                direction: Vec3::new(0.0, 0.6, -0.8),
                time_s: t,
            },
            deposits: DetectorId::ALL
                .iter()
                .zip(kev)
                .filter_map(|(&detector, e)| e.map(|energy_kev| EnergyDeposit { detector, energy_kev, time_s: t }))
                .collect(),
        }
    }

    #[test]
    fn events_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let events = vec![
            event(0, 0.1 + 0.2, [Some(152.123456789), None, Some(1e-3)]),
            event(1, 1234.5678901234, [None, Some(2.0 / 3.0), None]),
        ];
        write_events(&path, &events).unwrap();
        assert_eq!(read_events(&path).unwrap(), events);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# muontag-events/1\nevent_id,species,t_s,top_kev,center_kev,bottom_kev,"));
        write_events(&path, &[]).unwrap();
        assert!(read_events(&path).unwrap().is_empty());
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "event_id,species\n").unwrap();
        assert!(matches!(read_events(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "# muontag-events/9\n").unwrap();
        assert!(matches!(read_events(&path), Err(Error::Schema(_))));
    }

    fn record(id: u64, start: u64) -> WaveformRecord {
        WaveformRecord {
            record_id: id,
            trigger_channel: DetectorId::Bottom,
            trigger_index: 600,
            start_sample: start,
            sampling_rate_hz: 1e5,
            channels: (0..3).map(|c| (0..16).map(|i| (i * c) as f32 * 0.25 - 1.0).collect()).collect(),
        }
    }

    #[test]
    fn records_round_trip() {
        let mut w = RecordWriter::new(Vec::new(), 1e5, 3, 16).unwrap();
        let recs = vec![record(0, 123_456_789), record(1, 360_000_000_000)];
        for r in &recs {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let reader = RecordReader::new(bytes.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(reader.header.n_samples, 16);
        let back: Vec<WaveformRecord> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, recs);
        assert!((back[0].t0_s() - 1234.56789).abs() < 1e-9);
    }

    #[test]
    fn corrupt_record_file_rejected() {
        let mut w = RecordWriter::new(Vec::new(), 1e5, 3, 16).unwrap();
        w.write(&record(0, 10)).unwrap();
        let bytes = w.finish().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RecordReader::new(bad.as_slice(), Path::new("m")), Err(Error::Format { .. })));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(RecordReader::new(v2.as_slice(), Path::new("m")), Err(Error::Schema(_))));
        let truncated = &bytes[..bytes.len() - 5];
        let mut reader = RecordReader::new(truncated, Path::new("m")).unwrap();
        assert!(matches!(reader.next(), Some(Err(Error::Format { .. }))));
        assert!(RecordReader::new(&bytes[..10], Path::new("m")).is_err());
        let mut w = RecordWriter::new(Vec::new(), 1e5, 3, 8).unwrap();
        assert!(w.write(&record(0, 0)).is_err());
    }

    #[test]
    fn pulses_and_histogram_files() {
        let dir = tempfile::tempdir().unwrap();
        let pulses = vec![Pulse {
            record_id: 3,
            channel: DetectorId::Center,
            t0_s: 0.5,
            peak_time_us: 6127.25,
            amplitude: 40.125,
            baseline_rms: 0.24,
        }];
        let p = dir.path().join("pulses.csv");
        write_pulses(&p, &pulses).unwrap();
        assert_eq!(read_pulses(&p).unwrap(), pulses);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("record_id,channel,t0_s,peak_time_us,amplitude,baseline_rms\n3,center,"));

        let mut h = DelayHistogram::new(20.0, 40.0);
        h.fill(-5.0);
        h.fill(25.0);
        let hp = dir.path().join("delays.csv");
        write_histogram(&hp, &h).unwrap();
        let text = std::fs::read_to_string(&hp).unwrap();
        assert_eq!(
            text,
            "# muontag-delays/1\nbin_low_us,bin_high_us,counts\n-40.0,-20.0,0\n-20.0,0.0,1\n0.0,20.0,0\n20.0,40.0,1\n"
        );
        assert_eq!(h.count_in(&CoincidenceWindow { center_us: 0.0, half_width_us: 10.0 }), 1);
    }
}
