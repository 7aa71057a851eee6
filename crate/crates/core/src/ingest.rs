//! PMU CSV ingest, channel derivation and coarse-graining.
//!
//! Wire format (UTF-8, one header line):
//!
//! ```text
//! timestamp_iso8601,voltage_mag_v,voltage_angle_deg,current_mag_a,current_angle_deg,frequency_hz
//! 2024-01-01T00:00:00Z,132790.5,12.0,350.2,3.4,60.001
//! ```

use std::io::BufRead;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "timestamp_iso8601,voltage_mag_v,voltage_angle_deg,current_mag_a,current_angle_deg,frequency_hz";

/// Number of modeled channels.
pub const CHANNEL_COUNT: usize = 4;

/// Short channel names in modeling order.
pub const CHANNELS: [&str; CHANNEL_COUNT] = ["V", "I", "sin", "F"];

/// One raw PMU report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmuSample {
    pub timestamp: DateTime<Utc>,
    pub voltage_mag: f64,
    pub voltage_angle: f64,
    pub current_mag: f64,
    pub current_angle: f64,
    pub frequency: f64,
}

/// The modeling vector `[V, I, sin(Vangle - Iangle), F]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelVector {
    pub timestamp: DateTime<Utc>,
    pub values: [f64; CHANNEL_COUNT],
}

impl ChannelVector {
    pub fn new(timestamp: DateTime<Utc>, values: [f64; CHANNEL_COUNT]) -> Self {
        Self { timestamp, values }
    }
}

impl AsRef<[f64]> for ChannelVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn normalize_angle(deg: f64) -> f64 {
    if (-180.0..180.0).contains(&deg) {
        return deg;
    }
    let wrapped = (deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

impl PmuSample {
    fn validate(&self) -> std::result::Result<(), String> {
        let fields = [
            self.voltage_mag,
            self.voltage_angle,
            self.current_mag,
            self.current_angle,
            self.frequency,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.voltage_mag < 0.0 {
            return Err(format!("negative voltage magnitude {}", self.voltage_mag));
        }
        if self.current_mag < 0.0 {
            return Err(format!("negative current magnitude {}", self.current_mag));
        }
        if self.frequency <= 0.0 {
            return Err(format!("non-positive frequency {}", self.frequency));
        }
        Ok(())
    }

    /// Renders the sample as one CSV data line (no trailing newline).
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            self.voltage_mag,
            self.voltage_angle,
            self.current_mag,
            self.current_angle,
            self.frequency
        )
    }
}

/// Sequential reader over a PMU CSV stream.
///
/// Yields samples in file order. The first malformed row ends the stream with
/// an error carrying its 1-based row number (header excluded).
pub struct CsvReader<R> {
    lines: std::io::Lines<R>,
    row: usize,
    header_checked: bool,
    last: Option<DateTime<Utc>>,
    failed: bool,
}

impl<R: BufRead> CsvReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            row: 0,
            header_checked: false,
            last: None,
            failed: false,
        }
    }

    fn check_header(&mut self) -> Result<bool> {
        match self.lines.next() {
            None => Err(Error::Format("missing header line".into())),
            Some(Err(e)) => Err(Error::Format(format!("unreadable header: {e}"))),
            Some(Ok(line)) => {
                let line = line.trim_start_matches('\u{feff}').trim_end();
                if line != CSV_HEADER {
                    return Err(Error::Format(format!(
                        "unexpected header `{line}`, expected `{CSV_HEADER}`"
                    )));
                }
                Ok(true)
            }
        }
    }

    fn parse_row(&self, line: &str) -> Result<PmuSample> {
        let row = self.row;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::Row {
                row,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let timestamp = DateTime::parse_from_rfc3339(fields[0])
            .map_err(|e| Error::Row {
                row,
                message: format!("bad timestamp `{}`: {e}", fields[0]),
            })?
            .with_timezone(&Utc);
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| Error::Row {
                row,
                message: format!("bad {name} `{}`", fields[i]),
            })
        };
        let sample = PmuSample {
            timestamp,
            voltage_mag: num(1, "voltage_mag_v")?,
            voltage_angle: normalize_angle(num(2, "voltage_angle_deg")?),
            current_mag: num(3, "current_mag_a")?,
            current_angle: normalize_angle(num(4, "current_angle_deg")?),
            frequency: num(5, "frequency_hz")?,
        };
        sample
            .validate()
            .map_err(|message| Error::Row { row, message })?;
        Ok(sample)
    }
}

impl<R: BufRead> Iterator for CsvReader<R> {
    type Item = Result<PmuSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.header_checked {
            self.header_checked = true;
            if let Err(e) = self.check_header() {
                self.failed = true;
                return Some(Err(e));
            }
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::Row {
                        row: self.row + 1,
                        message: format!("read error: {e}"),
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            self.row += 1;
            let result = self.parse_row(&line).and_then(|sample| {
                if let Some(prev) = self.last {
                    if sample.timestamp <= prev {
                        return Err(Error::Ordering {
                            row: self.row,
                            timestamp: sample.timestamp.to_rfc3339(),
                        });
                    }
                }
                Ok(sample)
            });
            match &result {
                Ok(s) => self.last = Some(s.timestamp),
                Err(_) => self.failed = true,
            }
            return Some(result);
        }
    }
}

/// Parses a complete CSV stream.
pub fn parse_csv_stream<R: BufRead>(reader: R) -> Result<Vec<PmuSample>> {
    CsvReader::new(reader).collect()
}

/// Serializes samples in the wire format, header included.
pub fn write_csv<W: std::io::Write>(mut out: W, samples: &[PmuSample]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(out, "{}", s.to_csv_row())?;
    }
    Ok(())
}

/// Maps a raw sample to the modeling vector.
pub fn derive_channels(sample: &PmuSample) -> ChannelVector {
    let diff = (sample.voltage_angle - sample.current_angle).to_radians();
    ChannelVector {
        timestamp: sample.timestamp,
        values: [
            sample.voltage_mag,
            sample.current_mag,
            diff.sin(),
            sample.frequency,
        ],
    }
}

/// Number of input samples per output point, `input_rate * resolution`,
/// which must be a positive integer.
pub fn block_size(input_rate_hz: f64, resolution_s: f64) -> Result<usize> {
    let raw = input_rate_hz * resolution_s;
    let rounded = raw.round();
    if !raw.is_finite() || rounded < 1.0 || (raw - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::Config(format!(
            "{input_rate_hz} Hz x {resolution_s} s is not a positive integer block size"
        )));
    }
    Ok(rounded as usize)
}

/// Block-averages a series down to `resolution_s`. Trailing partial blocks are
/// discarded; each output carries the timestamp of its block's first sample.
pub fn coarse_grain(
    series: &[ChannelVector],
    input_rate_hz: f64,
    resolution_s: f64,
) -> Result<Vec<ChannelVector>> {
    let block = block_size(input_rate_hz, resolution_s)?;
    Ok(series.chunks_exact(block).map(block_mean).collect())
}

fn block_mean(chunk: &[ChannelVector]) -> ChannelVector {
    let mut values = [0.0; CHANNEL_COUNT];
    for v in chunk {
        for (acc, x) in values.iter_mut().zip(v.values) {
            *acc += x;
        }
    }
    let n = chunk.len() as f64;
    values.iter_mut().for_each(|acc| *acc /= n);
    ChannelVector {
        timestamp: chunk[0].timestamp,
        values,
    }
}

/// Incremental form of [`coarse_grain`] for streaming ingest.
#[derive(Debug, Clone)]
pub struct BlockAverager {
    block: usize,
    pending: Vec<ChannelVector>,
}

impl BlockAverager {
    pub fn new(input_rate_hz: f64, resolution_s: f64) -> Result<Self> {
        let block = block_size(input_rate_hz, resolution_s)?;
        Ok(Self {
            block,
            pending: Vec::with_capacity(block),
        })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    /// Feeds one sample; returns the block mean when a block completes.
    pub fn push(&mut self, v: ChannelVector) -> Option<ChannelVector> {
        self.pending.push(v);
        if self.pending.len() == self.block {
            let out = block_mean(&self.pending);
            self.pending.clear();
            Some(out)
        } else {
            None
        }
    }
}
