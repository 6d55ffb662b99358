//! Cold-chain sensor dumps: parsing, compliance evaluation and sealing.
//!
//! A dump is a small CSV profile exported from a temperature logger:
//!
//! ```text
//! biotrak-sensor,v1,<sensor_id>
//! <unix_ts>,<temp_c>
//! ...
//! ```
//!
//! Every line, including the last, is terminated by a single LF. Temperatures
//! carry exactly one fractional digit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{DecodeError, Reader, Writer};
use crate::digest::Digest;
use crate::tx::LotCode;

pub const DUMP_MAGIC: &str = "biotrak-sensor";
pub const DUMP_VERSION: &str = "v1";
/// Largest accepted canonical series encoding.
pub const MAX_SEALED_BYTES: usize = 1024 * 1024;
/// Physical bounds in tenths of a degree.
pub const MIN_TENTHS: i32 = -1000;
pub const MAX_TENTHS: i32 = 1500;

/// A temperature in tenths of a degree Celsius.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Temperature(pub i32);

impl Temperature {
    pub fn from_tenths(t: i32) -> Self {
        Temperature(t)
    }

    pub fn tenths(self) -> i32 {
        self.0
    }

    pub fn celsius(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    pub fn in_physical_bounds(self) -> bool {
        (MIN_TENTHS..=MAX_TENTHS).contains(&self.0)
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", a / 10, a % 10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("temperature must be a decimal with exactly one fractional digit")]
pub struct TemperatureFormatError;

impl FromStr for Temperature {
    type Err = TemperatureFormatError;

    /// Accepts only the canonical form produced by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').ok_or(TemperatureFormatError)?;
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || frac.len() != 1 || !digits(frac) {
            return Err(TemperatureFormatError);
        }
        if int.len() > 1 && int.starts_with('0') || int.len() > 6 {
            return Err(TemperatureFormatError);
        }
        let whole: i32 = int.parse().map_err(|_| TemperatureFormatError)?;
        let tenths = whole * 10 + i32::from(frac.as_bytes()[0] - b'0');
        if neg && tenths == 0 {
            return Err(TemperatureFormatError);
        }
        Ok(Temperature(if neg { -tenths } else { tenths }))
    }
}

impl Serialize for Temperature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.celsius())
    }
}

impl<'de> Deserialize<'de> for Temperature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        let tenths = (v * 10.0).round();
        if (tenths / 10.0 - v).abs() > 1e-9 || tenths.abs() > 1e7 {
            return Err(serde::de::Error::custom("temperature must have at most one fractional digit"));
        }
        Ok(Temperature(tenths as i32))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: u64,
    pub temperature: Temperature,
}

/// Timestamped temperature readings from one logger.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct SensorSeries {
    sensor_id: String,
    samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeriesError {
    #[error("invalid sensor id {0:?}")]
    InvalidSensorId(String),
    #[error("series has no samples")]
    NoSamples,
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonic(usize),
    #[error("temperature out of physical bounds at sample {0}")]
    OutOfBounds(usize),
}

impl SensorSeries {
    pub fn new(sensor_id: impl Into<String>, samples: Vec<Sample>) -> Result<Self, SeriesError> {
        let sensor_id = sensor_id.into();
        if !LotCode::is_valid(&sensor_id) {
            return Err(SeriesError::InvalidSensorId(sensor_id));
        }
        if samples.is_empty() {
            return Err(SeriesError::NoSamples);
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.temperature.in_physical_bounds() {
                return Err(SeriesError::OutOfBounds(i));
            }
            if i > 0 && samples[i - 1].timestamp >= s.timestamp {
                return Err(SeriesError::NonMonotonic(i));
            }
        }
        Ok(SensorSeries { sensor_id, samples })
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub(crate) fn write_into(&self, w: &mut Writer) {
        w.str(&self.sensor_id);
        w.count(self.samples.len());
        for s in &self.samples {
            w.u64(s.timestamp);
            w.i32(s.temperature.0);
        }
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let sensor_id = r.string()?;
        let n = r.count(12)?;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let timestamp = r.u64()?;
            let temperature = Temperature(r.i32()?);
            samples.push(Sample { timestamp, temperature });
        }
        SensorSeries::new(sensor_id, samples)
            .map_err(|e| DecodeError::Invalid { what: "sensor series", reason: e.to_string() })
    }

    /// Canonical bytes: sensor id string, sample count, then `(u64 ts, i32 tenths)` pairs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_into(&mut w);
        w.finish()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let s = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(s)
    }
}

impl<'de> Deserialize<'de> for SensorSeries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            sensor_id: String,
            samples: Vec<Sample>,
        }
        let raw = Raw::deserialize(d)?;
        SensorSeries::new(raw.sensor_id, raw.samples).map_err(serde::de::Error::custom)
    }
}

/// Where and why a dump failed to parse. `line` is 1-based, `offset` is the
/// byte offset of the start of that line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DumpError {
    #[error("malformed header at line 1")]
    MalformedHeader,
    #[error("malformed sample at line {line} (byte {offset})")]
    MalformedLine { line: usize, offset: usize },
    #[error("timestamp not increasing at line {line} (byte {offset})")]
    NonMonotonicTimestamps { line: usize, offset: usize },
    #[error("temperature out of bounds at line {line} (byte {offset})")]
    OutOfBoundsTemperature { line: usize, offset: usize },
    #[error("dump contains no samples")]
    NoSamples,
}

impl DumpError {
    pub fn code(&self) -> &'static str {
        match self {
            DumpError::MalformedHeader => "malformed-header",
            DumpError::MalformedLine { .. } => "malformed-line",
            DumpError::NonMonotonicTimestamps { .. } => "non-monotonic-timestamps",
            DumpError::OutOfBoundsTemperature { .. } => "out-of-bounds-temperature",
            DumpError::NoSamples => "no-samples",
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            DumpError::MalformedHeader => Some(1),
            DumpError::MalformedLine { line, .. }
            | DumpError::NonMonotonicTimestamps { line, .. }
            | DumpError::OutOfBoundsTemperature { line, .. } => Some(*line),
            DumpError::NoSamples => None,
        }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            DumpError::MalformedHeader => Some(0),
            DumpError::MalformedLine { offset, .. }
            | DumpError::NonMonotonicTimestamps { offset, .. }
            | DumpError::OutOfBoundsTemperature { offset, .. } => Some(*offset),
            DumpError::NoSamples => None,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

/// Parses a logger dump into a validated series.
pub fn parse_sensor_dump(bytes: &[u8]) -> Result<SensorSeries, DumpError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let bad = e.valid_up_to();
        let line = bytes[..bad].iter().filter(|&&b| b == b'\n').count() + 1;
        let offset = bytes[..bad].iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if line == 1 {
            DumpError::MalformedHeader
        } else {
            DumpError::MalformedLine { line, offset }
        }
    })?;

    let mut offset = 0usize;
    let mut lines = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        match rest.find('\n') {
            Some(i) => {
                lines.push((offset, &rest[..i], true));
                offset += i + 1;
                rest = &rest[i + 1..];
            }
            None => {
                lines.push((offset, rest, false));
                rest = "";
            }
        }
    }

    let Some(&(_, header, terminated)) = lines.first() else {
        return Err(DumpError::MalformedHeader);
    };
    let mut parts = header.split(',');
    let sensor_id = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(DUMP_MAGIC), Some(DUMP_VERSION), Some(id), None) if terminated && LotCode::is_valid(id) => id,
        _ => return Err(DumpError::MalformedHeader),
    };

    let mut samples: Vec<Sample> = Vec::with_capacity(lines.len().saturating_sub(1));
    for (idx, &(off, line, terminated)) in lines.iter().enumerate().skip(1) {
        let lineno = idx + 1;
        let malformed = DumpError::MalformedLine { line: lineno, offset: off };
        if !terminated {
            return Err(malformed);
        }
        let (ts, temp) = line.split_once(',').ok_or_else(|| malformed.clone())?;
        let timestamp = parse_timestamp(ts).ok_or_else(|| malformed.clone())?;
        let temperature: Temperature = temp.parse().map_err(|_| malformed.clone())?;
        if let Some(prev) = samples.last() {
            if prev.timestamp >= timestamp {
                return Err(DumpError::NonMonotonicTimestamps { line: lineno, offset: off });
            }
        }
        if !temperature.in_physical_bounds() {
            return Err(DumpError::OutOfBoundsTemperature { line: lineno, offset: off });
        }
        samples.push(Sample { timestamp, temperature });
    }
    if samples.is_empty() {
        return Err(DumpError::NoSamples);
    }
    Ok(SensorSeries { sensor_id: sensor_id.to_owned(), samples })
}

/// Renders a series in the dump format. Inverse of [`parse_sensor_dump`].
pub fn emit_sensor_dump(series: &SensorSeries) -> Vec<u8> {
    use std::fmt::Write;
    let mut out = String::with_capacity(32 + series.samples.len() * 16);
    let _ = writeln!(out, "{DUMP_MAGIC},{DUMP_VERSION},{}", series.sensor_id);
    for s in &series.samples {
        let _ = writeln!(out, "{},{}", s.timestamp, s.temperature);
    }
    out.into_bytes()
}

/// Temperature band and tolerated continuous excursion.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ColdChainPolicy {
    pub min_temp: Temperature,
    pub max_temp: Temperature,
    pub max_excursion_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("policy minimum must be below maximum")]
pub struct PolicyError;

impl ColdChainPolicy {
    pub fn new(min_temp: Temperature, max_temp: Temperature, max_excursion_seconds: u64) -> Result<Self, PolicyError> {
        if min_temp >= max_temp {
            return Err(PolicyError);
        }
        Ok(ColdChainPolicy { min_temp, max_temp, max_excursion_seconds })
    }

    pub fn in_range(&self, t: Temperature) -> bool {
        self.min_temp <= t && t <= self.max_temp
    }

    /// How far outside the band a reading lies, in tenths; zero when in range.
    fn deviation(&self, t: Temperature) -> i32 {
        if t > self.max_temp {
            t.0 - self.max_temp.0
        } else if t < self.min_temp {
            self.min_temp.0 - t.0
        } else {
            0
        }
    }
}

impl Default for ColdChainPolicy {
    /// Refrigerated produce: 0.0 to 8.0 °C, 30 minute tolerance.
    fn default() -> Self {
        ColdChainPolicy { min_temp: Temperature(0), max_temp: Temperature(80), max_excursion_seconds: 1800 }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub start_ts: u64,
    pub end_ts: u64,
    pub extreme_temp: Temperature,
}

impl Violation {
    pub fn duration(&self) -> u64 {
        self.end_ts - self.start_ts
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub compliant: bool,
    pub violations: Vec<Violation>,
    pub total_excursion_seconds: u64,
}

/// Finds maximal runs of out-of-range samples.
///
/// A run lasts from its first to its last sample timestamp, so a single
/// out-of-range reading is a zero-length violation. Only runs strictly longer
/// than `max_excursion_seconds` break compliance. The extreme temperature is
/// the reading furthest outside the band (first one on ties).
pub fn evaluate_compliance(series: &SensorSeries, policy: &ColdChainPolicy) -> ComplianceReport {
    let mut violations = Vec::new();
    let mut open: Option<(Violation, i32)> = None;
    for s in &series.samples {
        let dev = policy.deviation(s.temperature);
        if dev == 0 {
            if let Some((v, _)) = open.take() {
                violations.push(v);
            }
            continue;
        }
        match &mut open {
            None => {
                open =
                    Some((Violation { start_ts: s.timestamp, end_ts: s.timestamp, extreme_temp: s.temperature }, dev))
            }
            Some((v, worst)) => {
                v.end_ts = s.timestamp;
                if dev > *worst {
                    *worst = dev;
                    v.extreme_temp = s.temperature;
                }
            }
        }
    }
    if let Some((v, _)) = open {
        violations.push(v);
    }
    let total_excursion_seconds = violations.iter().map(Violation::duration).sum();
    let compliant = violations.iter().all(|v| v.duration() <= policy.max_excursion_seconds);
    ComplianceReport { compliant, violations, total_excursion_seconds }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SealError {
    #[error("sealed series is {size} bytes, cap is {MAX_SEALED_BYTES}")]
    TooLarge { size: usize },
}

/// Produces the on-chain form of a series and the digest recorded alongside it.
pub fn seal_series_for_chain(series: &SensorSeries) -> Result<(Digest, Vec<u8>), SealError> {
    let bytes = series.canonical_bytes();
    if bytes.len() > MAX_SEALED_BYTES {
        return Err(SealError::TooLarge { size: bytes.len() });
    }
    Ok((Digest::of(&bytes), bytes))
}

/// Checks a series against a previously sealed digest.
pub fn verify_sealed(series: &SensorSeries, digest: &Digest) -> bool {
    Digest::of(&series.canonical_bytes()) == *digest
}
