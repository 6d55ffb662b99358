//! Process transactions: one supply-chain event per block.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{DecodeError, Reader, Writer};
use crate::coldchain::{verify_sealed, SensorSeries};
use crate::digest::{Digest, TxId};
use crate::keys::ActorId;

/// Parameter holding the sealed sensor series digest on a `TransportEnd`.
pub const SENSOR_DIGEST_KEY: &str = "sensor_digest";
/// Marks the bootstrap transaction of a genesis block.
pub const GENESIS_MARKER_KEY: &str = "genesis.chain_name";

const MAX_CODE_LEN: usize = 64;

/// Batch identifier: 1 to 64 characters of `A-Z`, `0-9`, `-` and `.`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LotCode(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid code {0:?}: expected 1-64 chars of A-Z 0-9 '-' '.'")]
pub struct CodeError(pub String);

impl LotCode {
    pub fn new(s: impl Into<String>) -> Result<Self, CodeError> {
        let s = s.into();
        if Self::is_valid(&s) {
            Ok(LotCode(s))
        } else {
            Err(CodeError(s))
        }
    }

    pub fn is_valid(s: &str) -> bool {
        !s.is_empty()
            && s.len() <= MAX_CODE_LEN
            && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'-' || b == b'.')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for LotCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lot({})", self.0)
    }
}

impl fmt::Display for LotCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for LotCode {
    type Err = CodeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LotCode::new(s)
    }
}

impl Serialize for LotCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for LotCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        LotCode::new(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Delivery note identifiers share the lot-code alphabet.
pub type DeliveryNoteId = LotCode;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessType {
    InboundReceipt,
    Production,
    TransportStart,
    TransportEnd,
    OutboundDelivery,
}

impl ProcessType {
    pub const ALL: [ProcessType; 5] = [
        ProcessType::InboundReceipt,
        ProcessType::Production,
        ProcessType::TransportStart,
        ProcessType::TransportEnd,
        ProcessType::OutboundDelivery,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ProcessType::InboundReceipt => 1,
            ProcessType::Production => 2,
            ProcessType::TransportStart => 3,
            ProcessType::TransportEnd => 4,
            ProcessType::OutboundDelivery => 5,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag)
    }

    /// The role allowed to register this kind of process.
    pub fn required_role(self) -> Role {
        match self {
            ProcessType::TransportStart | ProcessType::TransportEnd => Role::Transporter,
            _ => Role::Producer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessType::InboundReceipt => "inbound_receipt",
            ProcessType::Production => "production",
            ProcessType::TransportStart => "transport_start",
            ProcessType::TransportEnd => "transport_end",
            ProcessType::OutboundDelivery => "outbound_delivery",
        }
    }
}

impl fmt::Display for ProcessType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Producer,
    Transporter,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Producer, Role::Transporter];

    fn tag(self) -> u8 {
        match self {
            Role::Producer => 1,
            Role::Transporter => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Role::Producer),
            2 => Some(Role::Transporter),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Producer => "producer",
            Role::Transporter => "transporter",
        }
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "producer" => Ok(Role::Producer),
            "transporter" => Ok(Role::Transporter),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Fixed-point decimal: `mantissa * 10^-scale`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Decimal {
    pub mantissa: i64,
    pub scale: u8,
}

pub const MAX_DECIMAL_SCALE: u8 = 18;

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.mantissa);
        }
        let sign = if self.mantissa < 0 { "-" } else { "" };
        let digits = self.mantissa.unsigned_abs().to_string();
        let scale = usize::from(self.scale);
        let padded = format!("{digits:0>width$}", width = scale + 1);
        let (int, frac) = padded.split_at(padded.len() - scale);
        write!(f, "{sign}{int}.{frac}")
    }
}

impl FromStr for Decimal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || format!("invalid decimal {s:?}");
        let (neg, body) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if body.contains('.') && frac.is_empty() {
            return Err(err());
        }
        let scale = u8::try_from(frac.len()).ok().filter(|s| *s <= MAX_DECIMAL_SCALE).ok_or_else(err)?;
        let magnitude: i64 = format!("{int}{frac}").parse().map_err(|_| err())?;
        Ok(Decimal { mantissa: if neg { -magnitude } else { magnitude }, scale })
    }
}

/// A value in the flexible parameters map.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ParamValue {
    Str(String),
    Int(i64),
    Decimal(Decimal),
    Bytes(Vec<u8>),
}

impl ParamValue {
    fn tag(&self) -> u8 {
        match self {
            ParamValue::Str(_) => 1,
            ParamValue::Int(_) => 2,
            ParamValue::Decimal(_) => 3,
            ParamValue::Bytes(_) => 4,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            ParamValue::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

/// JSON form: `{"string": ".."}`, `{"integer": 1}`, `{"decimal": "1.50"}`, `{"bytes": "<base64>"}`.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ParamValueJson {
    String(String),
    Integer(i64),
    Decimal(String),
    Bytes(String),
}

impl Serialize for ParamValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let j = match self {
            ParamValue::Str(v) => ParamValueJson::String(v.clone()),
            ParamValue::Int(v) => ParamValueJson::Integer(*v),
            ParamValue::Decimal(v) => ParamValueJson::Decimal(v.to_string()),
            ParamValue::Bytes(v) => ParamValueJson::Bytes(base64::engine::general_purpose::STANDARD.encode(v)),
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        Ok(match ParamValueJson::deserialize(d)? {
            ParamValueJson::String(v) => ParamValue::Str(v),
            ParamValueJson::Integer(v) => ParamValue::Int(v),
            ParamValueJson::Decimal(v) => ParamValue::Decimal(v.parse().map_err(D::Error::custom)?),
            ParamValueJson::Bytes(v) => {
                ParamValue::Bytes(base64::engine::general_purpose::STANDARD.decode(v).map_err(D::Error::custom)?)
            }
        })
    }
}

/// Parameters keyed by string; `BTreeMap<String, _>` iterates in byte order.
pub type Parameters = BTreeMap<String, ParamValue>;

/// One supply-chain event.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ProcessTransaction {
    pub tx_id: TxId,
    pub process_type: ProcessType,
    pub actor_id: ActorId,
    pub role: Role,
    #[serde(default)]
    pub input_lots: Vec<LotCode>,
    #[serde(default)]
    pub output_lot: Option<LotCode>,
    #[serde(default)]
    pub delivery_note: Option<DeliveryNoteId>,
    #[serde(default)]
    pub transport_ref: Option<TxId>,
    #[serde(default)]
    pub supersedes: Option<TxId>,
    #[serde(default)]
    pub sensor_series: Option<SensorSeries>,
    #[serde(default)]
    pub parameters: Parameters,
    pub created_at: u64,
}

/// Structural rule a transaction breaks.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("production requires at least one input lot")]
    ProductionWithoutInputs,
    #[error("production requires an output lot")]
    ProductionWithoutOutput,
    #[error("{0} must not carry an output lot")]
    UnexpectedOutputLot(ProcessType),
    #[error("transport end requires a transport reference")]
    MissingTransportRef,
    #[error("only transport end may carry a transport reference")]
    UnexpectedTransportRef,
    #[error("only transport end may carry a sensor series")]
    UnexpectedSensorSeries,
    #[error("{0} requires at least one input lot")]
    NoInputLots(ProcessType),
    #[error("{0} requires a delivery note")]
    MissingDeliveryNote(ProcessType),
    #[error("input lot {0} listed twice")]
    DuplicateInputLot(LotCode),
    #[error("output lot {0} is also an input")]
    OutputIsInput(LotCode),
    #[error("empty parameter key")]
    EmptyParameterKey,
    #[error("decimal scale above {MAX_DECIMAL_SCALE}")]
    DecimalScale,
    #[error("sensor digest parameter does not match the series")]
    SensorDigestMismatch,
    #[error("transaction cannot supersede itself")]
    SelfSupersede,
}

impl ShapeError {
    pub fn code(&self) -> &'static str {
        match self {
            ShapeError::SensorDigestMismatch => "sensor-digest-mismatch",
            _ => "malformed-tx",
        }
    }
}

impl ProcessTransaction {
    /// True for the bootstrap transaction carried by a genesis block.
    pub fn is_bootstrap(&self) -> bool {
        self.process_type == ProcessType::Production
            && self.input_lots.is_empty()
            && self.output_lot.is_none()
            && self.actor_id == ActorId::default()
            && self.parameters.contains_key(GENESIS_MARKER_KEY)
    }

    /// Checks the per-type structural invariants.
    pub fn check_shape(&self) -> Result<(), ShapeError> {
        use ProcessType::*;
        let pt = self.process_type;
        if self.is_bootstrap() {
            return Ok(());
        }
        match pt {
            Production => {
                if self.input_lots.is_empty() {
                    return Err(ShapeError::ProductionWithoutInputs);
                }
                if self.output_lot.is_none() {
                    return Err(ShapeError::ProductionWithoutOutput);
                }
            }
            _ => {
                if self.input_lots.is_empty() {
                    return Err(ShapeError::NoInputLots(pt));
                }
                if self.output_lot.is_some() {
                    return Err(ShapeError::UnexpectedOutputLot(pt));
                }
            }
        }
        if matches!(pt, InboundReceipt | OutboundDelivery) && self.delivery_note.is_none() {
            return Err(ShapeError::MissingDeliveryNote(pt));
        }
        match (pt, self.transport_ref) {
            (TransportEnd, None) => return Err(ShapeError::MissingTransportRef),
            (TransportEnd, Some(_)) | (_, None) => {}
            (_, Some(_)) => return Err(ShapeError::UnexpectedTransportRef),
        }
        if self.sensor_series.is_some() && pt != TransportEnd {
            return Err(ShapeError::UnexpectedSensorSeries);
        }
        let mut seen = std::collections::BTreeSet::new();
        for lot in &self.input_lots {
            if !seen.insert(lot) {
                return Err(ShapeError::DuplicateInputLot(lot.clone()));
            }
        }
        if let Some(out) = &self.output_lot {
            if seen.contains(out) {
                return Err(ShapeError::OutputIsInput(out.clone()));
            }
        }
        if self.supersedes == Some(self.tx_id) {
            return Err(ShapeError::SelfSupersede);
        }
        for (k, v) in &self.parameters {
            if k.is_empty() {
                return Err(ShapeError::EmptyParameterKey);
            }
            if let ParamValue::Decimal(d) = v {
                if d.scale > MAX_DECIMAL_SCALE {
                    return Err(ShapeError::DecimalScale);
                }
            }
        }
        if let (Some(series), Some(recorded)) = (&self.sensor_series, self.parameters.get(SENSOR_DIGEST_KEY)) {
            let ok = recorded
                .as_bytes()
                .and_then(|b| <[u8; 32]>::try_from(b).ok())
                .is_some_and(|d| verify_sealed(series, &Digest(d)));
            if !ok {
                return Err(ShapeError::SensorDigestMismatch);
            }
        }
        Ok(())
    }

    /// Canonical bytes; refuses transactions that break their shape invariants.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, ShapeError> {
        self.check_shape()?;
        let mut w = Writer::with_version();
        self.write_fields(&mut w);
        Ok(w.finish())
    }

    pub(crate) fn write_fields(&self, w: &mut Writer) {
        w.fixed(&self.tx_id.0);
        w.u8(self.process_type.tag());
        w.fixed(&self.actor_id.0);
        w.u8(self.role.tag());
        w.count(self.input_lots.len());
        for lot in &self.input_lots {
            w.str(lot.as_str());
        }
        w.option(self.output_lot.as_ref(), |w, l| w.str(l.as_str()));
        w.option(self.delivery_note.as_ref(), |w, l| w.str(l.as_str()));
        w.option(self.transport_ref.as_ref(), |w, t| w.fixed(&t.0));
        w.option(self.supersedes.as_ref(), |w, t| w.fixed(&t.0));
        w.option(self.sensor_series.as_ref(), |w, s| s.write_into(w));
        w.count(self.parameters.len());
        for (k, v) in &self.parameters {
            w.str(k);
            w.u8(v.tag());
            match v {
                ParamValue::Str(s) => w.str(s),
                ParamValue::Int(i) => w.i64(*i),
                ParamValue::Decimal(d) => {
                    w.i64(d.mantissa);
                    w.u8(d.scale);
                }
                ParamValue::Bytes(b) => w.blob(b),
            }
        }
        w.u64(self.created_at);
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.expect_version()?;
        let tx = Self::read_fields(&mut r)?;
        r.finish()?;
        tx.check_shape().map_err(|e| DecodeError::Invalid { what: "transaction", reason: e.to_string() })?;
        Ok(tx)
    }

    pub(crate) fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        fn lot(r: &mut Reader<'_>) -> Result<LotCode, DecodeError> {
            LotCode::new(r.string()?).map_err(|e| DecodeError::Invalid { what: "lot code", reason: e.to_string() })
        }
        let tx_id = TxId(r.array()?);
        let at = r.offset();
        let tag = r.u8()?;
        let process_type =
            ProcessType::from_tag(tag).ok_or(DecodeError::BadTag { what: "process type", tag, offset: at })?;
        let actor_id = ActorId::from(r.array::<8>()?);
        let at = r.offset();
        let tag = r.u8()?;
        let role = Role::from_tag(tag).ok_or(DecodeError::BadTag { what: "role", tag, offset: at })?;
        let n = r.count(4)?;
        let input_lots = (0..n).map(|_| lot(r)).collect::<Result<Vec<_>, _>>()?;
        let output_lot = r.option(lot)?;
        let delivery_note = r.option(lot)?;
        let transport_ref = r.option(|r| r.array().map(TxId))?;
        let supersedes = r.option(|r| r.array().map(TxId))?;
        let sensor_series = r.option(SensorSeries::read_from)?;
        let n = r.count(6)?;
        let mut parameters = Parameters::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let key = r.string()?;
            if last.as_ref().is_some_and(|prev| prev.as_bytes() >= key.as_bytes()) {
                return Err(DecodeError::Invalid { what: "parameters", reason: "keys not strictly ascending".into() });
            }
            let at = r.offset();
            let value = match r.u8()? {
                1 => ParamValue::Str(r.string()?),
                2 => ParamValue::Int(r.i64()?),
                3 => ParamValue::Decimal(Decimal { mantissa: r.i64()?, scale: r.u8()? }),
                4 => ParamValue::Bytes(r.blob()?.to_vec()),
                tag => return Err(DecodeError::BadTag { what: "parameter value", tag, offset: at }),
            };
            last = Some(key.clone());
            parameters.insert(key, value);
        }
        let created_at = r.u64()?;
        Ok(ProcessTransaction {
            tx_id,
            process_type,
            actor_id,
            role,
            input_lots,
            output_lot,
            delivery_note,
            transport_ref,
            supersedes,
            sensor_series,
            parameters,
            created_at,
        })
    }

    /// Digest committed to by the block header.
    pub fn tx_hash(&self) -> Result<Digest, ShapeError> {
        self.canonical_bytes().map(|b| Digest::of(&b))
    }

    /// Every lot this transaction refers to (inputs then output).
    pub fn lots(&self) -> impl Iterator<Item = &LotCode> {
        self.input_lots.iter().chain(self.output_lot.iter())
    }
}

impl From<[u8; 8]> for crate::keys::Fingerprint {
    fn from(b: [u8; 8]) -> Self {
        crate::keys::Fingerprint(b)
    }
}
