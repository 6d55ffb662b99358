//! Reference implementations used as test oracles. They are written for
//! obviousness rather than speed and share no code with the crate's
//! implementations beyond the data types.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use biotrak_core::{
    ColdChainPolicy, ComplianceReport, LotCode, ProcessTransaction, ProcessType, Role, SensorSeries, Temperature, TxId,
    Violation,
};

/// Checks every contiguous run `[i, j]` and keeps those that are entirely out
/// of range and cannot be extended on either side.
pub fn brute_force_compliance(series: &SensorSeries, policy: &ColdChainPolicy) -> ComplianceReport {
    let s = series.samples();
    let out = |k: usize| {
        let t = s[k].temperature.tenths();
        t < policy.min_temp.tenths() || t > policy.max_temp.tenths()
    };
    let dev = |k: usize| {
        let t = s[k].temperature.tenths();
        (t - policy.max_temp.tenths()).max(policy.min_temp.tenths() - t).max(0)
    };
    let mut violations = Vec::new();
    for i in 0..s.len() {
        for j in i..s.len() {
            if !(i..=j).all(out) {
                continue;
            }
            let maximal = (i == 0 || !out(i - 1)) && (j + 1 == s.len() || !out(j + 1));
            if !maximal {
                continue;
            }
            let mut worst = i;
            for k in i..=j {
                if dev(k) > dev(worst) {
                    worst = k;
                }
            }
            violations.push(Violation {
                start_ts: s[i].timestamp,
                end_ts: s[j].timestamp,
                extreme_temp: s[worst].temperature,
            });
        }
    }
    let total: u64 = violations.iter().map(|v| v.end_ts - v.start_ts).sum();
    let compliant = !violations.iter().any(|v| v.end_ts - v.start_ts > policy.max_excursion_seconds);
    ComplianceReport { compliant, violations, total_excursion_seconds: total }
}

pub fn temp(tenths: i32) -> Temperature {
    Temperature::from_tenths(tenths)
}

/// One line of an expected flattened process tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expected {
    pub depth: usize,
    pub lot: LotCode,
    pub tx_id: TxId,
    pub external: bool,
}

/// Process-tree oracle over a plain list of committed transactions.
pub struct TraceOracle<'a> {
    txs: &'a [ProcessTransaction],
    producer_of: HashMap<&'a LotCode, usize>,
    referencing: HashMap<&'a LotCode, Vec<usize>>,
    superseded: HashSet<TxId>,
    by_id: HashMap<TxId, usize>,
    next_version: HashMap<TxId, TxId>,
}

impl<'a> TraceOracle<'a> {
    pub fn new(txs: &'a [ProcessTransaction]) -> Self {
        let mut producer_of = HashMap::new();
        let mut referencing: HashMap<&LotCode, Vec<usize>> = HashMap::new();
        let mut superseded = HashSet::new();
        let mut by_id = HashMap::new();
        let mut next_version = HashMap::new();
        for (i, tx) in txs.iter().enumerate() {
            by_id.insert(tx.tx_id, i);
            if let Some(out) = &tx.output_lot {
                producer_of.entry(out).or_insert(i);
            }
            for l in &tx.input_lots {
                referencing.entry(l).or_default().push(i);
            }
            if let Some(old) = tx.supersedes {
                superseded.insert(old);
                next_version.insert(old, tx.tx_id);
            }
        }
        TraceOracle { txs, producer_of, referencing, superseded, by_id, next_version }
    }

    pub fn latest(&self, id: TxId) -> &'a ProcessTransaction {
        let mut id = id;
        while let Some(n) = self.next_version.get(&id) {
            id = *n;
        }
        &self.txs[self.by_id[&id]]
    }

    fn events(&self, lot: &LotCode, exclude: Option<TxId>) -> Vec<&'a ProcessTransaction> {
        self.referencing
            .get(lot)
            .into_iter()
            .flatten()
            .map(|&i| &self.txs[i])
            .filter(|t| t.process_type != ProcessType::Production)
            .filter(|t| !self.superseded.contains(&t.tx_id) && Some(t.tx_id) != exclude)
            .collect()
    }

    /// Expected flattened tree, or `None` for an unknown lot.
    pub fn flatten(&self, lot: &LotCode) -> Option<Vec<Expected>> {
        let mut out = Vec::new();
        if let Some(&i) = self.producer_of.get(lot) {
            self.node(lot, self.txs[i].tx_id, 0, &mut out);
            return Some(out);
        }
        let first = *self.referencing.get(lot)?.first()?;
        let root = self.latest(self.txs[first].tx_id);
        out.push(Expected { depth: 0, lot: lot.clone(), tx_id: root.tx_id, external: false });
        for e in self.events(lot, Some(root.tx_id)) {
            out.push(Expected { depth: 0, lot: lot.clone(), tx_id: e.tx_id, external: false });
        }
        Some(out)
    }

    fn node(&self, lot: &LotCode, origin: TxId, depth: usize, out: &mut Vec<Expected>) {
        let root = self.latest(origin);
        out.push(Expected { depth, lot: lot.clone(), tx_id: root.tx_id, external: false });
        for e in self.events(lot, Some(root.tx_id)) {
            out.push(Expected { depth, lot: lot.clone(), tx_id: e.tx_id, external: false });
        }
        let mut inputs = root.input_lots.clone();
        inputs.sort();
        for input in &inputs {
            match self.producer_of.get(input) {
                Some(&i) => self.node(input, self.txs[i].tx_id, depth + 1, out),
                None => {
                    for e in self.events(input, None) {
                        out.push(Expected { depth: depth + 1, lot: input.clone(), tx_id: e.tx_id, external: true });
                    }
                }
            }
        }
    }

    /// Number of levels in the tree of `lot`.
    pub fn levels(&self, lot: &LotCode) -> usize {
        let Some(&i) = self.producer_of.get(lot) else { return 1 };
        let root = self.latest(self.txs[i].tx_id);
        1 + root
            .input_lots
            .iter()
            .map(|l| if self.producer_of.contains_key(l) { self.levels(l) } else { 1 })
            .max()
            .unwrap_or(0)
    }
}

type Transport = ([u8; 8], Vec<LotCode>, Vec<[u8; 8]>, bool);

/// Lot lifecycle state machine written as an explicit per-lot record walk.
#[derive(Clone, Default)]
pub struct LifecycleOracle {
    /// lot -> (status, holder); status one of "registered", "transit", "delivered", "consumed"
    lots: HashMap<LotCode, (&'static str, [u8; 8])>,
    /// transport start id -> (carrier, lots, previous holders, closed)
    transports: HashMap<TxId, Transport>,
    notes: HashMap<LotCode, ([u8; 8], Vec<LotCode>)>,
    seen: HashMap<TxId, ProcessTransaction>,
    superseded: HashSet<TxId>,
    minted: HashSet<LotCode>,
}

impl LifecycleOracle {
    /// Returns the error code the transaction should be rejected with, if
    /// any, and applies it otherwise. `roles` maps actor fingerprints to
    /// their granted role.
    pub fn submit(&mut self, tx: &ProcessTransaction, roles: &HashMap<[u8; 8], Role>) -> Result<(), &'static str> {
        let r = self.check(tx, roles);
        if r.is_ok() {
            self.apply(tx);
        }
        r
    }

    fn check(&self, tx: &ProcessTransaction, roles: &HashMap<[u8; 8], Role>) -> Result<(), &'static str> {
        let me = tx.actor_id.0;
        if self.seen.contains_key(&tx.tx_id) {
            return Err("duplicate-tx-id");
        }
        match roles.get(&me) {
            None => return Err("unknown-actor"),
            Some(r) if *r != tx.role => return Err("role-not-granted"),
            _ => {}
        }
        let needed = match tx.process_type {
            ProcessType::TransportStart | ProcessType::TransportEnd => Role::Transporter,
            _ => Role::Producer,
        };
        if tx.role != needed {
            return Err("role-forbidden");
        }
        if let Some(old) = tx.supersedes {
            let prev = self.seen.get(&old).ok_or("unknown-superseded-tx")?;
            if tx.role != Role::Producer || prev.actor_id != tx.actor_id {
                return Err("supersede-forbidden");
            }
            if self.superseded.contains(&old) {
                return Err("already-superseded");
            }
            let same = prev.process_type == tx.process_type
                && prev.input_lots == tx.input_lots
                && prev.output_lot == tx.output_lot
                && prev.delivery_note == tx.delivery_note;
            return if same { Ok(()) } else { Err("supersede-mismatch") };
        }
        let usable = |l: &LotCode, need_holder: bool| -> Result<(), &'static str> {
            match self.lots.get(l) {
                None => Err("unknown-input-lot"),
                Some(("transit", _)) => Err("lot-in-transit"),
                Some(("consumed", _)) => Err("lot-consumed"),
                Some((_, h)) if need_holder && *h != me => Err("wrong-holder"),
                Some(_) => Ok(()),
            }
        };
        match tx.process_type {
            ProcessType::InboundReceipt => {
                for l in &tx.input_lots {
                    match self.lots.get(l) {
                        None | Some(("delivered", _)) => {}
                        Some(("transit", _)) => return Err("lot-in-transit"),
                        Some(("consumed", _)) => return Err("lot-consumed"),
                        Some((_, h)) if *h != me => return Err("wrong-holder"),
                        Some(_) => {}
                    }
                }
            }
            ProcessType::Production => {
                for l in &tx.input_lots {
                    usable(l, true)?;
                }
                let out = tx.output_lot.as_ref().unwrap();
                if self.minted.contains(out) || self.lots.contains_key(out) {
                    return Err("duplicate-output-lot");
                }
            }
            ProcessType::TransportStart => {
                let note = match &tx.delivery_note {
                    Some(n) => Some(self.notes.get(n).ok_or("unknown-delivery-note")?),
                    None => None,
                };
                for l in &tx.input_lots {
                    usable(l, false)?;
                    if let Some((issuer, covered)) = note {
                        if !covered.contains(l) || self.lots[l].1 != *issuer {
                            return Err("wrong-holder");
                        }
                    }
                }
            }
            ProcessType::TransportEnd => {
                let start = tx.transport_ref.unwrap();
                let (carrier, lots, _, closed) = self.transports.get(&start).ok_or("dangling-transport-ref")?;
                if *closed {
                    return Err("transport-already-closed");
                }
                if *carrier != me {
                    return Err("wrong-holder");
                }
                if *lots != tx.input_lots {
                    return Err("transport-lot-mismatch");
                }
            }
            ProcessType::OutboundDelivery => {
                if self.notes.contains_key(tx.delivery_note.as_ref().unwrap()) {
                    return Err("duplicate-delivery-note");
                }
                for l in &tx.input_lots {
                    usable(l, true)?;
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, tx: &ProcessTransaction) {
        let me = tx.actor_id.0;
        self.seen.insert(tx.tx_id, tx.clone());
        if let Some(old) = tx.supersedes {
            self.superseded.insert(old);
            return;
        }
        match tx.process_type {
            ProcessType::InboundReceipt => {
                for l in &tx.input_lots {
                    let status = self.lots.get(l).map_or("registered", |s| s.0);
                    self.lots.insert(l.clone(), (status, me));
                }
            }
            ProcessType::Production => {
                for l in &tx.input_lots {
                    self.lots.get_mut(l).unwrap().0 = "consumed";
                }
                let out = tx.output_lot.clone().unwrap();
                self.minted.insert(out.clone());
                self.lots.insert(out, ("registered", me));
            }
            ProcessType::TransportStart => {
                let prev: Vec<[u8; 8]> = tx.input_lots.iter().map(|l| self.lots[l].1).collect();
                for l in &tx.input_lots {
                    self.lots.insert(l.clone(), ("transit", me));
                }
                self.transports.insert(tx.tx_id, (me, tx.input_lots.clone(), prev, false));
            }
            ProcessType::TransportEnd => {
                let rec = self.transports.get_mut(&tx.transport_ref.unwrap()).unwrap();
                rec.3 = true;
                for (l, h) in rec.1.iter().zip(&rec.2) {
                    self.lots.insert(l.clone(), ("delivered", *h));
                }
            }
            ProcessType::OutboundDelivery => {
                self.notes.insert(tx.delivery_note.clone().unwrap(), (me, tx.input_lots.clone()));
            }
        }
    }
}
