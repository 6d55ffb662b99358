//! Deterministic fixtures for tests: keys, genesis, block sealing,
//! transaction builders and a generator of lifecycle-valid workloads.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::actors::ActorRegistry;
use crate::block::{Block, BlockHeader};
use crate::chain::{AppendError, ChainState};
use crate::coldchain::{seal_series_for_chain, ColdChainPolicy, Sample, SensorSeries, Temperature};
use crate::consensus::{countersign, finalize, propose_block, proposer_for_height, BlockProposal};
use crate::digest::{Digest, TxId};
use crate::genesis::{make_genesis, ActorGrant, AuthorityEntry, GenesisConfig, GenesisInfo};
use crate::keys::{Fingerprint, Signature, SigningKey};
use crate::traceability::{LotStatus, TraceState};
use crate::tx::{LotCode, ParamValue, Parameters, ProcessTransaction, ProcessType, Role, SENSOR_DIGEST_KEY};

pub const GENESIS_TIMESTAMP: u64 = 1_700_000_000;

pub fn lot(s: &str) -> LotCode {
    LotCode::new(s).expect("valid test lot code")
}

pub fn key(seed: u8) -> SigningKey {
    SigningKey::from_seed([seed; 32])
}

/// Genesis with `keys` as authorities and no actors.
pub fn genesis_block_for(keys: &[SigningKey]) -> Block {
    make_genesis(&GenesisConfig {
        chain_name: "test".into(),
        timestamp: 0,
        authorities: keys
            .iter()
            .map(|k| AuthorityEntry { public_key: k.public_key(), endpoint: String::new() })
            .collect(),
        actors: vec![],
        policy: None,
    })
    .expect("valid genesis")
}

/// A well-formed InboundReceipt from an arbitrary producer key.
pub fn inbound_tx(seed: u8, lot_code: &str) -> ProcessTransaction {
    let actor = key(seed.wrapping_add(100));
    tx_base(&actor, u64::from(seed), ProcessType::InboundReceipt, vec![lot(lot_code)], Some("NOTE"))
}

fn tx_base(
    actor: &SigningKey,
    seed: u64,
    process_type: ProcessType,
    input_lots: Vec<LotCode>,
    note: Option<&str>,
) -> ProcessTransaction {
    let fp = actor.fingerprint();
    let mut id_seed = fp.0.to_vec();
    id_seed.extend_from_slice(&seed.to_be_bytes());
    id_seed.push(process_type.tag());
    ProcessTransaction {
        tx_id: TxId::derive(&id_seed),
        process_type,
        actor_id: fp,
        role: process_type.required_role(),
        input_lots,
        output_lot: None,
        delivery_note: note.map(lot),
        transport_ref: None,
        supersedes: None,
        sensor_series: None,
        parameters: Parameters::new(),
        created_at: GENESIS_TIMESTAMP + seed,
    }
}

fn lots(codes: &[&str]) -> Vec<LotCode> {
    codes.iter().map(|c| lot(c)).collect()
}

/// Sets `sensor_series` and the matching digest parameter.
pub fn attach_series(tx: &mut ProcessTransaction, series: SensorSeries) {
    let (digest, _) = seal_series_for_chain(&series).expect("series within cap");
    tx.parameters.insert(SENSOR_DIGEST_KEY.into(), ParamValue::Bytes(digest.0.to_vec()));
    tx.sensor_series = Some(series);
}

/// Authorities, producers and transporters with fixed seeds and the genesis
/// block granting them.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub authority_keys: Vec<SigningKey>,
    pub producers: Vec<SigningKey>,
    pub transporters: Vec<SigningKey>,
    pub genesis: Block,
    pub info: GenesisInfo,
}

impl Fixture {
    pub fn new(authorities: usize, producers: usize, transporters: usize) -> Self {
        let authority_keys: Vec<_> = (0..authorities).map(|i| key(1 + i as u8)).collect();
        let producers: Vec<_> = (0..producers).map(|i| key(100 + i as u8)).collect();
        let transporters: Vec<_> = (0..transporters).map(|i| key(200 + i as u8)).collect();
        let grant = |k: &SigningKey, role: Role, name: String| ActorGrant {
            public_key: k.public_key(),
            roles: BTreeSet::from([role]),
            display_name: name,
        };
        let mut actors: Vec<_> =
            producers.iter().enumerate().map(|(i, k)| grant(k, Role::Producer, format!("producer {i}"))).collect();
        actors
            .extend(transporters.iter().enumerate().map(|(i, k)| grant(k, Role::Transporter, format!("carrier {i}"))));
        let config = GenesisConfig {
            chain_name: "biotrak-test".into(),
            timestamp: GENESIS_TIMESTAMP,
            authorities: authority_keys
                .iter()
                .enumerate()
                .map(|(i, k)| AuthorityEntry {
                    public_key: k.public_key(),
                    endpoint: format!("127.0.0.1:{}", 7000 + i),
                })
                .collect(),
            actors,
            policy: Some(ColdChainPolicy::default()),
        };
        let genesis = make_genesis(&config).expect("valid genesis");
        let info = GenesisInfo::from_block(&genesis).expect("decodable genesis");
        Fixture { authority_keys, producers, transporters, genesis, info }
    }

    pub fn chain(&self) -> ChainState {
        ChainState::new(self.genesis.clone()).expect("valid genesis")
    }

    pub fn actors(&self) -> &ActorRegistry {
        &self.info.actors
    }

    pub fn authority_key(&self, id: &Fingerprint) -> &SigningKey {
        self.authority_keys.iter().find(|k| k.fingerprint() == *id).expect("known authority")
    }

    /// Proposal over `parent` signed by the scheduled authority.
    pub fn propose(&self, parent: &Block, tx: ProcessTransaction, timestamp: u64) -> BlockProposal {
        let who = proposer_for_height(&self.info.authorities, parent.header.height + 1);
        propose_block(tx, parent, self.authority_key(&who), &self.info.authorities, timestamp).expect("proposable")
    }

    /// Proposal plus just enough countersignatures to reach the threshold.
    pub fn seal_block(&self, parent: &Block, tx: ProcessTransaction, timestamp: u64) -> Block {
        let p = self.propose(parent, tx, parent.header.timestamp.max(timestamp));
        let need = self.info.authorities.threshold() - 1;
        let shares: Vec<_> = self
            .authority_keys
            .iter()
            .filter(|k| k.fingerprint() != p.header.proposer)
            .take(need)
            .map(|k| countersign(&p, k, &self.info.authorities).expect("countersignable"))
            .collect();
        finalize(p, &shares, &self.info.authorities).expect("threshold met")
    }

    /// Seals `tx` on top of the head and appends it.
    pub fn commit(&self, chain: &mut ChainState, tx: ProcessTransaction) -> Result<Block, AppendError> {
        let head = chain.head().clone();
        let block = self.seal_block(&head, tx, head.header.timestamp + 1);
        chain.append(block.clone())?;
        Ok(block)
    }

    /// A canonical chain of `n` blocks past genesis from a seeded workload.
    pub fn build_chain(&self, seed: u64, n: usize) -> ChainState {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut chain = self.chain();
        let mut work = Workload::new(self);
        for tx in work.take(&mut rng, n) {
            self.commit(&mut chain, tx).expect("workload transaction commits");
        }
        chain
    }

    pub fn inbound(&self, actor: &SigningKey, seed: u64, codes: &[&str], note: &str) -> ProcessTransaction {
        tx_base(actor, seed, ProcessType::InboundReceipt, lots(codes), Some(note))
    }

    pub fn production(&self, actor: &SigningKey, seed: u64, inputs: &[&str], output: &str) -> ProcessTransaction {
        let mut tx = tx_base(actor, seed, ProcessType::Production, lots(inputs), None);
        tx.output_lot = Some(lot(output));
        tx
    }

    pub fn transport_start(
        &self,
        actor: &SigningKey,
        seed: u64,
        codes: &[&str],
        note: Option<&str>,
    ) -> ProcessTransaction {
        tx_base(actor, seed, ProcessType::TransportStart, lots(codes), note)
    }

    pub fn transport_end(
        &self,
        actor: &SigningKey,
        seed: u64,
        start: TxId,
        codes: &[&str],
        series: Option<SensorSeries>,
    ) -> ProcessTransaction {
        let mut tx = tx_base(actor, seed, ProcessType::TransportEnd, lots(codes), None);
        tx.transport_ref = Some(start);
        if let Some(s) = series {
            attach_series(&mut tx, s);
        }
        tx
    }

    pub fn outbound(&self, actor: &SigningKey, seed: u64, codes: &[&str], note: &str) -> ProcessTransaction {
        tx_base(actor, seed, ProcessType::OutboundDelivery, lots(codes), Some(note))
    }

    /// A new version of `old` with one parameter added.
    pub fn supersede(&self, old: &ProcessTransaction, seed: u64, key: &str, value: &str) -> ProcessTransaction {
        let mut tx = old.clone();
        let mut id_seed = old.tx_id.0.to_vec();
        id_seed.extend_from_slice(&seed.to_be_bytes());
        tx.tx_id = TxId::derive(&id_seed);
        tx.supersedes = Some(old.tx_id);
        tx.parameters.insert(key.into(), ParamValue::Str(value.into()));
        tx.created_at = old.created_at + seed;
        tx
    }
}

/// Wraps `tx` in an unsigned block at `height`. Only suitable for feeding
/// [`TraceState::apply`] and [`crate::traceability::TxSource`] lookups.
pub fn unsigned_block(transaction: ProcessTransaction, height: u64) -> Block {
    let header = BlockHeader {
        height,
        prev_hash: Digest::ZERO,
        timestamp: 0,
        proposer: Fingerprint::default(),
        tx_hash: Digest::ZERO,
    };
    Block {
        header,
        block_hash: Digest::of(&transaction.tx_id.0),
        transaction,
        proposer_signature: Signature::EMPTY,
        countersignatures: vec![],
    }
}

/// A random series of `n` readings starting at `start`, mostly in the
/// default band with occasional excursions.
pub fn random_series<R: Rng>(rng: &mut R, sensor: &str, start: u64, n: usize) -> SensorSeries {
    let mut ts = start;
    let samples = (0..n)
        .map(|_| {
            ts += rng.gen_range(1..=600);
            let t = if rng.gen_bool(0.1) { rng.gen_range(-100..=200) } else { rng.gen_range(0..=80) };
            Sample { timestamp: ts, temperature: Temperature(t) }
        })
        .collect();
    SensorSeries::new(sensor, samples).expect("valid series")
}

/// Produces sequences of transactions that are each valid against the
/// state left by the ones before, covering every process type.
pub struct Workload<'a> {
    fx: &'a Fixture,
    state: TraceState,
    next_lot: u64,
    next_seed: u64,
    open: Vec<ProcessTransaction>,
    productions: Vec<ProcessTransaction>,
    series_samples: usize,
}

impl<'a> Workload<'a> {
    pub fn new(fx: &'a Fixture) -> Self {
        let mut state = TraceState::default();
        state.apply(&fx.genesis);
        Workload { fx, state, next_lot: 0, next_seed: 1, open: vec![], productions: vec![], series_samples: 8 }
    }

    /// Samples per attached sensor series (0 disables series).
    pub fn with_series_samples(mut self, n: usize) -> Self {
        self.series_samples = n;
        self
    }

    pub fn state(&self) -> &TraceState {
        &self.state
    }

    fn fresh_lot(&mut self, prefix: &str) -> String {
        self.next_lot += 1;
        format!("{prefix}-{:05}", self.next_lot)
    }

    fn seed(&mut self) -> u64 {
        self.next_seed += 1;
        self.next_seed
    }

    fn usable_by(&self, holder: Option<Fingerprint>) -> Vec<LotCode> {
        self.state
            .states
            .values()
            .filter(|s| matches!(s.status, LotStatus::Registered | LotStatus::Delivered))
            .filter(|s| holder.is_none_or(|h| s.holder == h))
            .map(|s| s.lot.clone())
            .collect()
    }

    /// Records `tx` as committed without sealing a real block.
    pub fn record(&mut self, tx: &ProcessTransaction) {
        let block = unsigned_block(tx.clone(), self.state.index.by_tx.len() as u64);
        self.state.apply(&block);
        if tx.supersedes.is_none() {
            match tx.process_type {
                ProcessType::TransportStart => self.open.push(tx.clone()),
                ProcessType::TransportEnd => self.open.retain(|s| Some(s.tx_id) != tx.transport_ref),
                ProcessType::Production => self.productions.push(tx.clone()),
                _ => {}
            }
        } else if tx.process_type == ProcessType::Production {
            self.productions.retain(|p| Some(p.tx_id) != tx.supersedes);
            self.productions.push(tx.clone());
        }
    }

    /// Draws the next valid transaction and records it.
    pub fn next_tx<R: Rng>(&mut self, rng: &mut R) -> ProcessTransaction {
        loop {
            if let Some(tx) = self.try_draw(rng) {
                self.state.validate(&tx, self.fx.actors()).expect("workload generated an invalid transaction");
                self.record(&tx);
                return tx;
            }
        }
    }

    pub fn take<R: Rng>(&mut self, rng: &mut R, n: usize) -> Vec<ProcessTransaction> {
        (0..n).map(|_| self.next_tx(rng)).collect()
    }

    fn try_draw<R: Rng>(&mut self, rng: &mut R) -> Option<ProcessTransaction> {
        let fx = self.fx;
        let producer = fx.producers.choose(rng)?.clone();
        let seed = self.seed();
        match rng.gen_range(0..100) {
            0..=19 => {
                let n = rng.gen_range(1..=3);
                let codes: Vec<String> = (0..n).map(|_| self.fresh_lot("EXT")).collect();
                let refs: Vec<&str> = codes.iter().map(String::as_str).collect();
                let note = self.fresh_lot("SUP");
                Some(fx.inbound(&producer, seed, &refs, &note))
            }
            20..=44 => {
                let mut mine = self.usable_by(Some(producer.fingerprint()));
                if mine.is_empty() {
                    return None;
                }
                mine.shuffle(rng);
                mine.truncate(rng.gen_range(1..=3));
                let out = self.fresh_lot("LOT");
                let refs: Vec<&str> = mine.iter().map(LotCode::as_str).collect();
                let mut tx = fx.production(&producer, seed, &refs, &out);
                tx.parameters.insert("batch_weight_kg".into(), ParamValue::Int(rng.gen_range(1..5000)));
                Some(tx)
            }
            45..=59 => {
                let carrier = fx.transporters.choose(rng)?.clone();
                let all = self.usable_by(None);
                let pick = all.choose(rng)?;
                Some(fx.transport_start(&carrier, seed, &[pick.as_str()], None))
            }
            60..=79 => {
                let idx = rng.gen_range(0..self.open.len().max(1));
                let start = self.open.get(idx)?.clone();
                let carrier = fx.transporters.iter().find(|k| k.fingerprint() == start.actor_id)?.clone();
                let refs: Vec<&str> = start.input_lots.iter().map(LotCode::as_str).collect();
                let series = (self.series_samples > 0 && rng.gen_bool(0.5))
                    .then(|| random_series(rng, "NFC-1", start.created_at, self.series_samples));
                Some(fx.transport_end(&carrier, seed, start.tx_id, &refs, series))
            }
            80..=89 => {
                let mine = self.usable_by(Some(producer.fingerprint()));
                let pick = mine.choose(rng)?;
                let note = self.fresh_lot("DN");
                Some(fx.outbound(&producer, seed, &[pick.as_str()], &note))
            }
            90..=94 => {
                let delivered: Vec<LotCode> = self
                    .state
                    .states
                    .values()
                    .filter(|s| s.status == LotStatus::Delivered && s.holder != producer.fingerprint())
                    .map(|s| s.lot.clone())
                    .collect();
                let pick = delivered.choose(rng)?;
                let note = self.fresh_lot("SUP");
                Some(fx.inbound(&producer, seed, &[pick.as_str()], &note))
            }
            _ => {
                let old = self.productions.choose(rng)?.clone();
                Some(fx.supersede(&old, seed, "revision", &seed.to_string()))
            }
        }
    }
}
