//! Deterministic in-process network for driving [`Node`]s in tests.
//!
//! Every message is delayed by a seeded random amount and may be dropped.
//! Links can be cut and nodes crashed and restarted. Given the same seed and
//! the same sequence of calls, a run is reproducible.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use biotrak_core::{Digest, ProcessTransaction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::node::{Action, Node, PeerId, SubmitError, SubmitReceipt};
use crate::wire::WireMessage;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub min_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Probability that any one message is lost.
    pub drop_rate: f64,
    pub tick_ms: u64,
    /// Simulated wall clock at the start, in milliseconds since the epoch.
    pub start_ms: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            min_delay_ms: 5,
            max_delay_ms: 80,
            drop_rate: 0.0,
            tick_ms: 50,
            start_ms: 1_700_000_000_000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Messages originated per (node index, wire tag).
    pub originated: BTreeMap<(usize, u8), u64>,
}

impl SimStats {
    pub fn originated_by(&self, node: usize, tag: u8) -> u64 {
        self.originated.get(&(node, tag)).copied().unwrap_or(0)
    }
}

#[derive(Debug)]
struct InFlight {
    at: u64,
    seq: u64,
    from: usize,
    to: usize,
    msg: WireMessage,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

pub struct SimNetwork {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    now: u64,
    next_tick: u64,
    seq: u64,
    nodes: Vec<Option<Node>>,
    links: BTreeSet<(usize, usize)>,
    down: BTreeSet<(usize, usize)>,
    queue: BinaryHeap<Reverse<InFlight>>,
    stats: SimStats,
}

impl SimNetwork {
    pub fn new(cfg: SimConfig) -> Self {
        SimNetwork {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: cfg.start_ms,
            next_tick: cfg.start_ms,
            seq: 0,
            nodes: Vec::new(),
            links: BTreeSet::new(),
            down: BTreeSet::new(),
            queue: BinaryHeap::new(),
            stats: SimStats::default(),
            cfg,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn add_node(&mut self, node: Node) -> usize {
        self.nodes.push(Some(node));
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The node at `i`, unless it is crashed.
    pub fn node(&self, i: usize) -> Option<&Node> {
        self.nodes.get(i).and_then(Option::as_ref)
    }

    pub fn node_mut(&mut self, i: usize) -> Option<&mut Node> {
        self.nodes.get_mut(i).and_then(Option::as_mut)
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.as_ref().map(|n| (i, n)))
    }

    /// Head hashes of every live node.
    pub fn heads(&self) -> Vec<(usize, u64, Digest)> {
        self.live_nodes().map(|(i, n)| (i, n.chain().height(), n.chain().head().block_hash)).collect()
    }

    pub fn converged(&self) -> bool {
        let heads = self.heads();
        heads.windows(2).all(|w| w[0].2 == w[1].2)
    }

    pub fn connect(&mut self, a: usize, b: usize) {
        if a == b || !self.links.insert(pair(a, b)) {
            return;
        }
        let now = self.now;
        if let Some(n) = self.node_mut(a) {
            n.connected(PeerId(b as u64), now);
        }
        if let Some(n) = self.node_mut(b) {
            n.connected(PeerId(a as u64), now);
        }
        self.flush(a);
        self.flush(b);
    }

    pub fn connect_all(&mut self) {
        for a in 0..self.nodes.len() {
            for b in a + 1..self.nodes.len() {
                self.connect(a, b);
            }
        }
    }

    /// Cuts or restores delivery between `a` and `b` without either side
    /// noticing a disconnect.
    pub fn set_link(&mut self, a: usize, b: usize, up: bool) {
        if up {
            self.down.remove(&pair(a, b));
        } else {
            self.down.insert(pair(a, b));
        }
    }

    /// Removes a node, dropping everything in flight to it. The node is
    /// returned so its store can be reopened.
    pub fn crash(&mut self, i: usize) -> Option<Node> {
        let node = self.nodes.get_mut(i)?.take();
        let peers: Vec<usize> =
            self.links.iter().filter_map(|&(a, b)| (a == i).then_some(b).or((b == i).then_some(a))).collect();
        self.links.retain(|&(a, b)| a != i && b != i);
        for p in peers {
            if let Some(n) = self.node_mut(p) {
                n.disconnected(PeerId(i as u64));
            }
        }
        node
    }

    /// Puts a node back at index `i` and reconnects it to every live node.
    pub fn restart(&mut self, i: usize, node: Node) {
        self.nodes[i] = Some(node);
        let others: Vec<usize> = self.live_nodes().map(|(j, _)| j).filter(|&j| j != i).collect();
        for j in others {
            self.connect(i, j);
        }
    }

    pub fn submit(&mut self, i: usize, tx: ProcessTransaction) -> Result<SubmitReceipt, SubmitError> {
        let now = self.now;
        let node = self.node_mut(i).ok_or(SubmitError::NotAuthoritative)?;
        let r = node.submit(tx, now);
        self.flush(i);
        r
    }

    fn flush(&mut self, i: usize) {
        let Some(node) = self.node_mut(i) else { return };
        for action in node.drain() {
            match action {
                Action::Send { to, msg } => {
                    let to = to.0 as usize;
                    self.stats.sent += 1;
                    *self.stats.originated.entry((i, msg.tag())).or_default() += 1;
                    let lost = self.rng.gen_bool(self.cfg.drop_rate);
                    if lost || !self.links.contains(&pair(i, to)) || self.down.contains(&pair(i, to)) {
                        self.stats.dropped += 1;
                        continue;
                    }
                    let delay = self.rng.gen_range(self.cfg.min_delay_ms..=self.cfg.max_delay_ms);
                    self.seq += 1;
                    self.queue.push(Reverse(InFlight { at: self.now + delay, seq: self.seq, from: i, to, msg }));
                }
                Action::Disconnect { peer, .. } => {
                    let other = peer.0 as usize;
                    self.links.remove(&pair(i, other));
                    if let Some(n) = self.node_mut(other) {
                        n.disconnected(PeerId(i as u64));
                    }
                }
            }
        }
    }

    /// Advances to the next message delivery or timer tick.
    pub fn step(&mut self) {
        let next_msg = self.queue.peek().map(|Reverse(m)| m.at);
        if next_msg.is_some_and(|at| at < self.next_tick) {
            let Reverse(m) = self.queue.pop().expect("peeked");
            self.now = m.at;
            let live = self.links.contains(&pair(m.from, m.to)) && !self.down.contains(&pair(m.from, m.to));
            let now = self.now;
            match self.node_mut(m.to) {
                Some(node) if live => {
                    node.handle(PeerId(m.from as u64), m.msg, now);
                    self.stats.delivered += 1;
                    self.flush(m.to);
                }
                _ => self.stats.dropped += 1,
            }
            return;
        }
        self.now = self.next_tick;
        self.next_tick += self.cfg.tick_ms;
        let now = self.now;
        for i in 0..self.nodes.len() {
            if let Some(n) = self.node_mut(i) {
                n.tick(now);
                self.flush(i);
            }
        }
    }

    pub fn run_for(&mut self, ms: u64) {
        let end = self.now + ms;
        while self.now < end {
            self.step();
        }
    }

    /// Steps until `done` holds or `max_ms` of simulated time pass.
    pub fn run_until(&mut self, max_ms: u64, mut done: impl FnMut(&SimNetwork) -> bool) -> bool {
        let end = self.now + max_ms;
        while self.now < end {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }
}
