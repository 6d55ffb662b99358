//! Builds simulated clusters of authorities and replicas over a fixture chain.

use biotrak_core::testkit::{Fixture, Workload};
use biotrak_core::{ProcessTransaction, SigningKey};
use biotrak_netsync::{Mode, Node, NodeConfig, SimConfig, SimNetwork, SubmitError, SubmitReceipt, Timing};
use rand::Rng;

pub struct Cluster {
    pub fx: Fixture,
    pub net: SimNetwork,
    pub authorities: Vec<usize>,
    pub replicas: Vec<usize>,
}

pub fn replica_key(i: usize) -> SigningKey {
    SigningKey::from_seed([150 + i as u8; 32])
}

pub fn authority_node(fx: &Fixture, i: usize) -> Node {
    let cfg = NodeConfig { mode: Mode::Authoritative, key: fx.authority_keys[i].clone(), timing: Timing::default() };
    Node::new(cfg, fx.chain(), None).expect("authority node")
}

pub fn replica_node(fx: &Fixture, i: usize) -> Node {
    let cfg = NodeConfig { mode: Mode::NonAuthoritative, key: replica_key(i), timing: Timing::default() };
    Node::new(cfg, fx.chain(), None).expect("replica node")
}

impl Cluster {
    pub fn new(authorities: usize, replicas: usize, sim: SimConfig) -> Self {
        let fx = Fixture::new(authorities, 3, 2);
        let mut net = SimNetwork::new(sim);
        let authorities: Vec<usize> = (0..authorities).map(|i| net.add_node(authority_node(&fx, i))).collect();
        let replicas: Vec<usize> = (0..replicas).map(|i| net.add_node(replica_node(&fx, i))).collect();
        net.connect_all();
        net.run_for(500);
        Cluster { fx, net, authorities, replicas }
    }

    pub fn submit(&mut self, node: usize, tx: ProcessTransaction) -> Result<SubmitReceipt, SubmitError> {
        self.net.submit(node, tx)
    }

    pub fn committed_everywhere(&self, tx: &ProcessTransaction) -> bool {
        self.net.live_nodes().all(|(_, n)| n.chain().tx_by_id(&tx.tx_id).is_some())
    }

    /// Submits `count` workload transactions one at a time to random
    /// authorities, each after the previous one has committed on every live
    /// authority. Returns false if a transaction did not commit
    /// within `per_tx_ms` of simulated time.
    pub fn drive_workload<R: Rng>(&mut self, rng: &mut R, count: usize, per_tx_ms: u64) -> bool {
        let fx = self.fx.clone();
        let mut work = Workload::new(&fx);
        for _ in 0..count {
            let tx = work.next_tx(rng);
            let target = self.authorities[rng.gen_range(0..self.authorities.len())];
            self.submit(target, tx.clone()).expect("workload transaction admitted");
            let id = tx.tx_id;
            let authorities = &self.authorities;
            let ok = self.net.run_until(per_tx_ms, |net| {
                authorities.iter().filter_map(|&a| net.node(a)).all(|n| n.chain().tx_by_id(&id).is_some())
            });
            if !ok {
                return false;
            }
        }
        true
    }

    /// Runs until every live node reports the same head, or `max_ms` pass.
    pub fn settle(&mut self, max_ms: u64) -> bool {
        self.net.run_until(max_ms, |net| net.converged())
    }

    pub fn forks(&self) -> usize {
        self.net.live_nodes().map(|(_, n)| n.chain().tips().count() - 1).sum()
    }
}
