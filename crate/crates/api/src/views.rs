//! JSON shapes served by the API. Field names mirror the domain types.

use biotrak_core::traceability::ExternalInput;
use biotrak_core::{
    evaluate_compliance, flatten_tree, ActorId, Block, ChainId, ChainState, ColdChainPolicy, ComplianceReport, Digest,
    LotCode, Parameters, ProcessTransaction, ProcessTree, ProcessType, Role, Sample, TxId,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub tx_id: TxId,
    /// `accepted` or `queued`.
    pub status: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub compliant: bool,
    pub violation_count: usize,
    pub total_excursion_seconds: u64,
}

impl From<&ComplianceReport> for ComplianceSummary {
    fn from(r: &ComplianceReport) -> Self {
        ComplianceSummary {
            compliant: r.compliant,
            violation_count: r.violations.len(),
            total_excursion_seconds: r.total_excursion_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSummary {
    pub sensor_id: String,
    pub sample_count: usize,
    pub first_timestamp: u64,
    pub last_timestamp: u64,
    pub compliance: ComplianceSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxView {
    pub tx_id: TxId,
    pub process_type: ProcessType,
    pub actor_id: ActorId,
    pub actor_name: Option<String>,
    pub role: Role,
    pub input_lots: Vec<LotCode>,
    pub output_lot: Option<LotCode>,
    pub delivery_note: Option<LotCode>,
    pub transport_ref: Option<TxId>,
    pub supersedes: Option<TxId>,
    pub parameters: Parameters,
    pub created_at: u64,
    pub block_height: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalView {
    pub lot: LotCode,
    pub events: Vec<TxView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub lot: LotCode,
    pub tx: TxView,
    pub legs: Vec<TxView>,
    pub inputs: Vec<TreeNode>,
    pub external_inputs: Vec<ExternalView>,
}

/// One line of the pre-order listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryView {
    pub depth: usize,
    pub lot: LotCode,
    pub external: bool,
    pub tx_id: TxId,
    pub process_type: ProcessType,
    pub actor_id: ActorId,
    pub actor_name: Option<String>,
    pub created_at: u64,
    /// Set for transport legs that carry sensor data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compliant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryView {
    pub lot: LotCode,
    pub head_height: u64,
    pub node_count: usize,
    /// False if any transport leg in the tree breached the policy.
    pub compliant: bool,
    pub tree: TreeNode,
    pub entries: Vec<EntryView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemperatureView {
    pub lot: LotCode,
    pub transport_start: TxId,
    pub transport_end: TxId,
    pub sensor_id: String,
    pub samples: Vec<Sample>,
    pub policy: ColdChainPolicy,
    pub report: ComplianceReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockView {
    pub height: u64,
    pub block_hash: Digest,
    /// Base64 of the canonical block encoding.
    pub canonical_bytes: String,
    pub block: Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadView {
    pub chain_id: ChainId,
    pub chain_name: String,
    pub height: u64,
    pub block_hash: Digest,
    pub timestamp: u64,
    /// `authoritative` or `non-authoritative`.
    pub mode: String,
    pub authorities: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeView {
    pub lot: LotCode,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorView {
    pub actor_id: ActorId,
    pub display_name: String,
    pub roles: Vec<Role>,
}

pub(crate) fn policy(chain: &ChainState) -> ColdChainPolicy {
    chain.info().policy.unwrap_or_default()
}

pub(crate) fn tx_view(chain: &ChainState, tx: &ProcessTransaction) -> TxView {
    let policy = policy(chain);
    let sensor = tx.sensor_series.as_ref().map(|s| SensorSummary {
        sensor_id: s.sensor_id().to_owned(),
        sample_count: s.samples().len(),
        first_timestamp: s.samples().first().map_or(0, |x| x.timestamp),
        last_timestamp: s.samples().last().map_or(0, |x| x.timestamp),
        compliance: (&evaluate_compliance(s, &policy)).into(),
    });
    TxView {
        tx_id: tx.tx_id,
        process_type: tx.process_type,
        actor_id: tx.actor_id,
        actor_name: chain.info().actors.get(&tx.actor_id).map(|a| a.display_name.clone()),
        role: tx.role,
        input_lots: tx.input_lots.clone(),
        output_lot: tx.output_lot.clone(),
        delivery_note: tx.delivery_note.clone(),
        transport_ref: tx.transport_ref,
        supersedes: tx.supersedes,
        parameters: tx.parameters.clone(),
        created_at: tx.created_at,
        block_height: chain.trace().index.by_tx.get(&tx.tx_id).copied(),
        sensor,
    }
}

fn tree_node(chain: &ChainState, t: &ProcessTree) -> TreeNode {
    let views = |txs: &[ProcessTransaction]| txs.iter().map(|x| tx_view(chain, x)).collect();
    TreeNode {
        lot: t.lot.clone(),
        tx: tx_view(chain, &t.root_tx),
        legs: views(&t.legs),
        inputs: t.input_subtrees.iter().map(|s| tree_node(chain, s)).collect(),
        external_inputs: t
            .external_inputs
            .iter()
            .map(|ExternalInput { lot, events }| ExternalView { lot: lot.clone(), events: views(events) })
            .collect(),
    }
}

pub(crate) fn history_view(chain: &ChainState, tree: &ProcessTree) -> HistoryView {
    let entries: Vec<EntryView> = flatten_tree(tree)
        .into_iter()
        .map(|e| {
            let v = tx_view(chain, e.tx);
            EntryView {
                depth: e.depth,
                lot: e.lot.clone(),
                external: e.external,
                tx_id: v.tx_id,
                process_type: v.process_type,
                actor_id: v.actor_id,
                actor_name: v.actor_name,
                created_at: v.created_at,
                compliant: v.sensor.map(|s| s.compliance.compliant),
            }
        })
        .collect();
    HistoryView {
        lot: tree.lot.clone(),
        head_height: chain.height(),
        node_count: entries.len(),
        compliant: entries.iter().all(|e| e.compliant != Some(false)),
        tree: tree_node(chain, tree),
        entries,
    }
}
