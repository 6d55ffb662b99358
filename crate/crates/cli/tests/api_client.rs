//! trace, submit and ingest-sensor against a live API socket.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;
mod support;

use std::fs;

use biotrak_api::{Ledger, LocalLedger};
use biotrak_core::testkit::{Fixture, Workload};
use biotrak_core::{LotCode, ProcessTransaction};
use oracles::TraceOracle;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{biotrak, stderr, stdout, write_key, ApiServer};

fn server(fx: &Fixture) -> ApiServer {
    ApiServer::start(LocalLedger::new(fx.chain(), fx.authority_keys.clone()).unwrap())
}

fn trace(api: &ApiServer, extra: &[&str]) -> std::process::Output {
    biotrak().env("BIOTRAK_API", &api.url).arg("trace").args(extra).output().unwrap()
}

#[test]
fn single_node_lot_is_one_line() {
    let fx = Fixture::new(3, 1, 1);
    let api = server(&fx);
    api.ledger.submit(fx.inbound(&fx.producers[0], 1, &["A"], "DN-A")).unwrap();
    let o = trace(&api, &["A"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("inbound_receipt A by "), "{out}");
    assert!(out.contains(" at 20") && out.trim_end().ends_with('Z'), "{out}");
}

#[test]
fn merge_is_three_lines_indented_by_depth() {
    let fx = Fixture::new(3, 1, 1);
    let api = server(&fx);
    let p = &fx.producers[0];
    for tx in
        [fx.inbound(p, 1, &["A"], "DN-A"), fx.inbound(p, 2, &["B"], "DN-B"), fx.production(p, 3, &["A", "B"], "C")]
    {
        api.ledger.submit(tx).unwrap();
    }
    let o = trace(&api, &["C"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert!(lines[0].starts_with("production C by "));
    assert!(lines[1].starts_with("  inbound_receipt A "));
    assert!(lines[2].starts_with("  inbound_receipt B "));
}

#[test]
fn json_is_the_response_body_unchanged() {
    let fx = Fixture::new(3, 1, 1);
    let api = server(&fx);
    let p = &fx.producers[0];
    api.ledger.submit(fx.inbound(p, 1, &["A"], "DN-A")).unwrap();
    api.ledger.submit(fx.production(p, 2, &["A"], "B")).unwrap();
    let o = trace(&api, &["--json", "B"]);
    assert!(o.status.success());
    let direct = reqwest::blocking::get(format!("{}/v1/lots/B/history", api.url)).unwrap().bytes().unwrap();
    assert_eq!(o.stdout, direct.to_vec());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["node_count"], 2);
}

#[test]
fn line_count_equals_oracle_on_random_chains() {
    for seed in 0..3u64 {
        let fx = Fixture::new(3, 3, 2);
        let api = server(&fx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wl = Workload::new(&fx).with_series_samples(4);
        for tx in wl.take(&mut rng, 80) {
            api.ledger.submit(tx).unwrap();
        }
        let txs: Vec<ProcessTransaction> =
            api.ledger.read(|c| c.canonical_blocks().skip(1).map(|b| b.transaction.clone()).collect());
        let oracle = TraceOracle::new(&txs);
        let mut lots: Vec<&LotCode> = txs.iter().flat_map(|t| t.lots()).collect();
        lots.sort();
        lots.dedup();
        for lot in lots.choose_multiple(&mut rng, 8) {
            let want = oracle.flatten(lot).unwrap();
            let o = trace(&api, &[lot.as_str()]);
            assert!(o.status.success(), "{}", stderr(&o));
            let out = stdout(&o);
            assert_eq!(out.lines().count(), want.len(), "seed {seed} lot {lot}\n{out}");
            for (line, exp) in out.lines().zip(&want) {
                let indent = line.len() - line.trim_start().len();
                assert_eq!(indent, 2 * exp.depth, "{line}");
                assert!(line.contains(&format!(" {} ", exp.lot)), "{line}");
            }
        }
    }
}

#[test]
fn exit_codes_for_unknown_lot_and_unreachable_api() {
    let fx = Fixture::new(3, 1, 1);
    let api = server(&fx);
    let o = trace(&api, &["NOPE"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("unknown-lot"));

    let port = support::free_port();
    let o = biotrak().args(["trace", "--api", &format!("http://127.0.0.1:{port}"), "A"]).output().unwrap();
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

fn excursion_dump() -> String {
    let tenths = [40, 42, 125, 130, 128, 131, 127, 126, 125, 129, 130, 45, 41];
    let mut s = String::from("biotrak-sensor,v1,LOGGER-9\n");
    for (i, t) in tenths.iter().enumerate() {
        s.push_str(&format!("{},{}.{}\n", 1_700_000_000 + 300 * i as u64, t / 10, t % 10));
    }
    s
}

#[test]
fn submit_and_ingest_sensor_through_the_binary() {
    let fx = Fixture::new(3, 1, 1);
    let api = server(&fx);
    let dir = tempfile::tempdir().unwrap();
    let pkey = write_key(dir.path(), "farm", &fx.producers[0]);
    let tkey = write_key(dir.path(), "carrier", &fx.transporters[0]);
    let submit = |key: &std::path::Path, tx: &ProcessTransaction| {
        let path = dir.path().join(format!("{}.json", tx.tx_id));
        fs::write(&path, serde_json::to_vec(tx).unwrap()).unwrap();
        biotrak()
            .env("BIOTRAK_API", &api.url)
            .args(["submit", "--key", key.to_str().unwrap(), path.to_str().unwrap()])
            .output()
            .unwrap()
    };

    let inbound = fx.inbound(&fx.producers[0], 1, &["MILK-1"], "DN-1");
    let o = submit(&pkey, &inbound);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["tx_id"], inbound.tx_id.to_string());

    // The carrier may not record production.
    let o = submit(&tkey, &fx.production(&fx.transporters[0], 2, &["MILK-1"], "CHEESE-1"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("role-forbidden"), "{}", stderr(&o));

    let start = fx.transport_start(&fx.transporters[0], 3, &["MILK-1"], None);
    assert!(submit(&tkey, &start).status.success());

    let ingest = |dump: &[u8], transport: String| {
        let path = dir.path().join("dump.csv");
        fs::write(&path, dump).unwrap();
        biotrak()
            .args(["ingest-sensor", "--api", &api.url, "--key", tkey.to_str().unwrap()])
            .args(["--transport", &transport, path.to_str().unwrap()])
            .output()
            .unwrap()
    };
    let o = ingest(b"biotrak-sensor,v1,L\n1700000000,4.0\n1700000300,4.1\n1700000200,4.2\n", start.tx_id.to_string());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-monotonic-timestamps") && stderr(&o).contains("line 4"), "{}", stderr(&o));
    assert_eq!(ingest(excursion_dump().as_bytes(), "00".repeat(16)).status.code(), Some(4));

    let o = ingest(excursion_dump().as_bytes(), start.tx_id.to_string());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["report"]["total_excursion_seconds"], 2400);

    let o = ingest(excursion_dump().as_bytes(), start.tx_id.to_string());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("transport-already-closed"));

    let o = trace(&api, &["MILK-1"]);
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3, "{out}");
    assert!(out.lines().any(|l| l.starts_with("transport_end MILK-1") && l.ends_with("[NON-COMPLIANT]")), "{out}");

    fs::write(dir.path().join("bad.json"), "{\"not\": \"a tx\"}").unwrap();
    let o = biotrak()
        .args(["submit", "--api", &api.url, "--key", pkey.to_str().unwrap()])
        .arg(dir.path().join("bad.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}
