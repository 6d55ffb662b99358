#![allow(dead_code)]

use std::fs;
use std::net::TcpListener as StdListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use biotrak_api::{router, ApiConfig, LocalLedger};
use biotrak_core::SigningKey;

pub fn biotrak() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_biotrak"));
    c.env_remove("BIOTRAK_API").env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    biotrak().args(args).output().expect("spawn biotrak")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a signing key file in the keygen format.
pub fn write_key(dir: &Path, name: &str, key: &SigningKey) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("{}\n", hex::encode(key.seed()))).unwrap();
    fs::write(dir.join(format!("{name}.pub")), format!("{}\n", key.public_key())).unwrap();
    p
}

pub fn free_port() -> u16 {
    StdListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// The API router over a ledger, served on a real socket.
pub struct ApiServer {
    pub url: String,
    pub ledger: Arc<LocalLedger>,
    _rt: tokio::runtime::Runtime,
}

impl ApiServer {
    pub fn start(ledger: LocalLedger) -> Self {
        let ledger = Arc::new(ledger);
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        rt.spawn(biotrak_api::serve(listener, router(ledger.clone(), ApiConfig::default())));
        ApiServer { url, ledger, _rt: rt }
    }
}
