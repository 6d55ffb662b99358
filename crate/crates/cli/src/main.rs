use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use biotrak_api::views::HistoryView;
use biotrak_core::{ChainState, LotCode, ProcessTransaction, TxId};
use clap::{Parser, Subcommand};

mod client;
mod error;
mod genesis;
mod keyfile;
mod node;
mod trace;

use client::Client;
use error::CliError;

#[derive(Parser)]
#[command(name = "biotrak", version, about = "BioTrak supply-chain ledger node and client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ApiArg {
    /// Node API base URL.
    #[arg(long, env = "BIOTRAK_API", default_value = "http://127.0.0.1:8080")]
    api: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a signing key (PATH) and public key (PATH.pub).
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Build a genesis block from a spec file and the authority keys.
    Genesis {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Genesis timestamp in UNIX seconds; defaults to now.
        #[arg(long)]
        timestamp: Option<u64>,
        /// Authority public keys in order: hex or a .pub file, optionally KEY@host:port.
        #[arg(required = true)]
        authorities: Vec<String>,
    },
    /// Run a node from a config file.
    Run { config: PathBuf },
    /// Submit a process transaction (JSON file, `-` for stdin).
    Submit {
        #[command(flatten)]
        api: ApiArg,
        #[arg(long)]
        key: PathBuf,
        tx: PathBuf,
    },
    /// Print the process tree of a lot.
    Trace {
        #[command(flatten)]
        api: ApiArg,
        /// Print the API response unchanged.
        #[arg(long)]
        json: bool,
        lot: String,
    },
    /// Upload a sensor dump and close a transport.
    IngestSensor {
        #[command(flatten)]
        api: ApiArg,
        #[arg(long)]
        key: PathBuf,
        /// Transaction id of the transport start.
        #[arg(long)]
        transport: String,
        dump: PathBuf,
    },
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf).map_err(CliError::io("stdin"))?;
        Ok(buf)
    } else {
        fs::read(path).map_err(CliError::io(path.display().to_string()))
    }
}

fn print_body(body: &[u8]) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    out.write_all(body).and_then(|_| out.write_all(b"\n")).map_err(CliError::io("stdout"))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Keygen { out, force } => {
            let key = keyfile::generate(&out, force)?;
            println!("{}", key.fingerprint());
        }
        Command::Genesis { spec, out, timestamp, authorities } => {
            let timestamp =
                timestamp.unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
            let block = genesis::build(&spec, &authorities, timestamp)?;
            let bytes = block.canonical_bytes().map_err(|e| CliError::InvalidSpec(e.to_string()))?;
            let chain = ChainState::new(block).map_err(|e| CliError::InvalidSpec(e.to_string()))?;
            fs::write(&out, bytes).map_err(CliError::io(out.display().to_string()))?;
            println!("{}", chain.chain_id());
        }
        Command::Run { config } => {
            let cfg = node::NodeFileConfig::load(&config)?;
            node::run(cfg)?;
        }
        Command::Submit { api, key, tx } => {
            let key = keyfile::read_signing_key(&key)?;
            let body = read_input(&tx)?;
            serde_json::from_slice::<ProcessTransaction>(&body)
                .map_err(|e| CliError::InvalidSpec(format!("{}: {e}", tx.display())))?;
            let reply = Client::new(&api.api)?.post_signed("/v1/tx", body, "application/json", &key)?;
            print_body(&reply)?;
        }
        Command::Trace { api, json, lot } => {
            let lot: LotCode = lot.parse().map_err(|e| CliError::InvalidSpec(format!("{lot}: {e}")))?;
            let reply = Client::new(&api.api)?.get(&format!("/v1/lots/{lot}/history"))?;
            if json {
                io::stdout().lock().write_all(&reply).map_err(CliError::io("stdout"))?;
            } else {
                let history: HistoryView = serde_json::from_slice(&reply)
                    .map_err(|e| CliError::Network(format!("unexpected response: {e}")))?;
                print!("{}", trace::render(&history));
            }
        }
        Command::IngestSensor { api, key, transport, dump } => {
            let key = keyfile::read_signing_key(&key)?;
            let start: TxId = transport.parse().map_err(|e| CliError::InvalidSpec(format!("{transport}: {e}")))?;
            let (content_type, body) = client::multipart(&read_input(&dump)?);
            let reply = Client::new(&api.api)?.post_signed(
                &format!("/v1/transport/{start}/terminate"),
                body,
                &content_type,
                &key,
            )?;
            print_body(&reply)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,biotrak=info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("biotrak: {e}");
            e.exit_code()
        }
    }
}
