//! Runs a [`Node`] over TCP with tokio.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use biotrak_core::ProcessTransaction;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::node::{Action, Node, PeerId, SubmitError, SubmitReceipt};
use crate::wire::{WireError, WireMessage, MAX_FRAME_LEN};

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub listen: Option<SocketAddr>,
    /// Static peer list, `host:port`.
    pub peers: Vec<String>,
    pub tick: Duration,
    pub reconnect: Duration,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            listen: None,
            peers: Vec::new(),
            tick: Duration::from_millis(50),
            reconnect: Duration::from_millis(500),
        }
    }
}

struct Conn {
    tx: mpsc::UnboundedSender<WireMessage>,
    reader: tokio::task::AbortHandle,
}

struct Inner {
    node: Mutex<Node>,
    conns: Mutex<HashMap<PeerId, Conn>>,
    next_peer: AtomicU64,
    tasks: Mutex<Vec<JoinHandle<()>>>,
}

impl Inner {
    /// Runs `f` against the node and delivers whatever it queued.
    fn with_node<R>(&self, f: impl FnOnce(&mut Node) -> R) -> R {
        let (r, actions) = {
            let mut node = self.node.lock().expect("node lock");
            let r = f(&mut node);
            (r, node.drain())
        };
        let mut conns = self.conns.lock().expect("conns lock");
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    if let Some(c) = conns.get(&to) {
                        let _ = c.tx.send(msg);
                    }
                }
                Action::Disconnect { peer, code } => {
                    tracing::info!(peer = peer.0, code, "closing connection");
                    if let Some(c) = conns.remove(&peer) {
                        c.reader.abort();
                    }
                }
            }
        }
        r
    }
}

/// Handle to a running node. Cloning shares the node.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
    local_addr: Option<SocketAddr>,
}

async fn read_frame(r: &mut OwnedReadHalf) -> Result<WireMessage, WireError> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head).await?;
    let len = u32::from_be_bytes(head[..4].try_into().expect("4 bytes"));
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).await?;
    WireMessage::decode_payload(head[4], &payload)
}

async fn write_loop(mut w: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<WireMessage>) {
    while let Some(msg) = rx.recv().await {
        let frame = match msg.encode_frame() {
            Ok(f) => f,
            Err(e) => {
                tracing::error!("cannot encode {}: {e}", msg.name());
                continue;
            }
        };
        if w.write_all(&frame).await.is_err() {
            break;
        }
    }
    let _ = w.shutdown().await;
}

async fn run_conn(inner: Arc<Inner>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let (mut r, w) = stream.into_split();
    let peer = PeerId(inner.next_peer.fetch_add(1, Ordering::Relaxed));
    let (tx, rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(write_loop(w, rx));
    let inner2 = inner.clone();
    let reader = tokio::spawn(async move {
        loop {
            match read_frame(&mut r).await {
                Ok(msg) => inner2.with_node(|n| n.handle(peer, msg, now_ms())),
                Err(e) => {
                    tracing::debug!(peer = peer.0, "connection closed: {e}");
                    break;
                }
            }
        }
    });
    inner.conns.lock().expect("conns lock").insert(peer, Conn { tx, reader: reader.abort_handle() });
    inner.with_node(|n| n.connected(peer, now_ms()));
    let _ = reader.await;
    inner.conns.lock().expect("conns lock").remove(&peer);
    inner.with_node(|n| n.disconnected(peer));
    writer.abort();
}

impl Runtime {
    /// Binds the listener, dials the static peers and starts the timer.
    /// Must be called within a tokio runtime.
    pub async fn start(node: Node, cfg: RuntimeConfig) -> io::Result<Runtime> {
        let inner = Arc::new(Inner {
            node: Mutex::new(node),
            conns: Mutex::new(HashMap::new()),
            next_peer: AtomicU64::new(1),
            tasks: Mutex::new(Vec::new()),
        });
        let mut tasks = Vec::new();
        let mut local_addr = None;
        if let Some(addr) = cfg.listen {
            let listener = TcpListener::bind(addr).await?;
            local_addr = Some(listener.local_addr()?);
            let inner = inner.clone();
            tasks.push(tokio::spawn(async move {
                loop {
                    match listener.accept().await {
                        Ok((stream, _)) => {
                            tokio::spawn(run_conn(inner.clone(), stream));
                        }
                        Err(e) => tracing::warn!("accept failed: {e}"),
                    }
                }
            }));
        }
        for addr in cfg.peers {
            let inner = inner.clone();
            let wait = cfg.reconnect;
            tasks.push(tokio::spawn(async move {
                loop {
                    match TcpStream::connect(&addr).await {
                        Ok(stream) => run_conn(inner.clone(), stream).await,
                        Err(e) => tracing::debug!(peer = %addr, "dial failed: {e}"),
                    }
                    tokio::time::sleep(wait).await;
                }
            }));
        }
        {
            let inner = inner.clone();
            let period = cfg.tick;
            tasks.push(tokio::spawn(async move {
                let mut interval = tokio::time::interval(period);
                loop {
                    interval.tick().await;
                    inner.with_node(|n| n.tick(now_ms()));
                }
            }));
        }
        *inner.tasks.lock().expect("tasks lock") = tasks;
        Ok(Runtime { inner, local_addr })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.local_addr
    }

    /// Read access to the node.
    pub fn read<R>(&self, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.inner.node.lock().expect("node lock"))
    }

    pub fn submit(&self, tx: ProcessTransaction) -> Result<SubmitReceipt, SubmitError> {
        self.inner.with_node(|n| n.submit(tx, now_ms()))
    }

    /// Stops the listener, dialers and timer and closes every connection.
    pub fn shutdown(&self) {
        for t in self.inner.tasks.lock().expect("tasks lock").drain(..) {
            t.abort();
        }
        for (_, c) in self.inner.conns.lock().expect("conns lock").drain() {
            c.reader.abort();
        }
    }
}
