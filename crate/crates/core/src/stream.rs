//! Live state stream for the operator console, over WebSocket.
//!
//! Every server message is a JSON object carrying `schema`, `version` and `type`:
//!
//! ```json
//! {"schema":"teletact.state","version":1,"type":"hello","scenarios":["rest","sphere"],"scenario":"sphere","paused":false,"grid":{...}}
//! {"schema":"teletact.state","version":1,"type":"state","scenario":"sphere","paused":false,"frame":12,"t":1.5,...}
//! {"schema":"teletact.state","version":1,"type":"ack","id":3,"control":{"type":"set_gain","gain":2.0},"frame":13}
//! {"schema":"teletact.state","version":1,"type":"error","id":3,"message":"..."}
//! ```
//!
//! `state` carries every field of [`PipelineState`]. `ack.frame` is the first frame
//! ticked with the control in force. Clients send [`Control`] messages; text that
//! does not parse is answered with an `error` at once and never reaches the
//! pipeline. A client more than a few snapshots behind misses snapshots, never replies.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use tungstenite::{Message, WebSocket};

use crate::actuation::SamplingGrid;
use crate::pipeline::{Control, ControlMessage, PipelineState};
use crate::Result;

pub const SCHEMA: &str = "teletact.state";
pub const VERSION: u32 = 1;

const SNAPSHOT_QUEUE: usize = 4;
const POLL: Duration = Duration::from_millis(5);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage<'a> {
    Hello {
        scenarios: &'a [&'a str],
        scenario: Option<&'a str>,
        paused: bool,
        grid: SamplingGrid,
    },
    State {
        scenario: Option<&'a str>,
        paused: bool,
        #[serde(flatten)]
        state: &'a PipelineState,
    },
    Ack {
        id: Option<u64>,
        control: &'a Control,
        frame: usize,
    },
    Error {
        id: Option<u64>,
        message: String,
    },
}

impl ServerMessage<'_> {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Envelope<'a, 'b> {
            schema: &'static str,
            version: u32,
            #[serde(flatten)]
            msg: &'b ServerMessage<'a>,
        }
        serde_json::to_string(&Envelope {
            schema: SCHEMA,
            version: VERSION,
            msg: self,
        })
        .expect("server messages always serialize")
    }
}

/// A parsed control from one client.
#[derive(Debug, Clone)]
pub struct Inbound {
    pub client: usize,
    pub msg: ControlMessage,
}

enum Outbound {
    Reply(String),
    Snapshot(Arc<str>),
}

/// Replies and snapshots share one ordered queue; `pending` caps the snapshots in it.
struct Client {
    id: usize,
    tx: Sender<Outbound>,
    pending: Arc<AtomicUsize>,
}

/// Accepts console connections on a background thread; one thread per client.
pub struct StreamServer {
    addr: SocketAddr,
    clients: Arc<Mutex<Vec<Client>>>,
    hello: Arc<Mutex<String>>,
    controls: Mutex<Receiver<Inbound>>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl StreamServer {
    /// `hello` is sent to each client as it connects; see [`Self::set_hello`].
    pub fn bind(addr: impl ToSocketAddrs, hello: String) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let clients = Arc::new(Mutex::new(Vec::new()));
        let hello = Arc::new(Mutex::new(hello));
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, controls) = mpsc::channel();
        let acceptor = {
            let (clients, hello, stop) = (clients.clone(), hello.clone(), stop.clone());
            std::thread::spawn(move || accept_loop(listener, clients, hello, tx, stop))
        };
        Ok(Self {
            addr,
            clients,
            hello,
            controls: Mutex::new(controls),
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn set_hello(&self, hello: String) {
        *self.hello.lock().unwrap() = hello;
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().unwrap().len()
    }

    /// Queues a snapshot for every client without blocking.
    pub fn publish(&self, text: Arc<str>) {
        self.clients.lock().unwrap().retain(|c| {
            if c.pending.load(Ordering::Acquire) >= SNAPSHOT_QUEUE {
                return true;
            }
            c.pending.fetch_add(1, Ordering::AcqRel);
            c.tx.send(Outbound::Snapshot(text.clone())).is_ok()
        });
    }

    pub fn reply(&self, client: usize, text: String) {
        if let Some(c) = self.clients.lock().unwrap().iter().find(|c| c.id == client) {
            let _ = c.tx.send(Outbound::Reply(text));
        }
    }

    /// Controls received since the last call, in arrival order.
    pub fn drain(&self) -> Vec<Inbound> {
        self.controls.lock().unwrap().try_iter().collect()
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    clients: Arc<Mutex<Vec<Client>>>,
    hello: Arc<Mutex<String>>,
    controls: Sender<Inbound>,
    stop: Arc<AtomicBool>,
) {
    let mut next_id = 0;
    let mut workers = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                let (tx, rx) = mpsc::channel();
                let pending = Arc::new(AtomicUsize::new(0));
                let _ = tx.send(Outbound::Reply(hello.lock().unwrap().clone()));
                clients.lock().unwrap().push(Client {
                    id,
                    tx: tx.clone(),
                    pending: pending.clone(),
                });
                let (controls, stop) = (controls.clone(), stop.clone());
                workers.push(std::thread::spawn(move || {
                    let _ = client_loop(stream, id, rx, tx, pending, controls, stop);
                }));
            }
            Err(_) => std::thread::sleep(POLL),
        }
        workers.retain(|w: &JoinHandle<()>| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn client_loop(
    stream: TcpStream,
    id: usize,
    rx: Receiver<Outbound>,
    tx: Sender<Outbound>,
    pending: Arc<AtomicUsize>,
    controls: Sender<Inbound>,
    stop: Arc<AtomicBool>,
) -> std::result::Result<(), Box<dyn std::error::Error>> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => match ControlMessage::parse(text.as_str()) {
                Ok(msg) => controls.send(Inbound { client: id, msg })?,
                Err(e) => {
                    let id = serde_json::from_str::<serde_json::Value>(text.as_str())
                        .ok()
                        .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                    tx.send(Outbound::Reply(ServerMessage::Error { id, message: e.to_string() }.to_json()))?;
                }
            },
            Ok(Message::Binary(_)) => tx.send(Outbound::Reply(
                ServerMessage::Error {
                    id: None,
                    message: "binary messages are not accepted".into(),
                }
                .to_json(),
            ))?,
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
        for out in rx.try_iter() {
            let text = match out {
                Outbound::Reply(text) => text,
                Outbound::Snapshot(text) => {
                    pending.fetch_sub(1, Ordering::AcqRel);
                    text.to_string()
                }
            };
            ws.send(Message::text(text))?;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
