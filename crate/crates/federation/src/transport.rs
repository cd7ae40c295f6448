//! Message delivery between the server and clients. Every transport moves
//! encoded frames, so byte counts are the same whichever one is used.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

use fedph_crypto::PublicKey;

use crate::error::{FedError, Result};
use crate::message::{RoundMessage, MAX_FRAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Peer {
    Server,
    Client(u32),
}

impl std::fmt::Display for Peer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Peer::Server => f.write_str("server"),
            Peer::Client(i) => write!(f, "client {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeerTraffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
}

/// Per-peer byte counters plus an optional copy of every frame sent.
#[derive(Debug, Default)]
pub struct Meter {
    peers: BTreeMap<Peer, PeerTraffic>,
    capture: Option<Vec<Vec<u8>>>,
}

impl Meter {
    pub fn capturing() -> Self {
        Self { peers: BTreeMap::new(), capture: Some(Vec::new()) }
    }

    fn sent(&mut self, from: Peer, frame: &[u8]) {
        let t = self.peers.entry(from).or_default();
        t.bytes_sent += frame.len() as u64;
        t.frames_sent += 1;
        if let Some(c) = &mut self.capture {
            c.push(frame.to_vec());
        }
    }

    fn received(&mut self, to: Peer, len: usize) {
        let t = self.peers.entry(to).or_default();
        t.bytes_received += len as u64;
        t.frames_received += 1;
    }

    pub fn peer(&self, p: Peer) -> PeerTraffic {
        self.peers.get(&p).copied().unwrap_or_default()
    }

    /// Every frame sent so far, when capture is on.
    pub fn frames(&self) -> Option<&[Vec<u8>]> {
        self.capture.as_deref()
    }
}

pub trait Transport {
    /// Queues `msg` for `to` and returns the encoded frame length.
    fn send(&mut self, from: Peer, to: Peer, msg: &RoundMessage) -> Result<usize>;

    /// Next message from `from` to `to`, in send order.
    fn recv(&mut self, from: Peer, to: Peer) -> Result<RoundMessage>;

    /// Key used to validate incoming ciphertexts.
    fn set_public_key(&mut self, key: Option<PublicKey>);

    fn meter(&self) -> &Meter;
}

/// Queues of encoded frames per ordered peer pair.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    queues: HashMap<(Peer, Peer), VecDeque<Vec<u8>>>,
    key: Option<PublicKey>,
    meter: Meter,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps a copy of every frame for inspection.
    pub fn capturing() -> Self {
        Self { meter: Meter::capturing(), ..Self::default() }
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, from: Peer, to: Peer, msg: &RoundMessage) -> Result<usize> {
        let frame = msg.encode();
        self.meter.sent(from, &frame);
        let len = frame.len();
        self.queues.entry((from, to)).or_default().push_back(frame);
        Ok(len)
    }

    fn recv(&mut self, from: Peer, to: Peer) -> Result<RoundMessage> {
        let frame = self
            .queues
            .get_mut(&(from, to))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| FedError::Transport(format!("no message queued from {from} to {to}")))?;
        self.meter.received(to, frame.len());
        RoundMessage::decode(&frame, self.key.as_ref())
    }

    fn set_public_key(&mut self, key: Option<PublicKey>) {
        self.key = key;
    }

    fn meter(&self) -> &Meter {
        &self.meter
    }
}

/// Writes one frame (already length-prefixed) to a stream.
pub fn write_frame<W: Write>(w: &mut W, msg: &RoundMessage) -> Result<usize> {
    let frame = msg.encode();
    w.write_all(&frame).and_then(|_| w.flush()).map_err(io)?;
    Ok(frame.len())
}

/// Reads one length-prefixed frame, returning the whole frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(io)?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(FedError::Codec(format!("frame of {n} bytes exceeds the {MAX_FRAME}-byte limit")));
    }
    let mut frame = vec![0u8; 4 + n];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..]).map_err(io)?;
    Ok(frame)
}

fn io(e: std::io::Error) -> FedError {
    FedError::Transport(e.to_string())
}

struct Link {
    writer: TcpStream,
    inbox: Receiver<Result<Vec<u8>>>,
    reader: Option<JoinHandle<()>>,
}

impl Link {
    /// A loopback connection with a thread feeding received frames to `inbox`.
    fn open() -> Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0)).map_err(io)?;
        let writer = TcpStream::connect(listener.local_addr().map_err(io)?).map_err(io)?;
        writer.set_nodelay(true).map_err(io)?;
        let (mut stream, _) = listener.accept().map_err(io)?;
        let (tx, inbox) = mpsc::channel();
        let reader = std::thread::spawn(move || loop {
            match read_frame(&mut stream) {
                Ok(frame) => {
                    if tx.send(Ok(frame)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        });
        Ok(Link { writer, inbox, reader: Some(reader) })
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        // closing the write half ends the reader thread at EOF
        let _ = self.writer.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

/// One loopback TCP connection per ordered peer pair. A reader thread per
/// connection drains frames, so large frames never block the sender.
pub struct TcpTransport {
    links: HashMap<(Peer, Peer), Link>,
    key: Option<PublicKey>,
    meter: Meter,
    timeout: Duration,
}

impl Default for TcpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl TcpTransport {
    pub fn new() -> Self {
        Self {
            links: HashMap::new(),
            key: None,
            meter: Meter::default(),
            timeout: Duration::from_secs(60),
        }
    }

    fn link(&mut self, from: Peer, to: Peer) -> Result<&mut Link> {
        match self.links.entry((from, to)) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(Link::open()?)),
        }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, from: Peer, to: Peer, msg: &RoundMessage) -> Result<usize> {
        let frame = msg.encode();
        let link = self.link(from, to)?;
        link.writer.write_all(&frame).and_then(|_| link.writer.flush()).map_err(io)?;
        self.meter.sent(from, &frame);
        Ok(frame.len())
    }

    fn recv(&mut self, from: Peer, to: Peer) -> Result<RoundMessage> {
        let timeout = self.timeout;
        let link = self
            .links
            .get_mut(&(from, to))
            .ok_or_else(|| FedError::Transport(format!("no connection from {from} to {to}")))?;
        let frame = match link.inbox.recv_timeout(timeout) {
            Ok(frame) => frame?,
            Err(RecvTimeoutError::Timeout) => {
                return Err(FedError::Transport(format!("timed out waiting for {from}")))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(FedError::Transport(format!("connection from {from} lost")))
            }
        };
        self.meter.received(to, frame.len());
        RoundMessage::decode(&frame, self.key.as_ref())
    }

    fn set_public_key(&mut self, key: Option<PublicKey>) {
        self.key = key;
    }

    fn meter(&self) -> &Meter {
        &self.meter
    }
}
