//! Hub/site message transports: in-process channels, a shared exchange
//! directory, and TCP.
//!
//! Every transport moves encoded message bytes, so the hub decodes exactly
//! the same bytes regardless of how they travelled.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::wire::{decode_message, BroadcastMessage, GradientMessage, Message};
use crate::error::{ProtocolError, Result};

/// Environment variable overriding the round deadline, in seconds.
pub const DEADLINE_ENV: &str = "DANIEL_ROUND_DEADLINE_SECS";
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(60);

const POLL: Duration = Duration::from_millis(10);
/// Largest accepted TCP frame.
const MAX_FRAME: usize = 1 << 30;

/// The round deadline: `DANIEL_ROUND_DEADLINE_SECS` if set and valid,
/// otherwise 60 s.
pub fn round_deadline() -> Duration {
    match std::env::var(DEADLINE_ENV) {
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(s) if s > 0.0 && s.is_finite() => Duration::from_secs_f64(s),
            _ => {
                warn!("ignoring invalid {DEADLINE_ENV}={v:?}");
                DEFAULT_DEADLINE
            }
        },
        Err(_) => DEFAULT_DEADLINE,
    }
}

pub trait HubTransport {
    /// Make `msg` available to every site.
    fn broadcast(&mut self, msg: &BroadcastMessage) -> Result<()>;

    /// Gather one gradient from each site in `expected`, failing once
    /// `deadline` has elapsed.
    fn collect(&mut self, expected: &BTreeSet<u32>, round: u32, deadline: Duration)
        -> Result<Vec<GradientMessage>>;
}

pub trait SiteTransport {
    fn receive_broadcast(&mut self, round: u32, deadline: Duration) -> Result<BroadcastMessage>;
    fn send_gradient(&mut self, msg: &GradientMessage) -> Result<()>;
}

fn expect_broadcast(bytes: &[u8]) -> Result<BroadcastMessage> {
    match decode_message(bytes)? {
        Message::Broadcast(b) => Ok(b),
        Message::Gradient(_) => Err(ProtocolError::UnexpectedKind { expected: "broadcast" }.into()),
    }
}

fn expect_gradient(bytes: &[u8]) -> Result<GradientMessage> {
    match decode_message(bytes)? {
        Message::Gradient(g) => Ok(g),
        Message::Broadcast(_) => Err(ProtocolError::UnexpectedKind { expected: "gradient" }.into()),
    }
}

/// Accepts a gradient into `got` after round and membership checks.
fn admit(
    g: GradientMessage,
    expected: &BTreeSet<u32>,
    round: u32,
    got: &mut Vec<GradientMessage>,
) -> Result<()> {
    if g.round_id() != round {
        return Err(ProtocolError::RoundMismatch {
            expected: round,
            got: g.round_id(),
        }
        .into());
    }
    if !expected.contains(&g.site_id()) {
        return Err(ProtocolError::UnexpectedSite(g.site_id()).into());
    }
    if got.iter().any(|m| m.site_id() == g.site_id()) {
        return Err(ProtocolError::DuplicateSite(g.site_id()).into());
    }
    got.push(g);
    Ok(())
}

fn missing(expected: &BTreeSet<u32>, got: &[GradientMessage]) -> Vec<u32> {
    expected
        .iter()
        .copied()
        .filter(|s| !got.iter().any(|g| g.site_id() == *s))
        .collect()
}

// ---------------------------------------------------------------------------
// In-process

/// Channel pair for one hub and a fixed set of sites in the same process.
pub fn in_process(site_ids: &[u32]) -> (InProcessHub, Vec<InProcessSite>) {
    let (up_tx, up_rx) = mpsc::channel();
    let mut downs = Vec::new();
    let mut sites = Vec::new();
    for &id in site_ids {
        let (tx, rx) = mpsc::channel();
        downs.push(tx);
        sites.push(InProcessSite {
            site_id: id,
            down: rx,
            up: up_tx.clone(),
        });
    }
    (InProcessHub { downs, up: up_rx }, sites)
}

pub struct InProcessHub {
    downs: Vec<Sender<Vec<u8>>>,
    up: Receiver<Vec<u8>>,
}

pub struct InProcessSite {
    site_id: u32,
    down: Receiver<Vec<u8>>,
    up: Sender<Vec<u8>>,
}

impl InProcessSite {
    pub fn site_id(&self) -> u32 {
        self.site_id
    }
}

impl HubTransport for InProcessHub {
    fn broadcast(&mut self, msg: &BroadcastMessage) -> Result<()> {
        let bytes = msg.encode();
        for tx in &self.downs {
            // A site that already hung up is reported as missing at collection.
            let _ = tx.send(bytes.clone());
        }
        Ok(())
    }

    fn collect(
        &mut self,
        expected: &BTreeSet<u32>,
        round: u32,
        deadline: Duration,
    ) -> Result<Vec<GradientMessage>> {
        let stop = Instant::now() + deadline;
        let mut got = Vec::new();
        while got.len() < expected.len() {
            let left = stop.saturating_duration_since(Instant::now());
            match self.up.recv_timeout(left) {
                Ok(bytes) => admit(expect_gradient(&bytes)?, expected, round, &mut got)?,
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(ProtocolError::Timeout {
                        missing: missing(expected, &got),
                    }
                    .into())
                }
            }
        }
        Ok(got)
    }
}

impl SiteTransport for InProcessSite {
    fn receive_broadcast(&mut self, round: u32, deadline: Duration) -> Result<BroadcastMessage> {
        let bytes = self
            .down
            .recv_timeout(deadline)
            .map_err(|_| ProtocolError::Timeout { missing: vec![] })?;
        let b = expect_broadcast(&bytes)?;
        check_round(round, b.round_id())?;
        Ok(b)
    }

    fn send_gradient(&mut self, msg: &GradientMessage) -> Result<()> {
        self.up
            .send(msg.encode())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "hub hung up").into())
    }
}

fn check_round(expected: u32, got: u32) -> Result<()> {
    if expected != got {
        return Err(ProtocolError::RoundMismatch { expected, got }.into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Directory

pub fn theta0_file(dir: &Path, round: u32) -> PathBuf {
    dir.join(format!("round_{round}_theta0.dnl"))
}

pub fn site_file(dir: &Path, round: u32, site: u32) -> PathBuf {
    dir.join(format!("round_{round}_site_{site}.dnl"))
}

/// Write via a temporary sibling and rename, so readers never observe a
/// partially written message.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("dnl.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Hub side of an exchange directory shared with the sites.
pub struct DirectoryHub {
    dir: PathBuf,
}

impl DirectoryHub {
    /// Opens `dir` for a new exchange. Message files left by an earlier
    /// exchange are removed, so sites cannot pick up a stale broadcast.
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("round_") && (name.ends_with(".dnl") || name.ends_with(".dnl.tmp")) {
                fs::remove_file(entry.path())?;
            }
        }
        Ok(DirectoryHub { dir })
    }
}

impl HubTransport for DirectoryHub {
    fn broadcast(&mut self, msg: &BroadcastMessage) -> Result<()> {
        write_atomic(&theta0_file(&self.dir, msg.round_id()), &msg.encode())?;
        debug!("broadcast written to {}", self.dir.display());
        Ok(())
    }

    fn collect(
        &mut self,
        expected: &BTreeSet<u32>,
        round: u32,
        deadline: Duration,
    ) -> Result<Vec<GradientMessage>> {
        let stop = Instant::now() + deadline;
        let mut got: Vec<GradientMessage> = Vec::new();
        loop {
            for &site in expected {
                if got.iter().any(|g| g.site_id() == site) {
                    continue;
                }
                let path = site_file(&self.dir, round, site);
                match fs::read(&path) {
                    Ok(bytes) => {
                        let g = expect_gradient(&bytes)?;
                        if g.site_id() != site {
                            return Err(ProtocolError::UnexpectedSite(g.site_id()).into());
                        }
                        admit(g, expected, round, &mut got)?;
                    }
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if got.len() == expected.len() {
                return Ok(got);
            }
            if Instant::now() >= stop {
                return Err(ProtocolError::Timeout {
                    missing: missing(expected, &got),
                }
                .into());
            }
            thread::sleep(POLL);
        }
    }
}

pub struct DirectorySite {
    dir: PathBuf,
}

impl DirectorySite {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirectorySite { dir: dir.into() }
    }
}

impl SiteTransport for DirectorySite {
    fn receive_broadcast(&mut self, round: u32, deadline: Duration) -> Result<BroadcastMessage> {
        let stop = Instant::now() + deadline;
        let path = theta0_file(&self.dir, round);
        loop {
            match fs::read(&path) {
                Ok(bytes) => {
                    let b = expect_broadcast(&bytes)?;
                    check_round(round, b.round_id())?;
                    return Ok(b);
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
            if Instant::now() >= stop {
                return Err(ProtocolError::Timeout { missing: vec![] }.into());
            }
            thread::sleep(POLL);
        }
    }

    fn send_gradient(&mut self, msg: &GradientMessage) -> Result<()> {
        let path = site_file(&self.dir, msg.round_id(), msg.site_id());
        write_atomic(&path, &msg.encode())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// TCP

fn write_frame(s: &mut TcpStream, bytes: &[u8]) -> io::Result<()> {
    s.write_all(&(bytes.len() as u32).to_le_bytes())?;
    s.write_all(bytes)?;
    s.flush()
}

fn read_frame(s: &mut TcpStream) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    s.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")).into());
    }
    let mut buf = vec![0u8; len];
    s.read_exact(&mut buf)?;
    Ok(buf)
}

/// Listening hub; each site dials in once per round, receives the broadcast
/// and answers with its gradient on the same connection.
pub struct TcpHub {
    listener: TcpListener,
    broadcast: Option<Vec<u8>>,
}

impl TcpHub {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(TcpHub {
            listener,
            broadcast: None,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }
}

impl HubTransport for TcpHub {
    fn broadcast(&mut self, msg: &BroadcastMessage) -> Result<()> {
        self.broadcast = Some(msg.encode());
        Ok(())
    }

    fn collect(
        &mut self,
        expected: &BTreeSet<u32>,
        round: u32,
        deadline: Duration,
    ) -> Result<Vec<GradientMessage>> {
        let bytes = self
            .broadcast
            .clone()
            .ok_or(ProtocolError::UnexpectedKind { expected: "broadcast before collect" })?;
        let stop = Instant::now() + deadline;
        self.listener.set_nonblocking(true)?;
        let mut workers = Vec::new();
        while workers.len() < expected.len() {
            match self.listener.accept() {
                Ok((mut stream, peer)) => {
                    debug!("site connected from {peer}");
                    stream.set_nonblocking(false)?;
                    let bytes = bytes.clone();
                    workers.push(thread::spawn(move || -> Result<Vec<u8>> {
                        let left = stop.saturating_duration_since(Instant::now()).max(POLL);
                        stream.set_read_timeout(Some(left))?;
                        stream.set_write_timeout(Some(left))?;
                        write_frame(&mut stream, &bytes)?;
                        read_frame(&mut stream)
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= stop {
                        break;
                    }
                    thread::sleep(POLL);
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.listener.set_nonblocking(false)?;
        let mut got = Vec::new();
        let mut first_err = None;
        for w in workers {
            match w.join().expect("tcp worker panicked") {
                Ok(frame) => {
                    if let Err(e) = expect_gradient(&frame).and_then(|g| admit(g, expected, round, &mut got)) {
                        first_err.get_or_insert(e);
                    }
                }
                Err(e) => {
                    debug!("site connection failed: {e}");
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        if got.len() < expected.len() {
            return Err(ProtocolError::Timeout {
                missing: missing(expected, &got),
            }
            .into());
        }
        Ok(got)
    }
}

/// Site side: dials the hub (retrying until the deadline while the hub is not
/// yet listening) and keeps the connection for the reply.
pub struct TcpSite {
    addr: String,
    stream: Option<TcpStream>,
}

impl TcpSite {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpSite {
            addr: addr.into(),
            stream: None,
        }
    }
}

impl SiteTransport for TcpSite {
    fn receive_broadcast(&mut self, round: u32, deadline: Duration) -> Result<BroadcastMessage> {
        let stop = Instant::now() + deadline;
        let mut stream = loop {
            match TcpStream::connect(&self.addr) {
                Ok(s) => break s,
                Err(e) if Instant::now() < stop => {
                    debug!("dial {} failed ({e}); retrying", self.addr);
                    thread::sleep(POLL * 5);
                }
                Err(_) => return Err(ProtocolError::Timeout { missing: vec![] }.into()),
            }
        };
        let left = stop.saturating_duration_since(Instant::now()).max(POLL);
        stream.set_read_timeout(Some(left))?;
        let frame = read_frame(&mut stream)?;
        let b = expect_broadcast(&frame)?;
        check_round(round, b.round_id())?;
        self.stream = Some(stream);
        Ok(b)
    }

    fn send_gradient(&mut self, msg: &GradientMessage) -> Result<()> {
        let stream = self
            .stream
            .as_mut()
            .ok_or(ProtocolError::UnexpectedKind { expected: "broadcast before reply" })?;
        write_frame(stream, &msg.encode())?;
        Ok(())
    }
}
