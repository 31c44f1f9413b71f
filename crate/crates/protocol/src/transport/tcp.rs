//! Full-mesh TCP transport with 4-byte length framing.
//!
//! Each party listens on its own address, dials every party with a lower id
//! and accepts the higher ones. The dialer opens with a CONTROL Hello
//! carrying the configuration fingerprint; the listener answers HelloAck or
//! Reject. After the handshake one reader thread per connection feeds the
//! party's inbound queue.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Sender};
use log::{debug, warn};

use super::{Endpoint, Inbound, Outbox, PartyId, TransportError, QUEUE_DEPTH};
use crate::wire::{Control, MsgType, WireMessage};

/// Frames above this size are treated as a broken stream.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone)]
pub struct TcpOptions {
    pub id: PartyId,
    /// Address of every party, indexed by id.
    pub addrs: Vec<SocketAddr>,
    pub fingerprint: [u8; 32],
    /// Deadline for the whole mesh to come up.
    pub connect_timeout: Duration,
}

fn write_frame(stream: &mut TcpStream, frame: &[u8]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(4 + frame.len());
    buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
    buf.extend_from_slice(frame);
    stream.write_all(&buf)
}

fn read_frame(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut frame = vec![0u8; len];
    stream.read_exact(&mut frame)?;
    Ok(frame)
}

fn control(id: PartyId, c: &Control) -> Vec<u8> {
    WireMessage::new(MsgType::Control, 0, id, c.encode()).encode()
}

fn read_control(stream: &mut TcpStream) -> Result<(PartyId, Control), TransportError> {
    let msg = WireMessage::decode(&read_frame(stream)?)?;
    if msg.msg_type != MsgType::Control {
        return Err(TransportError::Handshake(format!("expected CONTROL, got {:?}", msg.msg_type)));
    }
    Ok((msg.sender, Control::decode(&msg.payload)?))
}

struct TcpOutbox {
    id: PartyId,
    peers: HashMap<PartyId, Mutex<TcpStream>>,
}

impl Outbox for TcpOutbox {
    fn deliver(&self, dest: PartyId, frame: Vec<u8>) -> Result<(), TransportError> {
        let stream = self.peers.get(&dest).ok_or(TransportError::UnknownParty(dest))?;
        let mut s = stream.lock().expect("lock");
        write_frame(&mut s, &frame).map_err(|e| {
            debug!("party {}: write to {dest} failed: {e}", self.id);
            TransportError::Disconnected(dest)
        })
    }

    fn close(&self) {
        for s in self.peers.values() {
            let _ = s.lock().expect("lock").shutdown(Shutdown::Write);
        }
    }
}

fn spawn_reader(me: PartyId, peer: PartyId, mut stream: TcpStream, tx: Sender<Inbound>) {
    thread::Builder::new()
        .name(format!("tcp-{me}<-{peer}"))
        .spawn(move || loop {
            match read_frame(&mut stream) {
                Ok(f) => {
                    if tx.send(Inbound::Frame(f)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    if e.kind() != io::ErrorKind::UnexpectedEof {
                        debug!("party {me}: link from {peer} closed: {e}");
                    }
                    let _ = tx.send(Inbound::Closed(peer));
                    return;
                }
            }
        })
        .expect("spawn reader thread");
}

fn dial(opts: &TcpOptions, peer: PartyId, deadline: Instant) -> Result<TcpStream, TransportError> {
    let addr = opts.addrs[peer as usize];
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(mut s) => {
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))?;
                write_frame(&mut s, &control(opts.id, &Control::Hello { fingerprint: opts.fingerprint }))?;
                return match read_control(&mut s)? {
                    (p, Control::HelloAck) if p == peer => {
                        s.set_read_timeout(None)?;
                        Ok(s)
                    }
                    (p, Control::HelloAck) => Err(TransportError::Handshake(format!(
                        "{addr} answered as party {p}, expected {peer}"
                    ))),
                    (_, Control::Reject(why)) => Err(TransportError::Handshake(format!("rejected by party {peer}: {why}"))),
                    (_, other) => Err(TransportError::Handshake(format!("unexpected reply {other:?}"))),
                };
            }
            Err(e) if Instant::now() < deadline => {
                debug!("party {}: dialing {peer} at {addr}: {e}; retrying", opts.id);
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(TransportError::Io(e)),
        }
    }
}

/// Checks a dialer's Hello; on success returns its id.
fn admit(opts: &TcpOptions, stream: &mut TcpStream, connected: &HashMap<PartyId, TcpStream>) -> Result<PartyId, String> {
    let (peer, hello) = read_control(stream).map_err(|e| e.to_string())?;
    let parties = opts.addrs.len() as PartyId;
    let verdict = match hello {
        Control::Hello { fingerprint } if fingerprint != opts.fingerprint => Err("configuration fingerprint differs".to_string()),
        Control::Hello { .. } if peer <= opts.id || peer >= parties => Err(format!(
            "party {peer} may not dial party {} (expected ids {}..{parties})",
            opts.id,
            opts.id + 1
        )),
        Control::Hello { .. } if connected.contains_key(&peer) => Err(format!("party {peer} is already connected")),
        Control::Hello { .. } => Ok(peer),
        other => Err(format!("expected Hello, got {other:?}")),
    };
    let reply = match &verdict {
        Ok(_) => Control::HelloAck,
        Err(why) => Control::Reject(why.clone()),
    };
    let _ = write_frame(stream, &control(opts.id, &reply));
    verdict
}

/// Connects party `opts.id` to every other party and returns its endpoint.
pub fn connect_mesh(opts: &TcpOptions) -> Result<Endpoint, TransportError> {
    let parties = opts.addrs.len();
    if opts.id as usize >= parties {
        return Err(TransportError::Handshake(format!("party id {} outside 0..{parties}", opts.id)));
    }
    let deadline = Instant::now() + opts.connect_timeout;
    let listener = TcpListener::bind(opts.addrs[opts.id as usize])?;
    let mut links: HashMap<PartyId, TcpStream> = HashMap::new();
    for peer in 0..opts.id {
        links.insert(peer, dial(opts, peer, deadline)?);
    }
    listener.set_nonblocking(true)?;
    while links.len() < parties - 1 {
        match listener.accept() {
            Ok((mut s, from)) => {
                s.set_nonblocking(false)?;
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(Duration::from_secs(5)))?;
                match admit(opts, &mut s, &links) {
                    Ok(peer) => {
                        s.set_read_timeout(None)?;
                        links.insert(peer, s);
                    }
                    Err(why) => warn!("party {}: rejected connection from {from}: {why}", opts.id),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(TransportError::Timeout(opts.connect_timeout));
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let (tx, rx) = bounded(QUEUE_DEPTH);
    let mut peers = HashMap::new();
    for (peer, stream) in links {
        spawn_reader(opts.id, peer, stream.try_clone()?, tx.clone());
        peers.insert(peer, Mutex::new(stream));
    }
    Ok(Endpoint::new(opts.id, Arc::new(TcpOutbox { id: opts.id, peers }), rx))
}

/// Frames a raw byte string on `stream` (used to exercise error paths).
pub fn write_raw_frame(stream: &mut TcpStream, frame: &[u8]) -> io::Result<()> {
    write_frame(stream, frame)
}
