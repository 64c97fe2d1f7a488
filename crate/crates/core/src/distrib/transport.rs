//! Reliable, ordered worker-to-worker byte-message delivery.
//!
//! Two bindings: an in-process channel mesh and TCP streams (one stream per
//! directed link, frames prefixed with a little-endian u32 length).

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use super::plan::ExchangePlan;
use crate::error::{Error, Result};

#[derive(Debug)]
pub enum RecvError {
    Timeout,
    Closed(String),
}

/// One worker's view of the mesh.
pub trait Endpoint: Send {
    fn send(&mut self, peer: u32, frame: Vec<u8>) -> Result<()>;
    fn recv(&mut self, peer: u32, timeout: Duration) -> std::result::Result<Vec<u8>, RecvError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inproc,
    /// `hosts[w]` is the listen address of worker `w`; when empty, every
    /// worker listens on an ephemeral localhost port.
    Tcp {
        #[serde(default)]
        hosts: Vec<SocketAddr>,
    },
}

impl TransportKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransportKind::Inproc => "inproc",
            TransportKind::Tcp { .. } => "tcp",
        }
    }

    /// Create one endpoint per worker, wired along the plan's links.
    pub fn connect(&self, plan: &ExchangePlan) -> Result<Vec<Box<dyn Endpoint>>> {
        match self {
            TransportKind::Inproc => Ok(inproc_mesh(plan)),
            TransportKind::Tcp { hosts } => tcp_mesh(plan, hosts),
        }
    }
}

pub struct InprocEndpoint {
    worker: u32,
    tx: BTreeMap<u32, Sender<Vec<u8>>>,
    rx: BTreeMap<u32, Receiver<Vec<u8>>>,
}

fn inproc_mesh(plan: &ExchangePlan) -> Vec<Box<dyn Endpoint>> {
    let mut eps: Vec<InprocEndpoint> = (0..plan.workers.len() as u32)
        .map(|worker| InprocEndpoint {
            worker,
            tx: BTreeMap::new(),
            rx: BTreeMap::new(),
        })
        .collect();
    for (w, wp) in plan.workers.iter().enumerate() {
        for &peer in wp.send.keys() {
            // Lockstep keeps at most two windows in flight per link.
            let (tx, rx) = bounded(4);
            eps[w].tx.insert(peer, tx);
            eps[peer as usize].rx.insert(w as u32, rx);
        }
    }
    eps.into_iter().map(|e| Box::new(e) as Box<dyn Endpoint>).collect()
}

impl Endpoint for InprocEndpoint {
    fn send(&mut self, peer: u32, frame: Vec<u8>) -> Result<()> {
        let tx = self.tx.get(&peer).ok_or_else(|| Error::Transport {
            worker: self.worker,
            peer,
            reason: "no link to peer".into(),
        })?;
        tx.send(frame).map_err(|_| Error::Transport {
            worker: self.worker,
            peer,
            reason: "peer hung up".into(),
        })
    }

    fn recv(&mut self, peer: u32, timeout: Duration) -> std::result::Result<Vec<u8>, RecvError> {
        let rx = self
            .rx
            .get(&peer)
            .ok_or_else(|| RecvError::Closed("no link from peer".into()))?;
        rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => RecvError::Timeout,
            RecvTimeoutError::Disconnected => RecvError::Closed("peer hung up".into()),
        })
    }
}

pub struct TcpEndpoint {
    worker: u32,
    tx: BTreeMap<u32, TcpStream>,
    rx: BTreeMap<u32, TcpStream>,
}

fn tcp_mesh(plan: &ExchangePlan, hosts: &[SocketAddr]) -> Result<Vec<Box<dyn Endpoint>>> {
    let n = plan.workers.len();
    if !hosts.is_empty() && hosts.len() != n {
        return Err(Error::Mismatch(format!(
            "tcp host table lists {} addresses for {n} workers",
            hosts.len()
        )));
    }
    let io = |worker: u32, peer: u32| {
        move |e: std::io::Error| Error::Transport {
            worker,
            peer,
            reason: e.to_string(),
        }
    };
    let listeners: Vec<TcpListener> = (0..n)
        .map(|w| {
            let addr = hosts.get(w).copied().unwrap_or_else(|| ([127, 0, 0, 1], 0).into());
            TcpListener::bind(addr).map_err(io(w as u32, w as u32))
        })
        .collect::<Result<_>>()?;
    let mut eps: Vec<TcpEndpoint> = (0..n as u32)
        .map(|worker| TcpEndpoint {
            worker,
            tx: BTreeMap::new(),
            rx: BTreeMap::new(),
        })
        .collect();
    for (w, wp) in plan.workers.iter().enumerate() {
        let w = w as u32;
        for &peer in wp.send.keys() {
            let addr = listeners[peer as usize].local_addr().map_err(io(w, peer))?;
            let mut s = TcpStream::connect(addr).map_err(io(w, peer))?;
            s.set_nodelay(true).map_err(io(w, peer))?;
            s.write_all(&w.to_le_bytes()).map_err(io(w, peer))?;
            eps[w as usize].tx.insert(peer, s);
        }
    }
    for (w, wp) in plan.workers.iter().enumerate() {
        let w = w as u32;
        for _ in 0..wp.receive.len() {
            let (mut s, _) = listeners[w as usize].accept().map_err(io(w, w))?;
            let mut hello = [0u8; 4];
            s.read_exact(&mut hello).map_err(io(w, w))?;
            let peer = u32::from_le_bytes(hello);
            if !wp.receive.contains(&peer) {
                return Err(Error::Transport {
                    worker: w,
                    peer,
                    reason: "unexpected connection".into(),
                });
            }
            eps[w as usize].rx.insert(peer, s);
        }
    }
    Ok(eps.into_iter().map(|e| Box::new(e) as Box<dyn Endpoint>).collect())
}

impl Endpoint for TcpEndpoint {
    fn send(&mut self, peer: u32, frame: Vec<u8>) -> Result<()> {
        let worker = self.worker;
        let s = self.tx.get_mut(&peer).ok_or_else(|| Error::Transport {
            worker,
            peer,
            reason: "no link to peer".into(),
        })?;
        let len = u32::try_from(frame.len()).map_err(|_| Error::Transport {
            worker,
            peer,
            reason: "frame larger than 4 GiB".into(),
        })?;
        s.write_all(&len.to_le_bytes())
            .and_then(|_| s.write_all(&frame))
            .map_err(|e| Error::Transport {
                worker,
                peer,
                reason: e.to_string(),
            })
    }

    fn recv(&mut self, peer: u32, timeout: Duration) -> std::result::Result<Vec<u8>, RecvError> {
        let s = self
            .rx
            .get_mut(&peer)
            .ok_or_else(|| RecvError::Closed("no link from peer".into()))?;
        s.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(|e| RecvError::Closed(e.to_string()))?;
        let classify = |e: std::io::Error| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => RecvError::Timeout,
            _ => RecvError::Closed(e.to_string()),
        };
        let mut len = [0u8; 4];
        s.read_exact(&mut len).map_err(classify)?;
        let mut frame = vec![0u8; u32::from_le_bytes(len) as usize];
        s.read_exact(&mut frame).map_err(classify)?;
        Ok(frame)
    }
}
