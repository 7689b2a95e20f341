//! Blocking transports: in-process and TCP.
//!
//! TCP frames are a big-endian u32 length followed by a canonical
//! [`Request`] or [`Response`]. One request per connection.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use orderless_core::{Decode, Encode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::client::{OrgTransport, TransportError};
use crate::message::{Request, Response};
use crate::node::OrgNode;

/// Calls nodes in the same process directly.
pub struct LocalTransport {
    nodes: BTreeMap<String, Arc<OrgNode>>,
}

impl LocalTransport {
    pub fn new(nodes: impl IntoIterator<Item = Arc<OrgNode>>) -> Self {
        Self {
            nodes: nodes.into_iter().map(|n| (n.id().to_string(), n)).collect(),
        }
    }
}

impl OrgTransport for LocalTransport {
    fn call(&self, org: &str, request: Request) -> Result<Response, TransportError> {
        let node = self.nodes.get(org).ok_or_else(|| TransportError::Unreachable(org.into()))?;
        Ok(node.handle(request))
    }
}

fn write_msg(stream: &mut TcpStream, payload: &[u8]) -> std::io::Result<()> {
    let mut frame = Vec::with_capacity(payload.len() + 4);
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(payload);
    stream.write_all(&frame)
}

fn read_msg(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > orderless_core::codec::MAX_LEN {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

pub struct TcpTransport {
    addrs: BTreeMap<String, SocketAddr>,
    timeout: Duration,
}

impl TcpTransport {
    pub fn new(addrs: BTreeMap<String, SocketAddr>, timeout: Duration) -> Self {
        Self { addrs, timeout }
    }
}

impl OrgTransport for TcpTransport {
    fn call(&self, org: &str, request: Request) -> Result<Response, TransportError> {
        let addr = self.addrs.get(org).ok_or_else(|| TransportError::Unreachable(org.into()))?;
        let mut stream = TcpStream::connect_timeout(addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        write_msg(&mut stream, &request.to_bytes())?;
        Ok(Response::from_bytes(&read_msg(&mut stream)?)?)
    }
}

/// A node listening on TCP, with its gossip loop.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl TcpServer {
    /// Serves `node` on `listener`. Every `gossip_interval`, pushes pending
    /// transactions to `ratio` peers through `peers`.
    pub fn spawn(
        node: Arc<OrgNode>,
        listener: TcpListener,
        peers: Arc<dyn OrgTransport + Send + Sync>,
        gossip_interval: Duration,
        ratio: usize,
        seed: u64,
    ) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));

        let accept = {
            let (node, stop) = (node.clone(), stop.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let node = node.clone();
                            std::thread::spawn(move || {
                                let _ = serve_one(&node, stream);
                            });
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(5));
                        }
                        Err(_) => break,
                    }
                }
            })
        };

        let gossip = {
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                while !stop.load(Ordering::Relaxed) {
                    std::thread::sleep(gossip_interval);
                    for (peer, txs) in node.gossip_round(ratio, &mut rng) {
                        let req = Request::Gossip {
                            from: node.id().to_string(),
                            txs,
                        };
                        // Unreachable peers keep their backlog for later rounds.
                        if let Ok(Response::GossipAck(ids)) = peers.call(&peer, req) {
                            node.on_gossip_ack(&peer, &ids);
                        }
                    }
                }
            })
        };

        Ok(Self {
            addr,
            stop,
            threads: vec![accept, gossip],
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn serve_one(node: &OrgNode, mut stream: TcpStream) -> Result<(), TransportError> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let request = Request::from_bytes(&read_msg(&mut stream)?)?;
    write_msg(&mut stream, &node.handle(request).to_bytes())?;
    Ok(())
}
