//! TCP backend: a coordinator-run rendezvous listener plus a full mesh of
//! worker-to-worker connections.
//!
//! Startup, in order:
//! 1. Each worker binds a peer listener, connects to the coordinator and
//!    sends a hello carrying the protocol version, the run-config digest and
//!    its peer address.
//! 2. The coordinator checks version and digest, assigns ranks in
//!    connection order and, once all workers are in, sends every worker its
//!    rank and the full peer address table.
//! 3. Workers connect to every lower rank and accept from every higher one.

use std::io::{BufReader, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::{unwords, words, Envelope, MsgType, Transport, TransportError, COORDINATOR};

pub const PROTOCOL_VERSION: u32 = 1;
const UNASSIGNED: u32 = u32::MAX - 1;
const IO_TIMEOUT: Duration = Duration::from_secs(300);
/// Upper bound on one record, to fail fast on a corrupt length prefix.
const MAX_RECORD: usize = 1 << 30;

/// Writes one length-prefixed record.
pub fn write_record<W: Write>(w: &mut W, env: &Envelope) -> Result<(), TransportError> {
    let mut buf = Vec::with_capacity(4 + env.encoded_len());
    buf.extend_from_slice(&(env.encoded_len() as u32).to_le_bytes());
    env.encode_into(&mut buf);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_record<R: Read>(r: &mut R, peer: usize) -> Result<Envelope, TransportError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|e| disconnect(peer, e))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_RECORD {
        return Err(TransportError::Wire(format!("record of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| disconnect(peer, e))?;
    Envelope::decode(&body)
}

fn disconnect(peer: usize, e: std::io::Error) -> TransportError {
    match e.kind() {
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => TransportError::Timeout { peer },
        _ => TransportError::Disconnected {
            peer,
            detail: e.to_string(),
        },
    }
}

fn configure(stream: &TcpStream) -> Result<(), TransportError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    Ok(())
}

fn encode_addr(addr: SocketAddr) -> Result<[u32; 2], TransportError> {
    match addr.ip() {
        IpAddr::V4(ip) => Ok([u32::from(ip), addr.port() as u32]),
        IpAddr::V6(_) => Err(TransportError::Handshake(format!(
            "IPv6 peer address {addr} unsupported"
        ))),
    }
}

fn decode_addr(w: &[u32]) -> SocketAddr {
    SocketAddr::new(IpAddr::V4(Ipv4Addr::from(w[0])), w[1] as u16)
}

fn split_digest(d: u64) -> [u32; 2] {
    [d as u32, (d >> 32) as u32]
}

fn join_digest(lo: u32, hi: u32) -> u64 {
    lo as u64 | (hi as u64) << 32
}

/// A framed connection between the coordinator and one worker.
pub struct Link {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    peer: usize,
}

impl Link {
    fn new(stream: TcpStream, peer: usize) -> Result<Self, TransportError> {
        configure(&stream)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            peer,
        })
    }

    pub fn send(&mut self, env: &Envelope) -> Result<(), TransportError> {
        write_record(&mut self.writer, env)
    }

    pub fn recv(&mut self) -> Result<Envelope, TransportError> {
        read_record(&mut self.reader, self.peer)
    }

    /// Receives a control message and checks its tag.
    pub fn recv_control(&mut self, tag: u64) -> Result<Vec<f32>, TransportError> {
        let env = self.recv()?;
        if env.msg_type != MsgType::Control {
            return Err(TransportError::TypeMismatch {
                src: self.peer,
                expected: MsgType::Control,
                actual: env.msg_type,
            });
        }
        if env.tag != tag {
            return Err(TransportError::TagMismatch {
                src: self.peer,
                expected: tag,
                actual: env.tag,
            });
        }
        Ok(env.payload)
    }
}

/// Coordinator side of the rendezvous.
pub struct Rendezvous {
    listener: TcpListener,
}

impl Rendezvous {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts `n` workers, assigning ranks in connection order. Every
    /// worker must present `digest`; a mismatch is rejected and aborts startup.
    pub fn accept_workers(&self, n: usize, digest: u64) -> Result<Vec<Link>, TransportError> {
        let mut links = Vec::with_capacity(n);
        let mut table = Vec::with_capacity(2 * n);
        for rank in 0..n {
            let (stream, _) = self.listener.accept()?;
            let mut link = Link::new(stream, rank)?;
            let hello = unwords(&link.recv_control(0)?);
            if hello.len() != 5 {
                return Err(TransportError::Handshake("malformed hello".into()));
            }
            let (version, theirs) = (hello[0], join_digest(hello[1], hello[2]));
            if version != PROTOCOL_VERSION || theirs != digest {
                let reject = Envelope::new(MsgType::Control, 1, COORDINATOR, rank as u32, words(&[0]));
                let _ = link.send(&reject);
                return Err(TransportError::Handshake(format!(
                    "worker {rank} presented version {version}, digest {theirs:016x}; expected {PROTOCOL_VERSION}, {digest:016x}"
                )));
            }
            table.extend_from_slice(&hello[3..5]);
            links.push(link);
        }
        for (rank, link) in links.iter_mut().enumerate() {
            let [lo, hi] = split_digest(digest);
            let mut payload = vec![PROTOCOL_VERSION, rank as u32, n as u32, lo, hi];
            payload.extend_from_slice(&table);
            link.send(&Envelope::new(
                MsgType::Control,
                1,
                COORDINATOR,
                rank as u32,
                words(&payload),
            ))?;
        }
        Ok(links)
    }
}

/// Worker-side endpoint: one stream per peer.
pub struct TcpEndpoint {
    rank: usize,
    readers: Vec<Option<BufReader<TcpStream>>>,
    writers: Vec<Option<TcpStream>>,
}

impl TcpEndpoint {
    /// Joins the run at `coordinator`, returning the coordinator link and
    /// the meshed endpoint.
    pub fn join(coordinator: impl ToSocketAddrs, digest: u64) -> Result<(Link, TcpEndpoint), TransportError> {
        let stream = TcpStream::connect(coordinator)?;
        let local_ip = stream.local_addr()?.ip();
        let listener = TcpListener::bind(SocketAddr::new(local_ip, 0))?;
        let mut link = Link::new(stream, usize::MAX)?;
        let [lo, hi] = split_digest(digest);
        let [ip, port] = encode_addr(listener.local_addr()?)?;
        link.send(&Envelope::new(
            MsgType::Control,
            0,
            UNASSIGNED,
            COORDINATOR,
            words(&[PROTOCOL_VERSION, lo, hi, ip, port]),
        ))?;
        let assign = unwords(&link.recv_control(1)?);
        if assign.len() < 5 || assign[0] != PROTOCOL_VERSION {
            return Err(TransportError::Handshake("coordinator rejected this worker".into()));
        }
        let (rank, world) = (assign[1] as usize, assign[2] as usize);
        if join_digest(assign[3], assign[4]) != digest || assign.len() != 5 + 2 * world {
            return Err(TransportError::Handshake("inconsistent assignment".into()));
        }
        let peers: Vec<SocketAddr> = assign[5..].chunks_exact(2).map(decode_addr).collect();
        let endpoint = Self::mesh(rank, world, listener, &peers)?;
        Ok((link, endpoint))
    }

    /// Connects to every lower rank and accepts every higher rank.
    pub fn mesh(
        rank: usize,
        world: usize,
        listener: TcpListener,
        peers: &[SocketAddr],
    ) -> Result<Self, TransportError> {
        let mut readers: Vec<Option<BufReader<TcpStream>>> = (0..world).map(|_| None).collect();
        let mut writers: Vec<Option<TcpStream>> = (0..world).map(|_| None).collect();
        for (peer, addr) in peers.iter().enumerate().take(rank) {
            let mut s = TcpStream::connect(addr)?;
            configure(&s)?;
            write_record(
                &mut s,
                &Envelope::new(MsgType::Control, 0, rank as u32, peer as u32, words(&[rank as u32])),
            )?;
            readers[peer] = Some(BufReader::new(s.try_clone()?));
            writers[peer] = Some(s);
        }
        for _ in rank + 1..world {
            let (s, _) = listener.accept()?;
            configure(&s)?;
            let mut reader = BufReader::new(s.try_clone()?);
            let hello = read_record(&mut reader, usize::MAX)?;
            let peer = hello.src as usize;
            if peer <= rank || peer >= world || writers[peer].is_some() {
                return Err(TransportError::Handshake(format!("unexpected mesh hello from {peer}")));
            }
            readers[peer] = Some(reader);
            writers[peer] = Some(s);
        }
        Ok(Self { rank, readers, writers })
    }
}

impl Transport for TcpEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.writers.len()
    }

    fn send(&mut self, env: Envelope) -> Result<(), TransportError> {
        let dst = env.dst as usize;
        self.check_peer(dst)?;
        let w = self.writers[dst].as_mut().expect("mesh connects every peer");
        write_record(w, &env)
    }

    fn recv(&mut self, src: usize) -> Result<Envelope, TransportError> {
        self.check_peer(src)?;
        let r = self.readers[src].as_mut().expect("mesh connects every peer");
        read_record(r, src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Comm;
    use std::thread;

    type Startup = (
        Result<Vec<Link>, TransportError>,
        Vec<Result<TcpEndpoint, TransportError>>,
    );

    fn spawn_workers(n: usize, digest: u64, coordinator_digest: u64) -> Startup {
        let rv = Rendezvous::bind("127.0.0.1:0").unwrap();
        let addr = rv.local_addr().unwrap();
        let handles: Vec<_> = (0..n)
            .map(|_| thread::spawn(move || TcpEndpoint::join(addr, digest).map(|(_, ep)| ep)))
            .collect();
        let links = rv.accept_workers(n, coordinator_digest);
        let eps = handles.into_iter().map(|h| h.join().unwrap()).collect();
        (links, eps)
    }

    #[test]
    fn mesh_all_gather_over_tcp() {
        let (links, eps) = spawn_workers(4, 42, 42);
        let _links = links.unwrap();
        let handles: Vec<_> = eps
            .into_iter()
            .map(|ep| {
                thread::spawn(move || {
                    let ep = ep.unwrap();
                    let mut c = Comm::new(Box::new(ep));
                    let r = c.rank() as f32;
                    let gathered = c.all_gather(0, vec![r; 2]).unwrap();
                    let halos = c.exchange_halos(3, &[r], &[-r]).unwrap();
                    (c.rank(), gathered, halos)
                })
            })
            .collect();
        for h in handles {
            let (rank, gathered, (pre, post)) = h.join().unwrap();
            assert_eq!(gathered, (0..4).map(|i| vec![i as f32; 2]).collect::<Vec<_>>());
            assert_eq!(pre, (rank > 0).then(|| vec![rank as f32 - 1.0]));
            assert_eq!(post, (rank < 3).then(|| vec![-(rank as f32 + 1.0)]));
        }
    }

    #[test]
    fn digest_mismatch_rejected() {
        let (links, eps) = spawn_workers(1, 7, 8);
        assert!(matches!(links, Err(TransportError::Handshake(_))));
        assert!(eps[0].is_err());
    }

    #[test]
    fn record_round_trip() {
        let env = Envelope::new(MsgType::HaloBwd, 9, 1, 2, vec![0.25, -3.0]);
        let mut buf = Vec::new();
        write_record(&mut buf, &env).unwrap();
        assert_eq!(u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize, buf.len() - 4);
        assert_eq!(read_record(&mut &buf[..], 1).unwrap(), env);
        assert!(matches!(
            read_record(&mut &buf[..10], 1),
            Err(TransportError::Disconnected { .. })
        ));
    }
}
