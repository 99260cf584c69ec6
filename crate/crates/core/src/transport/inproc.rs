use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};

use super::{Envelope, Transport, TransportError};

/// Builds `n` endpoints connected pairwise by zero-capacity channels, so
/// every send is a rendezvous with the matching receive.
pub struct InProcMesh;

impl InProcMesh {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

    pub fn build(n: usize) -> Vec<InProcEndpoint> {
        Self::build_with_timeout(n, Self::DEFAULT_TIMEOUT)
    }

    pub fn build_with_timeout(n: usize, timeout: Duration) -> Vec<InProcEndpoint> {
        let mut senders: Vec<Vec<Option<Sender<Envelope>>>> = (0..n).map(|_| vec![None; n]).collect();
        let mut receivers: Vec<Vec<Option<Receiver<Envelope>>>> = (0..n).map(|_| vec![None; n]).collect();
        for src in 0..n {
            for dst in 0..n {
                if src != dst {
                    let (tx, rx) = bounded(0);
                    senders[src][dst] = Some(tx);
                    receivers[dst][src] = Some(rx);
                }
            }
        }
        senders
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(rank, (to, from))| InProcEndpoint {
                rank,
                to,
                from,
                timeout,
            })
            .collect()
    }
}

pub struct InProcEndpoint {
    rank: usize,
    to: Vec<Option<Sender<Envelope>>>,
    from: Vec<Option<Receiver<Envelope>>>,
    timeout: Duration,
}

impl Transport for InProcEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.to.len()
    }

    fn send(&mut self, env: Envelope) -> Result<(), TransportError> {
        let dst = env.dst as usize;
        self.check_peer(dst)?;
        let tx = self.to[dst].as_ref().expect("channel exists for valid peer");
        match tx.send_timeout(env, self.timeout) {
            Ok(()) => Ok(()),
            Err(crossbeam_channel::SendTimeoutError::Timeout(_)) => Err(TransportError::Timeout { peer: dst }),
            Err(crossbeam_channel::SendTimeoutError::Disconnected(_)) => Err(TransportError::Disconnected {
                peer: dst,
                detail: "receiver dropped".into(),
            }),
        }
    }

    fn recv(&mut self, src: usize) -> Result<Envelope, TransportError> {
        self.check_peer(src)?;
        let rx = self.from[src].as_ref().expect("channel exists for valid peer");
        rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout { peer: src },
            RecvTimeoutError::Disconnected => TransportError::Disconnected {
                peer: src,
                detail: "sender dropped".into(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MsgType;

    #[test]
    fn self_send_rejected() {
        let mut eps = InProcMesh::build(2);
        let env = Envelope::new(MsgType::Control, 0, 0, 0, vec![]);
        assert!(matches!(
            eps[0].send(env),
            Err(TransportError::InvalidPeer { peer: 0, .. })
        ));
        assert!(eps[1].recv(5).is_err());
    }

    #[test]
    fn rendezvous_blocks_until_received() {
        let mut eps = InProcMesh::build_with_timeout(2, Duration::from_millis(50));
        let env = Envelope::new(MsgType::Control, 0, 0, 1, vec![1.0]);
        // Nobody is receiving, so a zero-capacity send cannot complete.
        assert!(matches!(eps[0].send(env), Err(TransportError::Timeout { peer: 1 })));
    }

    #[test]
    fn dropped_peer_reports_disconnect() {
        let mut eps = InProcMesh::build(2);
        let _ = eps.pop();
        assert!(matches!(eps[0].recv(1), Err(TransportError::Disconnected { .. })));
    }
}
