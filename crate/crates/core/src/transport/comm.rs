use std::sync::Arc;
use std::time::Instant;

use super::schedule::{pair_exchange_ops, ring_all_gather_ops, OpKind};
use super::{make_tag, ChannelConstraint, Envelope, MsgType, Stage, Transport, TransportError};
use crate::metrics::{LayerKind, WorkerMetrics};

/// Payloads received from the previous and the next worker.
pub type HaloPair = (Option<Vec<f32>>, Option<Vec<f32>>);

/// A worker's communicator: tags every message with the current run
/// position, meters traffic by layer kind, and runs the collectives.
pub struct Comm {
    transport: Box<dyn Transport>,
    constraint: Option<Arc<ChannelConstraint>>,
    metrics: WorkerMetrics,
    step: u32,
    layer: u16,
    kind: LayerKind,
}

impl Comm {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        let rank = transport.rank();
        Self {
            transport,
            constraint: None,
            metrics: WorkerMetrics::new(rank),
            step: 0,
            layer: 0,
            kind: LayerKind::Control,
        }
    }

    /// Enables exclusivity checking against a constraint shared by all workers.
    pub fn with_constraint(mut self, constraint: Arc<ChannelConstraint>) -> Self {
        self.constraint = Some(constraint);
        self
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn world_size(&self) -> usize {
        self.transport.world_size()
    }

    /// Sets the step/layer used to tag subsequent messages and the layer kind
    /// their bytes are billed to.
    pub fn set_position(&mut self, step: u32, layer: u16, kind: LayerKind) {
        self.step = step;
        self.layer = layer;
        self.kind = kind;
    }

    pub fn metrics(&self) -> &WorkerMetrics {
        &self.metrics
    }

    pub fn metrics_mut(&mut self) -> &mut WorkerMetrics {
        &mut self.metrics
    }

    pub fn take_metrics(&mut self) -> WorkerMetrics {
        let fresh = WorkerMetrics::new(self.rank());
        std::mem::replace(&mut self.metrics, fresh)
    }

    pub fn exclusivity_violations(&self) -> usize {
        self.constraint.as_ref().map_or(0, |c| c.violation_count())
    }

    fn guarded<T>(
        &mut self,
        peer: usize,
        f: impl FnOnce(&mut Box<dyn Transport>) -> Result<T, TransportError>,
    ) -> Result<T, TransportError> {
        let rank = self.rank();
        if let Some(c) = &self.constraint {
            if !c.enter(rank, peer) {
                return Err(TransportError::Exclusivity(format!(
                    "worker {rank} already inside a transfer when contacting {peer}"
                )));
            }
        }
        let out = f(&mut self.transport);
        if let Some(c) = &self.constraint {
            c.exit(rank);
        }
        out
    }

    pub fn send(&mut self, dst: usize, msg: MsgType, sub: u16, payload: Vec<f32>) -> Result<(), TransportError> {
        let env = Envelope::new(
            msg,
            make_tag(self.step, self.layer, sub),
            self.rank() as u32,
            dst as u32,
            payload,
        );
        let bytes = env.payload_len();
        self.guarded(dst, |t| t.send(env))?;
        let count = self.metrics.traffic_mut(self.kind);
        count.bytes_sent += bytes;
        count.messages_sent += 1;
        Ok(())
    }

    /// Receives the next message from `src` and checks its type and tag.
    pub fn recv(&mut self, src: usize, msg: MsgType, sub: u16) -> Result<Vec<f32>, TransportError> {
        let env = self.guarded(src, |t| t.recv(src))?;
        if env.msg_type != msg {
            return Err(TransportError::TypeMismatch {
                src,
                expected: msg,
                actual: env.msg_type,
            });
        }
        let expected = make_tag(self.step, self.layer, sub);
        if env.tag != expected {
            return Err(TransportError::TagMismatch {
                src,
                expected,
                actual: env.tag,
            });
        }
        Ok(env.payload)
    }

    /// Ring all-gather. `collective` distinguishes several gathers inside one
    /// layer. Returns every worker's payload in worker order; payloads may
    /// differ in length (each envelope carries its own length).
    pub fn all_gather(&mut self, collective: u8, payload: Vec<f32>) -> Result<Vec<Vec<f32>>, TransportError> {
        let n = self.world_size();
        let rank = self.rank();
        let mut parts: Vec<Option<Vec<f32>>> = vec![None; n];
        parts[rank] = Some(payload);
        let start = Instant::now();
        for op in ring_all_gather_ops(rank, n) {
            let sub = (collective as u16) << 8 | op.round as u16;
            let res = match op.kind {
                OpKind::Send => {
                    let idx = (rank + n - op.round) % n;
                    let chunk = parts[idx].clone().expect("ring forwards only chunks it holds");
                    self.send(op.peer, MsgType::Gather, sub, chunk)
                }
                OpKind::Recv => {
                    let idx = (rank + 2 * n - 1 - op.round) % n;
                    self.recv(op.peer, MsgType::Gather, sub).map(|p| {
                        parts[idx] = Some(p);
                    })
                }
            };
            res.map_err(|e| e.in_stage(rank, Stage::T1, op.round))?;
        }
        self.metrics
            .add_stage_time(Stage::T1, start.elapsed().as_nanos() as u64);
        Ok(parts
            .into_iter()
            .map(|p| p.expect("ring delivers every chunk"))
            .collect())
    }

    /// T2 then T3 neighbour swap. `trailing` goes to the next worker (its
    /// `c_pre`), `leading` to the previous one (its `c_post`). `digest` is
    /// the layer-spec digest; a peer running a different layer spec produces
    /// a tag mismatch. Returns `(c_pre, c_post)` payloads where a neighbour exists.
    pub fn exchange_halos(
        &mut self,
        digest: u16,
        trailing: &[f32],
        leading: &[f32],
    ) -> Result<HaloPair, TransportError> {
        let n = self.world_size();
        let rank = self.rank();
        let (mut pre, mut post) = (None, None);
        for stage in [Stage::T2, Stage::T3] {
            let start = Instant::now();
            for op in pair_exchange_ops(rank, n, stage) {
                let res = match (op.kind, op.msg) {
                    (OpKind::Send, MsgType::HaloFwd) => self.send(op.peer, op.msg, digest, trailing.to_vec()),
                    (OpKind::Send, _) => self.send(op.peer, op.msg, digest, leading.to_vec()),
                    (OpKind::Recv, MsgType::HaloFwd) => self.recv(op.peer, op.msg, digest).map(|p| pre = Some(p)),
                    (OpKind::Recv, _) => self.recv(op.peer, op.msg, digest).map(|p| post = Some(p)),
                };
                res.map_err(|e| e.in_stage(rank, stage, 0))?;
            }
            self.metrics.add_stage_time(stage, start.elapsed().as_nanos() as u64);
        }
        Ok((pre, post))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::InProcMesh;
    use std::thread;

    fn run_all<T: Send + 'static>(
        n: usize,
        f: impl Fn(&mut Comm) -> T + Send + Sync + Clone + 'static,
    ) -> Vec<(T, WorkerMetrics)> {
        let handles: Vec<_> = InProcMesh::build(n)
            .into_iter()
            .map(|ep| {
                let f = f.clone();
                thread::spawn(move || {
                    let mut c = Comm::new(Box::new(ep));
                    let out = f(&mut c);
                    (out, c.take_metrics())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn all_gather_in_worker_order() {
        for n in [1, 2, 3, 4, 7] {
            let out = run_all(n, |c| c.all_gather(0, vec![c.rank() as f32]).unwrap());
            for (parts, _) in &out {
                let flat: Vec<f32> = parts.iter().flatten().copied().collect();
                assert_eq!(flat, (0..n).map(|i| i as f32).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn all_gather_uneven_sizes() {
        let out = run_all(3, |c| c.all_gather(1, vec![1.0; c.rank() + 1]).unwrap());
        for (parts, _) in out {
            assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 3]);
        }
    }

    #[test]
    fn ring_transfer_count_is_n_times_n_minus_one() {
        let out = run_all(8, |c| c.all_gather(0, vec![0.5]).unwrap());
        let msgs: u64 = out
            .iter()
            .map(|(_, m)| m.traffic(LayerKind::Control).messages_sent)
            .sum();
        assert_eq!(msgs, 8 * 7);
    }

    #[test]
    fn halos_swap_between_neighbours() {
        let out = run_all(4, |c| {
            let r = c.rank() as f32;
            c.exchange_halos(7, &[r + 0.5], &[r + 0.25]).unwrap()
        });
        for (rank, ((pre, post), _)) in out.into_iter().enumerate() {
            assert_eq!(pre, (rank > 0).then(|| vec![rank as f32 - 1.0 + 0.5]));
            assert_eq!(post, (rank < 3).then(|| vec![rank as f32 + 1.0 + 0.25]));
        }
    }

    #[test]
    fn mismatched_digest_is_protocol_error() {
        let out = run_all(2, |c| {
            let digest = if c.rank() == 0 { 1 } else { 2 };
            c.exchange_halos(digest, &[1.0], &[2.0]).err()
        });
        let err = out[1].0.as_ref().expect("higher rank sees the bad tag first");
        assert!(err.is_protocol());
        assert!(err.to_string().contains("T2"));
    }

    #[test]
    fn reordered_tags_name_both() {
        let out = run_all(2, |c| {
            if c.rank() == 0 {
                c.set_position(0, 2, LayerKind::Conv);
                c.send(1, MsgType::Gather, 0, vec![1.0]).map(|_| ())
            } else {
                c.set_position(0, 1, LayerKind::Conv);
                c.recv(0, MsgType::Gather, 0).map(|_| ())
            }
        });
        match &out[1].0 {
            Err(TransportError::TagMismatch { expected, actual, .. }) => {
                assert_eq!(*expected, make_tag(0, 1, 0));
                assert_eq!(*actual, make_tag(0, 2, 0));
            }
            other => panic!("expected tag mismatch, got {other:?}"),
        }
    }

    #[test]
    fn exclusivity_holds_in_validating_mode() {
        let constraint = Arc::new(ChannelConstraint::new(4));
        let handles: Vec<_> = InProcMesh::build(4)
            .into_iter()
            .map(|ep| {
                let c = constraint.clone();
                thread::spawn(move || {
                    let mut comm = Comm::new(Box::new(ep)).with_constraint(c);
                    comm.all_gather(0, vec![1.0; 3]).unwrap();
                    comm.exchange_halos(0, &[1.0], &[2.0]).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(constraint.violation_count(), 0);
    }
}
