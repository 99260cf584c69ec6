//! Per-worker operation programs for one layer's context synchronization,
//! and a simulator that runs them under strict rendezvous semantics.

use super::{ChannelConstraint, MsgType, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Send,
    Recv,
}

/// One blocking point-to-point operation in a worker's program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Op {
    pub kind: OpKind,
    pub peer: usize,
    pub stage: Stage,
    pub round: usize,
    pub msg: MsgType,
}

impl Op {
    fn send(peer: usize, stage: Stage, round: usize, msg: MsgType) -> Self {
        Self {
            kind: OpKind::Send,
            peer,
            stage,
            round,
            msg,
        }
    }

    fn recv(peer: usize, stage: Stage, round: usize, msg: MsgType) -> Self {
        Self {
            kind: OpKind::Recv,
            peer,
            stage,
            round,
            msg,
        }
    }

    fn matches(&self, other: &Op) -> bool {
        self.msg == other.msg && self.round == other.round
    }
}

/// Ring all-gather: `n - 1` rounds, each worker sending to its successor and
/// receiving from its predecessor. Even ranks send first, odd ranks receive
/// first, so every ring has at least one receiver ready and cannot lock up.
pub fn ring_all_gather_ops(rank: usize, n: usize) -> Vec<Op> {
    if n <= 1 {
        return Vec::new();
    }
    let next = (rank + 1) % n;
    let prev = (rank + n - 1) % n;
    (0..n - 1)
        .flat_map(|round| {
            let s = Op::send(next, Stage::T1, round, MsgType::Gather);
            let r = Op::recv(prev, Stage::T1, round, MsgType::Gather);
            if rank.is_multiple_of(2) {
                [s, r]
            } else {
                [r, s]
            }
        })
        .collect()
}

/// Halo swap for `stage` (T2 pairs `(i, i+1)` with `i` even, T3 with `i`
/// odd). The lower rank sends its trailing frames then receives; the higher
/// rank receives then sends its leading frames.
pub fn pair_exchange_ops(rank: usize, n: usize, stage: Stage) -> Vec<Op> {
    let lower_parity = match stage {
        Stage::T2 => 0,
        Stage::T3 => 1,
        _ => return Vec::new(),
    };
    if rank % 2 == lower_parity {
        if rank + 1 < n {
            let p = rank + 1;
            return vec![
                Op::send(p, stage, 0, MsgType::HaloFwd),
                Op::recv(p, stage, 0, MsgType::HaloBwd),
            ];
        }
    } else if rank >= 1 {
        let p = rank - 1;
        return vec![
            Op::recv(p, stage, 0, MsgType::HaloFwd),
            Op::send(p, stage, 0, MsgType::HaloBwd),
        ];
    }
    Vec::new()
}

/// The neighbour exchange in the order of the published pseudocode: with
/// 1-based ids, odd devices `recv(i+1), send(i+1), recv(i-1), send(i-1)`,
/// even devices the mirror image. Every branch opens with a receive.
pub fn literal_pair_exchange_ops(rank: usize, n: usize) -> Vec<Op> {
    let one_based = rank + 1;
    let dir = |peer: usize, kind: OpKind, stage: Stage| {
        // Lower-to-higher traffic is a forward halo.
        let fwd = match kind {
            OpKind::Send => peer > rank,
            OpKind::Recv => peer < rank,
        };
        let msg = if fwd { MsgType::HaloFwd } else { MsgType::HaloBwd };
        Op {
            kind,
            peer,
            stage,
            round: 0,
            msg,
        }
    };
    let next = (rank + 1 < n).then_some(rank + 1);
    let prev = rank.checked_sub(1);
    let order = if one_based % 2 == 1 { [next, prev] } else { [prev, next] };
    let mut ops = Vec::new();
    for (k, peer) in order.into_iter().enumerate() {
        let stage = if k == 0 { Stage::T2 } else { Stage::T3 };
        if let Some(p) = peer {
            ops.push(dir(p, OpKind::Recv, stage));
            ops.push(dir(p, OpKind::Send, stage));
        }
    }
    ops
}

/// Every worker's program for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub programs: Vec<Vec<Op>>,
}

impl Schedule {
    /// T1 ring all-gather followed by the T2 and T3 pair exchanges.
    pub fn shipped(n: usize) -> Self {
        Self {
            programs: (0..n)
                .map(|r| {
                    let mut ops = ring_all_gather_ops(r, n);
                    ops.extend(pair_exchange_ops(r, n, Stage::T2));
                    ops.extend(pair_exchange_ops(r, n, Stage::T3));
                    ops
                })
                .collect(),
        }
    }

    /// T1 ring all-gather followed by the pseudocode's neighbour exchange.
    pub fn literal_pseudocode(n: usize) -> Self {
        Self {
            programs: (0..n)
                .map(|r| {
                    let mut ops = ring_all_gather_ops(r, n);
                    ops.extend(literal_pair_exchange_ops(r, n));
                    ops
                })
                .collect(),
        }
    }

    pub fn transfer_count(&self) -> usize {
        self.programs
            .iter()
            .flatten()
            .filter(|op| op.kind == OpKind::Send)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// All programs ran to completion in `steps` parallel rendezvous steps.
    Completed { steps: usize, transfers: usize },
    /// Blocked workers waiting on each other: `cycle[k]` waits on `cycle[k + 1]`
    /// and the last waits on the first.
    Deadlock { cycle: Vec<usize> },
    /// A worker waits on a peer whose program already finished.
    Unmatched { worker: usize, peer: usize },
    /// Two workers met with operations that carry different messages.
    Mismatch { worker: usize, peer: usize },
    /// A worker took part in two transfers at once.
    Exclusivity { log: Vec<String> },
}

impl Verdict {
    pub fn is_completed(&self) -> bool {
        matches!(self, Verdict::Completed { .. })
    }
}

/// Simulates `schedule` step by step: in each step every pair of workers
/// whose next operations are a matching send/receive completes one transfer.
/// Any state where no pair can proceed before all programs finish is
/// reported with its wait-for structure.
pub fn validate_schedule(n: usize, schedule: &Schedule) -> Verdict {
    assert_eq!(schedule.programs.len(), n, "one program per worker");
    let progs = &schedule.programs;
    let mut pc = vec![0usize; n];
    let mut steps = 0;
    let mut transfers = 0;
    let constraint = ChannelConstraint::new(n);
    let head = |pc: &[usize], w: usize| progs[w].get(pc[w]).copied();

    loop {
        if (0..n).all(|w| head(&pc, w).is_none()) {
            let log = constraint.violations();
            if !log.is_empty() {
                return Verdict::Exclusivity { log };
            }
            return Verdict::Completed { steps, transfers };
        }
        let mut pairs = Vec::new();
        for w in 0..n {
            let Some(op) = head(&pc, w) else { continue };
            if op.kind != OpKind::Send {
                continue;
            }
            let Some(other) = head(&pc, op.peer) else { continue };
            if other.kind == OpKind::Recv && other.peer == w {
                if !op.matches(&other) {
                    return Verdict::Mismatch {
                        worker: w,
                        peer: op.peer,
                    };
                }
                pairs.push((w, op.peer));
            }
        }
        if pairs.is_empty() {
            return stuck(n, &pc, progs);
        }
        for &(a, b) in &pairs {
            constraint.enter(a, b);
            constraint.enter(b, a);
        }
        for &(a, b) in &pairs {
            constraint.exit(a);
            constraint.exit(b);
            pc[a] += 1;
            pc[b] += 1;
        }
        transfers += pairs.len();
        steps += 1;
    }
}

fn stuck(n: usize, pc: &[usize], progs: &[Vec<Op>]) -> Verdict {
    let waits_on = |w: usize| progs[w].get(pc[w]).map(|op| op.peer);
    for start in 0..n {
        if waits_on(start).is_none() {
            continue;
        }
        let mut path = vec![start];
        let mut cur = start;
        loop {
            let Some(next) = waits_on(cur) else {
                return Verdict::Unmatched {
                    worker: *path.last().unwrap_or(&start),
                    peer: cur,
                };
            };
            if progs[next].get(pc[next]).is_none() {
                return Verdict::Unmatched {
                    worker: cur,
                    peer: next,
                };
            }
            if let Some(pos) = path.iter().position(|&w| w == next) {
                return Verdict::Deadlock {
                    cycle: path[pos..].to_vec(),
                };
            }
            path.push(next);
            cur = next;
        }
    }
    unreachable!("stuck() called with every program finished")
}
