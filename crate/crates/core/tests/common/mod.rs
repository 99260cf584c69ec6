#![allow(dead_code)]

use std::thread;

use clipflow::metrics::WorkerMetrics;
use clipflow::parallel::{partition, ClipPlan};
use clipflow::tensor::{concat_frames, LatentTensor};
use clipflow::transport::{Comm, InProcMesh};

/// Splits `x` over `n` in-process workers, runs `f` on each clip and joins
/// the outputs in worker order.
pub fn spmd<F>(x: &LatentTensor, n: usize, f: F) -> (LatentTensor, Vec<WorkerMetrics>)
where
    F: Fn(&mut Comm, &ClipPlan, &LatentTensor) -> LatentTensor + Send + Sync + Clone + 'static,
{
    let (clips, plan) = partition(x, n).unwrap();
    let handles: Vec<_> = InProcMesh::build(n)
        .into_iter()
        .zip(clips)
        .map(|(ep, clip)| {
            let f = f.clone();
            thread::spawn(move || {
                let mut comm = Comm::new(Box::new(ep));
                let out = f(&mut comm, &plan, &clip);
                (out, comm.take_metrics())
            })
        })
        .collect();
    let (parts, metrics): (Vec<_>, Vec<_>) = handles.into_iter().map(|h| h.join().unwrap()).unzip();
    (concat_frames(&parts).unwrap(), metrics)
}

/// SplitMix64 written out from its published constants, kept apart from
/// the library's generator.
pub struct RefSplitMix(pub u64);

impl RefSplitMix {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f32 {
        let u = (self.next() >> 40) as f32 / (1u32 << 24) as f32;
        2.0 * u - 1.0
    }
}
