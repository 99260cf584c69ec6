//! Temporal convolution on four workers, each fetching `(k-1)/2` frames from
//! its neighbours, compared with the single-process convolution.

use std::thread;

use clipflow::metrics::LayerKind;
use clipflow::ops::{temporal_conv, ConvKernel};
use clipflow::parallel::{conv_parallel, partition, sync_contexts, LayerHaloSpec};
use clipflow::tensor::{concat_frames, max_abs_diff, tensor_from_seed, Dims};
use clipflow::transport::{Comm, InProcMesh};

fn main() {
    let x = tensor_from_seed(Dims::new(32, 4, 4, 8), 1).unwrap();
    let kern = ConvKernel::from_seed(5, 8, 7, 0.35).unwrap();
    let (clips, plan) = partition(&x, 4).unwrap();

    let handles: Vec<_> = InProcMesh::build(4)
        .into_iter()
        .zip(clips)
        .map(|(ep, clip)| {
            let kern = kern.clone();
            thread::spawn(move || {
                let mut comm = Comm::new(Box::new(ep));
                comm.set_position(0, 0, LayerKind::Conv);
                let spec = LayerHaloSpec::conv(kern.radius());
                let ctx = sync_contexts(&mut comm, &plan, &spec, &clip).unwrap();
                let out = conv_parallel(&plan, comm.rank(), &clip, &ctx, &kern).unwrap();
                println!(
                    "worker {}: c_pre {} frames, c_post {} frames, sent {} bytes",
                    comm.rank(),
                    ctx.c_pre.frames(),
                    ctx.c_post.frames(),
                    comm.metrics().total_bytes()
                );
                out
            })
        })
        .collect();
    let parts: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let got = concat_frames(&parts).unwrap();
    println!(
        "max |distributed - sequential| = {:e}",
        max_abs_diff(&got, &temporal_conv(&x, &kern)).unwrap()
    );
}
