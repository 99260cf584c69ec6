//! Four workers meshed over loopback TCP (threads here, separate processes
//! under `vinf run --transport tcp`), checked against the in-process run.

use std::thread;

use clipflow::config::RunConfig;
use clipflow::parallel::partition;
use clipflow::pipeline::{build_model, run_inproc, worker_run, Mode, SyncMode};
use clipflow::tensor::{concat_frames, tensor_from_seed};
use clipflow::transport::tcp::{Rendezvous, TcpEndpoint};
use clipflow::transport::Comm;

fn main() {
    let mut cfg = RunConfig {
        workers: 4,
        ..Default::default()
    };
    cfg.denoise.steps = 5;
    let plan = cfg.validate().unwrap();
    let model = build_model(&cfg.model, cfg.dims.channels);
    let x = tensor_from_seed(cfg.dims, cfg.seed).unwrap();
    let mode = Mode::Denoise(cfg.denoise);

    let rendezvous = Rendezvous::bind("127.0.0.1:0").unwrap();
    let addr = rendezvous.local_addr().unwrap();
    let digest = cfg.digest();
    let joiners: Vec<_> = (0..cfg.workers)
        .map(|_| thread::spawn(move || TcpEndpoint::join(addr, digest).unwrap().1))
        .collect();
    let _links = rendezvous.accept_workers(cfg.workers, digest).unwrap();
    let mut endpoints: Vec<_> = joiners.into_iter().map(|h| h.join().unwrap()).collect();
    endpoints.sort_by_key(clipflow::transport::Transport::rank);

    let (clips, _) = partition(&x, cfg.workers).unwrap();
    let handles: Vec<_> = endpoints
        .into_iter()
        .zip(clips)
        .map(|(ep, clip)| {
            let model = model.clone();
            thread::spawn(move || {
                let mut comm = Comm::new(Box::new(ep));
                worker_run(&mut comm, &plan, &model, SyncMode::FULL, &clip, mode).unwrap()
            })
        })
        .collect();
    let parts: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let tcp = concat_frames(&parts).unwrap();
    let inproc = run_inproc(&model, mode, SyncMode::FULL, &x, cfg.workers, false)
        .unwrap()
        .output;
    println!("tcp == inproc bitwise: {}", tcp == inproc);
}
