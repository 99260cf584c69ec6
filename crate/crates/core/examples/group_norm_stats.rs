//! Why distributed group norm needs two gather rounds.
//!
//! Two clips `{0, 0}` and `{2, 2}` have zero spread each, so averaging
//! per-clip deviations says the video is constant. Gathering the means
//! first and then the squared deviations from the global mean recovers the
//! true standard deviation of 1.

use std::thread;

use clipflow::ops::{group_norm, GroupNormParams, GroupStats};
use clipflow::parallel::{group_norm_parallel, partition};
use clipflow::tensor::{concat_frames, Dims, LatentTensor};
use clipflow::transport::{Comm, InProcMesh};

fn main() {
    let x = LatentTensor::from_vec(Dims::new(4, 1, 1, 1), vec![0.0, 0.0, 2.0, 2.0]).unwrap();
    let p = GroupNormParams::plain(1, 1).unwrap();
    let (clips, _) = partition(&x, 2).unwrap();

    let naive: f32 = clips
        .iter()
        .map(|c| GroupStats::mean_sq_dev(c, &p, &GroupStats::means(c, &p))[0].sqrt())
        .sum::<f32>()
        / 2.0;
    println!("average of per-clip std: {naive}");

    let handles: Vec<_> = InProcMesh::build(2)
        .into_iter()
        .zip(clips)
        .map(|(ep, clip)| {
            let p = p.clone();
            thread::spawn(move || group_norm_parallel(&mut Comm::new(Box::new(ep)), &clip, &p).unwrap())
        })
        .collect();
    let parts: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let got = concat_frames(&parts).unwrap();
    println!("two-round output:  {:?}", got.as_slice());
    println!("whole-video norm:  {:?}", group_norm(&x, &p).as_slice());
}
