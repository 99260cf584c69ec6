//! Splits a latent along the frame axis and joins it back.

use clipflow::parallel::partition;
use clipflow::tensor::{concat_frames, tensor_from_seed, Dims};

fn main() {
    let x = tensor_from_seed(Dims::new(16, 2, 2, 4), 0).expect("valid dims");
    for n in [1, 2, 4] {
        let (clips, plan) = partition(&x, n).expect("N divides F");
        let ranges: Vec<String> = plan
            .ranges()
            .iter()
            .map(|r| format!("[{}, {})", r.start, r.end()))
            .collect();
        println!("N={n} F_clip={} ranges {}", plan.clip_frames(), ranges.join(" "));
        assert_eq!(concat_frames(&clips).unwrap(), x);
    }
    match partition(&x, 3) {
        Ok(_) => unreachable!(),
        Err(e) => println!("N=3: {e}"),
    }
}
