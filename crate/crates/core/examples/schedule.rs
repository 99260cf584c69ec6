//! Simulates the per-layer exchange schedule under blocking rendezvous.

use clipflow::transport::{validate_schedule, Schedule, Verdict};

fn main() {
    for n in [1, 2, 3, 4, 8, 16] {
        let v = validate_schedule(n, &Schedule::shipped(n));
        println!("shipped  N={n:>2}: {v:?}");
    }
    // Both partners of a pair start with a receive: nobody ever sends.
    let v = validate_schedule(2, &Schedule::literal_pseudocode(2));
    println!("recv-first N= 2: {v:?}");
    assert!(matches!(v, Verdict::Deadlock { .. }));
}
