//! Timing of the sliding-histogram entropy filter against the direct one.
//! Informational only; run with `cargo bench -p medgrad-core`.

use std::hint::black_box;
use std::time::Instant;

use medgrad_core::explain::{local_entropy_fast, local_entropy_ref, Gray};
use medgrad_core::numerics::Rng;

fn time<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_secs_f64() / reps as f64
}

fn main() {
    let side = 256;
    let mut rng = Rng::new(1);
    let gray = Gray::new(side, side, (0..side * side).map(|_| rng.uniform() as f32).collect()).unwrap();
    for radius in [2, 5, 9] {
        let fast = time(5, || {
            black_box(local_entropy_fast(&gray, radius, 32).unwrap());
        });
        let reference = time(2, || {
            black_box(local_entropy_ref(&gray, radius, 32).unwrap());
        });
        println!(
            "{side}x{side} r={radius}: fast {:.2} ms, reference {:.2} ms, speedup {:.1}x",
            fast * 1e3,
            reference * 1e3,
            reference / fast
        );
    }
}
