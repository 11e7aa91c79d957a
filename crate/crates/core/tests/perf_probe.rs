//! Manual throughput probe, ignored by default. Run with
//! `cargo test -p subtrain-core --test perf_probe -- --ignored --nocapture`
//! to see how fast forward/backward passes are on this machine — useful
//! when sizing training recipes for a time budget.

use std::time::Instant;

use ndarray::Array2;
use subtrain_core::nn::{backward, init_params};
use subtrain_core::rng::Stream;
use subtrain_core::{Architecture, Batch};

#[test]
#[ignore = "manual probe, prints timing only"]
fn forward_backward_throughput() {
    for desc in ["fc:784-200-200-10", "lenet:28x28x1"] {
        let arch: Architecture = desc.parse().unwrap();
        let params = init_params(&arch, 1);
        let mut s = Stream::new(2);
        let n = 128;
        let inputs = Array2::from_shape_fn((n, arch.input_len()), |_| s.uniform());
        let labels: Vec<u8> = (0..n).map(|_| s.below(10) as u8).collect();
        let batch = Batch { inputs, labels };

        // Warm up, then time enough steps for a stable figure.
        backward(&arch, &params, &batch).unwrap();
        let reps = 20;
        let t0 = Instant::now();
        for _ in 0..reps {
            backward(&arch, &params, &batch).unwrap();
        }
        let per_step = t0.elapsed().as_secs_f64() / reps as f64;
        let steps_per_epoch = 60_000.0 / n as f64;
        println!(
            "{desc}: {:.1} ms per batch-{n} step, {:.1} s per 60k-example epoch",
            per_step * 1e3,
            per_step * steps_per_epoch
        );
    }
}
