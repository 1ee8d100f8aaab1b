// Quick throughput probe; run with --ignored to size training configs.
use std::time::Instant;

use stereo_selftrain::nn::{conv2d, conv2d_backward, ConvSpec, Tensor};

#[test]
#[ignore]
fn conv_throughput() {
    // GRU-sized conv: 49 in, 24 out, 3x3, on a 12x16 quarter grid.
    let spec = ConvSpec::new(24, 49, 3, 1, 1);
    let mut x = Tensor::zeros(49, 12, 16);
    for (i, v) in x.data.iter_mut().enumerate() {
        *v = (i as f64 * 0.001).sin();
    }
    let w = vec![0.01; spec.weight_len()];
    let b = vec![0.0; spec.out_ch];
    let flops_per = 2.0 * (spec.out_ch * spec.in_ch * 9 * 12 * 16) as f64;
    let reps = 2000;
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let y = conv2d(&x, &w, &b, &spec);
        acc += y.data[0];
    }
    let dt = t.elapsed().as_secs_f64();
    println!(
        "fwd: {:.3} ms/call, {:.2} GFLOP/s (acc {acc:.3})",
        dt / reps as f64 * 1e3,
        flops_per * reps as f64 / dt / 1e9
    );

    let y = conv2d(&x, &w, &b, &spec);
    let reps = 800;
    let t = Instant::now();
    let mut acc2 = 0.0;
    for _ in 0..reps {
        let g = conv2d_backward(&x, &w, &y, &spec);
        acc2 += g.dw[0];
    }
    let dt = t.elapsed().as_secs_f64();
    println!(
        "bwd: {:.3} ms/call, {:.2} GFLOP/s (acc {acc2:.3})",
        dt / reps as f64 * 1e3,
        2.0 * flops_per * reps as f64 / dt / 1e9
    );
}
