//! Throughput probe for conv shapes used by the reference backbone.
use std::time::Instant;
use umafd_core::ops::{conv3d_forward, conv3d_backward, gemm_nn, ConvShape};
use umafd_core::tensor::Tensor4;

fn main() {
    // Raw GEMM: stage-2 shape, f32: 16 x 432 x 2048
    let (m, k, n) = (16usize, 432usize, 2048usize);
    let a = vec![0.5f32; m * k];
    let b = vec![0.25f32; k * n];
    let mut c = vec![0.0f32; m * n];
    let reps = 400;
    let t0 = Instant::now();
    for _ in 0..reps {
        gemm_nn(m, k, n, 1.0, &a, &b, 0.0, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gf = (2.0 * m as f64 * k as f64 * n as f64 * reps as f64) / dt / 1e9;
    println!("gemm 16x432x2048 f32: {gf:.1} GFLOP/s");

    // Full conv stage timings, f32, input (3,8,64,64) then (16,8,32,32) etc.
    let shapes = [
        (ConvShape { cin: 3, cout: 16, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) }, (8, 64, 64)),
        (ConvShape { cin: 16, cout: 16, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) }, (8, 32, 32)),
        (ConvShape { cin: 16, cout: 16, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) }, (8, 16, 16)),
    ];
    let mut total_fwd = 0.0;
    let mut total_bwd = 0.0;
    for (shape, (t, h, w)) in &shapes {
        let x = Tensor4::<f32>::from_vec(shape.cin, *t, *h, *w, vec![0.1; shape.cin * t * h * w]).unwrap();
        let wts = vec![0.01f32; shape.weight_len()];
        let bs = vec![0.0f32; shape.cout];
        let reps = 200;
        let t0 = Instant::now();
        let mut col_keep = Vec::new();
        let mut y_keep = Tensor4::<f32>::zeros(1, 1, 1, 1);
        for _ in 0..reps {
            let (y, col) = conv3d_forward(&wts, &bs, &x, shape).unwrap();
            col_keep = col;
            y_keep = y;
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;
        let dy = y_keep.clone();
        let mut dw = vec![0.0f32; wts.len()];
        let mut db = vec![0.0f32; bs.len()];
        let t1 = Instant::now();
        for _ in 0..reps {
            let _ = conv3d_backward(&wts, &col_keep, &dy, shape, (*t, *h, *w), &mut dw, &mut db, true).unwrap();
        }
        let bwd = t1.elapsed().as_secs_f64() / reps as f64;
        println!(
            "conv cin={} {}x{}x{}: fwd {:.3} ms, bwd {:.3} ms",
            shape.cin, t, h, w, fwd * 1e3, bwd * 1e3
        );
        total_fwd += fwd;
        total_bwd += bwd;
    }
    println!("one stream fwd {:.3} ms, bwd {:.3} ms", total_fwd * 1e3, total_bwd * 1e3);
    // UMA-FD step ~ 3 streams fwd + ~2.6 streams bwd-equivalent.
    let step = 3.0 * total_fwd + 3.0 * total_bwd;
    println!("rough UMA-FD step {:.2} ms -> 6000 steps = {:.1} s", step * 1e3, step * 6000.0);
}
