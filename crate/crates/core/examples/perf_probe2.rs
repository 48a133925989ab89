//! Backward-pass breakdown per conv stage.
use std::time::Instant;
use umafd_core::ops::{col2im2d, conv3d_backward, conv3d_forward, im2col2d, ConvShape};
use umafd_core::tensor::Tensor4;

fn main() {
    let shapes = [
        (ConvShape { cin: 3, cout: 16, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) }, (8, 64, 64)),
        (ConvShape { cin: 16, cout: 16, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) }, (8, 32, 32)),
        (ConvShape { cin: 16, cout: 16, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) }, (8, 16, 16)),
    ];
    for (shape, (t, h, w)) in &shapes {
        let x = Tensor4::<f32>::from_vec(shape.cin, *t, *h, *w, vec![0.1; shape.cin * t * h * w]).unwrap();
        let wts = vec![0.01f32; shape.weight_len()];
        let bs = vec![0.0f32; shape.cout];
        let (y, col) = conv3d_forward(&wts, &bs, &x, shape).unwrap();
        let dy = y.clone();
        let mut dw = vec![0.0f32; wts.len()];
        let mut db = vec![0.0f32; bs.len()];
        let reps = 300;

        let t0 = Instant::now();
        for _ in 0..reps {
            let _ = conv3d_backward(&wts, &col, &dy, shape, (*t, *h, *w), &mut dw, &mut db, false).unwrap();
        }
        let dwonly = t0.elapsed().as_secs_f64() / reps as f64;

        let t1 = Instant::now();
        for _ in 0..reps {
            let _ = conv3d_backward(&wts, &col, &dy, shape, (*t, *h, *w), &mut dw, &mut db, true).unwrap();
        }
        let full = t1.elapsed().as_secs_f64() / reps as f64;

        let t2 = Instant::now();
        for _ in 0..reps {
            let _ = col2im2d(&col, shape, (*t, *h, *w)).unwrap();
        }
        let c2i = t2.elapsed().as_secs_f64() / reps as f64;

        let t3 = Instant::now();
        for _ in 0..reps {
            let _ = im2col2d(&x, shape).unwrap();
        }
        let i2c = t3.elapsed().as_secs_f64() / reps as f64;

        println!(
            "cin={} {}x{}x{}: dw-only {:.3} ms, full {:.3} ms, col2im {:.3} ms, im2col {:.3} ms",
            shape.cin, t, h, w, dwonly * 1e3, full * 1e3, c2i * 1e3, i2c * 1e3
        );
    }
}
