//! Microbenchmark of the convolution kernels on surrogate layer shapes.
use resgrad_core::autodiff::{Graph, Tensor};
use std::time::Instant;

fn bench(name: &str, b: usize, cin: usize, cout: usize, d: usize, h: usize, w: usize, stride: usize, reps: usize) {
    let g = Graph::inference();
    let x = Tensor::from_vec(&[b, cin, d, h, w], vec![0.5; b * cin * d * h * w]).unwrap();
    let k = Tensor::from_vec(&[cout, cin, 3, 3, 3], vec![0.01; cout * cin * 27]).unwrap();
    let bias = Tensor::zeros(&[cout]);
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = g.conv3d(&x, &k, &bias, [stride; 3], [1; 3]).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let od = (d + 2 - 3) / stride + 1;
    let oh = (h + 2 - 3) / stride + 1;
    let ow = (w + 2 - 3) / stride + 1;
    let flops = 2.0 * (b * cout * od * oh * ow * cin * 27) as f64;
    println!("{name}: {:.3} ms, {:.2} Gflop/s", dt * 1e3, flops / dt / 1e9);
}

fn main() {
    // control encoder layers on the 16x16x8 twin, batch 20
    bench("enc L1 (2->16, 8x16x16, s1)", 20, 2, 16, 8, 16, 16, 1, 20);
    bench("enc L2 (16->32, 8x16x16, s2)", 20, 16, 32, 8, 16, 16, 2, 20);
    bench("enc L3 (32->32, 4x8x8, s1)", 20, 32, 32, 4, 8, 8, 1, 20);
    bench("enc L4 (32->8, 4x8x8, s2)", 20, 32, 8, 4, 8, 8, 2, 20);
    bench("dec L4 (32->192, 2x4x4, s1)", 20, 32, 192, 2, 4, 4, 1, 20);
    bench("g hidden (24->64, 2x4x4, s1)", 1, 24, 64, 2, 4, 4, 1, 200);
}
