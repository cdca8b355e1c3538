//! Reverse-mode gradients through a tiny conv net, compared with a finite
//! difference on one weight.
//!
//!     cargo run --example autodiff

use qrkd::nn::{Graph, Tensor};

fn loss(x: &Tensor, params: &mut [Tensor], labels: &[usize], backward: bool) -> qrkd::Result<f64> {
    let mut g = Graph::new();
    let xv = g.input(x);
    let w = g.param(0, &params[0]);
    let b = g.param(1, &params[1]);
    let dw = g.param(2, &params[2]);
    let db = g.param(3, &params[3]);
    let h = g.conv2d(xv, w, b, 1, 1)?;
    let h = g.relu(h)?;
    let h = g.max_pool2d(h, 2, 2)?;
    let h = g.flatten(h)?;
    let logits = g.dense(h, dw, db)?;
    let l = g.cross_entropy(logits, labels)?;
    if backward {
        g.backward(l, params)?;
    }
    g.scalar(l)
}

fn main() -> qrkd::Result<()> {
    let wave = |i: usize| ((i * 37 % 101) as f64 / 50.0) - 1.0;
    let x = Tensor::new(vec![2, 1, 4, 4], (0..32).map(wave).collect())?;
    let mut params = vec![
        Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| wave(i + 5) * 0.5).collect())?,
        Tensor::new(vec![2], vec![0.1, -0.1])?,
        Tensor::new(vec![3, 8], (0..24).map(|i| wave(i + 40) * 0.3).collect())?,
        Tensor::zeros(vec![3]),
    ];
    let labels = [2, 0];

    let value = loss(&x, &mut params, &labels, true)?;
    println!("loss {value:.6}");

    let h = 1e-6;
    for (slot, i) in [(0, 4), (1, 0), (2, 7)] {
        let analytic = params[slot].grad[i];
        let orig = params[slot].values[i];
        params[slot].values[i] = orig + h;
        let up = loss(&x, &mut params, &labels, false)?;
        params[slot].values[i] = orig - h;
        let down = loss(&x, &mut params, &labels, false)?;
        params[slot].values[i] = orig;
        println!("param {slot}[{i}]: backprop {analytic:+.8}  finite difference {:+.8}", (up - down) / (2.0 * h));
    }
    Ok(())
}
