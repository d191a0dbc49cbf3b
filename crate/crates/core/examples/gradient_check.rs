//! Checks the tape's reverse-mode gradients for a small conv stack against
//! central finite differences.
//!
//!     cargo run --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sketchgan::tape::{Mode, Tape};
use sketchgan::{Result, Tensor};

const H: f32 = 1e-3;

/// `sum(tanh(conv_down(x, k)) * w)` as a scalar.
fn objective(x: &Tensor, k: &Tensor, w: &Tensor) -> Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::new(Mode::Eval);
    let xv = tape.input(x.clone());
    let kv = tape.constant(k.clone());
    let y = tape.conv_down(xv, kv, 2, 1)?;
    let y = tape.tanh(y);
    let value = tape.value(y).dot(w)?;
    let grads = tape.backward_from(y, w.clone())?;
    Ok((value, grads.wrt(xv).cloned()))
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::uniform(vec![2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let k = Tensor::uniform(vec![4, 3, 4, 4], -0.5, 0.5, &mut rng);
    let w = Tensor::uniform(vec![2, 4, 4, 4], -1.0, 1.0, &mut rng);

    let (_, analytic) = objective(&x, &k, &w)?;
    let analytic = analytic.expect("x is a gradient leaf");

    let (mut diff, mut norm_a, mut norm_n) = (0f64, 0f64, 0f64);
    for i in (0..x.numel()).step_by(17) {
        let mut plus = x.clone();
        plus.data_mut()[i] += H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= H;
        let step = (plus.data()[i] - minus.data()[i]) as f64;
        let numeric = (objective(&plus, &k, &w)?.0 - objective(&minus, &k, &w)?.0) / step;
        let a = analytic.data()[i] as f64;
        diff += (a - numeric).powi(2);
        norm_a += a * a;
        norm_n += numeric * numeric;
        println!("x[{i:>3}]  analytic {a:+.6}  numeric {numeric:+.6}");
    }
    // Single coordinates with tiny gradients mostly measure f32 noise, so
    // the error is taken over the whole sampled vector.
    let rel = diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt());
    println!("relative error over sampled coordinates {rel:.2e}");
    Ok(())
}
