//! Verify reverse-mode gradients of a small attention-style objective
//! against central finite differences.

use hiertext::tensor::finite_difference_check;
use hiertext::{ParamStore, SeedRng, Tensor};

fn random(rng: &mut SeedRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SeedRng::new(1);
    let mut params = ParamStore::new();
    params.insert("x", random(&mut rng, &[4, 6]));
    params.insert("w", random(&mut rng, &[6, 6]));
    params.insert("gamma", random(&mut rng, &[6]));
    params.insert("beta", random(&mut rng, &[6]));
    params.insert("out", random(&mut rng, &[6, 3]));

    let worst = finite_difference_check(
        |g, p| {
            let h = g.matmul(p.var("x")?, p.var("w")?)?;
            let h = g.gelu(h);
            let h = g.layer_norm(h, p.var("gamma")?, p.var("beta")?, 1e-12)?;
            let logits = g.matmul(h, p.var("out")?)?;
            g.cross_entropy(logits, &[0, 2, 1, 2], &[1.0, 0.5, 2.0, 1.0])
        },
        &params,
        1e-6,
    )?;
    println!("largest relative gradient error: {worst:.3e}");
    assert!(worst < 1e-5);
    Ok(())
}
