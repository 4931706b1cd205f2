#![allow(dead_code)]

pub mod dem;
pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terrain_diffusion::autodiff::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `f(inputs)` on a fresh tape and reduces it to a scalar through a
/// fixed random projection so every output element contributes.
pub fn projected_loss<F>(build: &F, inputs: &[Tensor<f64>], projection_seed: u64) -> (f64, Vec<Tensor<f64>>)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone(), true).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let shape = tape.shape(out).to_vec();
    let mut prng = rng(projection_seed);
    let proj = tape.constant(random_tensor(&shape, &mut prng)).unwrap();
    let prod = tape.mul(out, proj).unwrap();
    let loss = tape.mean(prod).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v, t.shape()))
        .collect();
    (value, g)
}

/// Largest elementwise relative error between analytic gradients and central
/// finite differences with step `h`.
pub fn gradcheck<F>(build: F, inputs: &[Tensor<f64>], h: f64) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let (_, analytic) = projected_loss(&build, inputs, 99);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let bump = |delta: f64| {
                let mut data = input.data().to_vec();
                data[j] += delta;
                let mut perturbed = inputs.to_vec();
                perturbed[i] = Tensor::new(input.shape(), data).unwrap();
                projected_loss(&build, &perturbed, 99).0
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
