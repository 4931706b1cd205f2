//! One random instance per autodiff op kind.

use rand::Rng;
use terrain_diffusion::autodiff::{OpKind, Tape, Tensor, Var};

use super::{random_tensor, rng};

pub type Graph = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn small_nchw(r: &mut impl Rng) -> [usize; 4] {
    [r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=3), r.random_range(1..=3)]
}

/// Inputs and graph for one random instance of `kind`.
pub fn case(kind: OpKind, seed: u64) -> (Vec<Tensor<f64>>, Graph) {
    let mut r = rng(seed);
    let s = small_nchw(&mut r);
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            // second operand broadcast over the spatial axes half of the time
            let b_shape = if r.random_bool(0.5) { [s[0], s[1], 1, 1] } else { s };
            let a = random_tensor(&s, &mut r);
            let b = random_tensor(&b_shape, &mut r);
            let f: Graph = match kind {
                OpKind::Add => Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
                OpKind::Sub => Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
                _ => Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            };
            (vec![a, b], f)
        }
        OpKind::Matmul => {
            let (m, k, n) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
            let a = random_tensor(&[m, k], &mut r);
            let b = random_tensor(&[k, n], &mut r);
            (vec![a, b], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()))
        }
        OpKind::Conv2d => {
            let k = [1, 3][r.random_range(0..2)];
            let stride = r.random_range(1..=2);
            let pad = if k == 3 { r.random_range(0..=1) } else { 0 };
            let (h, w) = (r.random_range(k.max(2)..=4), r.random_range(k.max(2)..=4));
            let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
            let x = random_tensor(&[s[0].min(2), cin, h, w], &mut r);
            let wt = random_tensor(&[cout, cin, k, k], &mut r);
            let b = random_tensor(&[cout], &mut r);
            (
                vec![x, wt, b],
                Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()),
            )
        }
        OpKind::Upsample2 => (vec![random_tensor(&s, &mut r)], Box::new(|t, v| t.upsample2(v[0]).unwrap())),
        OpKind::Downsample2 => (vec![random_tensor(&s, &mut r)], Box::new(|t, v| t.downsample2(v[0]).unwrap())),
        OpKind::GroupNorm => {
            let groups = [1, 2][r.random_range(0..2)];
            let c = groups * r.random_range(1..=2);
            let shape = [s[0], c, s[2].max(2), s[3]];
            let x = random_tensor(&shape, &mut r);
            let g = random_tensor(&[c], &mut r);
            let b = random_tensor(&[c], &mut r);
            (
                vec![x, g, b],
                Box::new(move |t, v| t.group_norm(v[0], v[1], v[2], groups, 1e-5).unwrap()),
            )
        }
        OpKind::Silu => (vec![random_tensor(&s, &mut r)], Box::new(|t, v| t.silu(v[0]).unwrap())),
        OpKind::Exp => (vec![random_tensor(&s, &mut r)], Box::new(|t, v| t.exp(v[0]).unwrap())),
        OpKind::MeanSquare => (
            vec![random_tensor(&s, &mut r)],
            Box::new(|t, v| t.mean_square(v[0]).unwrap()),
        ),
        OpKind::Mean => (vec![random_tensor(&s, &mut r)], Box::new(|t, v| t.mean(v[0]).unwrap())),
        OpKind::ConcatChannels => {
            let c2 = r.random_range(1..=3);
            let a = random_tensor(&s, &mut r);
            let b = random_tensor(&[s[0], c2, s[2], s[3]], &mut r);
            (vec![a, b], Box::new(|t, v| t.concat_channels(&[v[0], v[1]]).unwrap()))
        }
        OpKind::SliceChannels => {
            let c = s[1];
            let start = r.random_range(0..c);
            let len = r.random_range(1..=c - start);
            (
                vec![random_tensor(&s, &mut r)],
                Box::new(move |t, v| t.slice_channels(v[0], start, len).unwrap()),
            )
        }
        OpKind::ScalarAffine => {
            let scale = r.random_range(-2.0..2.0);
            (
                vec![random_tensor(&s, &mut r)],
                Box::new(move |t, v| t.scalar_affine(v[0], scale, 0.3).unwrap()),
            )
        }
        OpKind::Reshape => {
            let n: usize = s.iter().product();
            (
                vec![random_tensor(&s, &mut r)],
                Box::new(move |t, v| t.reshape(v[0], &[n]).unwrap()),
            )
        }
    }
}

pub const ALL_KINDS: [OpKind; 16] = [
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Matmul,
    OpKind::Conv2d,
    OpKind::Upsample2,
    OpKind::Downsample2,
    OpKind::GroupNorm,
    OpKind::Silu,
    OpKind::Exp,
    OpKind::MeanSquare,
    OpKind::Mean,
    OpKind::ConcatChannels,
    OpKind::SliceChannels,
    OpKind::ScalarAffine,
    OpKind::Reshape,
];
