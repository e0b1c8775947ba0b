//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use avsync::autograd::{Graph, Var};
use avsync::data::AvClip;
use avsync::gradcheck::{grad_check, Coordinates};
use avsync::ops::DropoutMode;
use avsync::params::ParamStore;
use avsync::{FusionConfig, Rng, Tensor};

pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Direct-summation 3-D convolution with zero padding: every output element
/// is computed from scratch by walking the padded input coordinates.
pub fn oracle_conv3d(
    x: &Tensor,
    k: &Tensor,
    b: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<usize>, Vec<f64>) {
    let (xs, ks) = (x.shape(), k.shape());
    let out: Vec<usize> = (0..3)
        .map(|a| (xs[a] + 2 * pad[a] - ks[a]) / stride[a] + 1)
        .collect();
    let (cin, cout) = (xs[3], ks[4]);
    let at_x = |t: i64, h: i64, w: i64, c: usize| -> f64 {
        if t < 0 || h < 0 || w < 0 || t >= xs[0] as i64 || h >= xs[1] as i64 || w >= xs[2] as i64 {
            return 0.0;
        }
        x.data()[((t as usize * xs[1] + h as usize) * xs[2] + w as usize) * cin + c]
    };
    let mut y = Vec::new();
    for ot in 0..out[0] {
        for oh in 0..out[1] {
            for ow in 0..out[2] {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for a in 0..ks[0] {
                        for bb in 0..ks[1] {
                            for c in 0..ks[2] {
                                for ci in 0..cin {
                                    let t = (ot * stride[0] + a) as i64 - pad[0] as i64;
                                    let h = (oh * stride[1] + bb) as i64 - pad[1] as i64;
                                    let w = (ow * stride[2] + c) as i64 - pad[2] as i64;
                                    let kv = k.data()
                                        [(((a * ks[1] + bb) * ks[2] + c) * cin + ci) * cout + co];
                                    acc += at_x(t, h, w, ci) * kv;
                                }
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    let mut shape = out;
    shape.push(cout);
    (shape, y)
}

/// `max |a-b| / max(1e-300, max |b|)`: error relative to the oracle's scale.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}

/// Gradient checks of every differentiable primitive on small random
/// operands. Returns `(primitive, max relative error)`.
pub fn primitive_grad_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let mut check = |name: &'static str,
                     params: Vec<(&str, Tensor)>,
                     f: &dyn Fn(&mut Graph, &[Var]) -> avsync::Result<Var>| {
        let mut store = ParamStore::new();
        let ids: Vec<_> = params
            .into_iter()
            .map(|(n, t)| store.insert(n, t).unwrap())
            .collect();
        let report = grad_check(
            &mut store,
            |g, st| {
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(st, id)).collect();
                f(g, &vars)
            },
            1e-3,
            Coordinates::All,
        )
        .unwrap();
        out.push((name, report.max_rel_error));
    };

    // a fixed random projection makes every output element matter differently
    let proj = |g: &mut Graph, y: Var, r: &Tensor| -> avsync::Result<Var> {
        let rv = g.input(r.clone());
        let m = g.mul(y, rv)?;
        Ok(g.sum(m))
    };

    let x = random_tensor(&mut rng, &[3, 4, 5, 2], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[2, 3, 2, 2, 3], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[3], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[4, 1, 6, 3], -1.0, 1.0);
    check("conv3d", vec![("x", x), ("k", k), ("b", b)], &|g, v| {
        let y = g.conv3d(v[0], v[1], v[2], [1, 2, 1], [1, 0, 1])?;
        proj(g, y, &r)
    });

    let x = random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[5], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[2, 3, 5], -1.0, 1.0);
    check("pointwise_conv", vec![("x", x), ("w", w), ("b", b)], &|g, v| {
        let y = g.pointwise(v[0], v[1], v[2])?;
        proj(g, y, &r)
    });

    let x = random_tensor(&mut rng, &[6], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[6, 4], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[4], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[4], -1.0, 1.0);
    check("dense", vec![("x", x), ("w", w), ("b", b)], &|g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        proj(g, y, &r)
    });

    let x = random_tensor(&mut rng, &[24], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[24], -1.0, 1.0);
    check("relu", vec![("x", x)], &|g, v| {
        let y = g.relu(v[0]);
        proj(g, y, &r)
    });

    let x = random_tensor(&mut rng, &[40], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[40], -1.0, 1.0);
    check("dropout", vec![("x", x)], &|g, v| {
        let mut mask_rng = Rng::new(seed ^ 0xd5);
        let y = g.dropout(v[0], 0.5, DropoutMode::Train, Some(&mut mask_rng))?;
        proj(g, y, &r)
    });

    let x = random_tensor(&mut rng, &[2, 3, 2, 4], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[4], -1.0, 1.0);
    check("global_avg_pool", vec![("x", x)], &|g, v| {
        let y = g.global_avg_pool(v[0])?;
        proj(g, y, &r)
    });

    let x = random_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let r = random_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    check("softmax", vec![("x", x)], &|g, v| {
        let y = g.softmax(v[0])?;
        proj(g, y, &r)
    });

    let f = random_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[4], 0.0, 1.0);
    let r = random_tensor(&mut rng, &[3], -1.0, 1.0);
    check("weighted_sum", vec![("f", f), ("w", w)], &|g, v| {
        let y = g.weighted_sum(v[0], v[1])?;
        proj(g, y, &r)
    });

    let a = random_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[6, 2], -1.0, 1.0);
    check("stack_permute_reshape", vec![("a", a), ("b", b)], &|g, v| {
        let s = g.stack(&[v[0], v[1]])?;
        let p = g.permute(s, &[2, 0, 1])?;
        let y = g.reshape(p, &[6, 2])?;
        proj(g, y, &r)
    });

    let vis = random_tensor(&mut rng, &[2, 2, 3, 2], -1.0, 1.0);
    let aud = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let r = random_tensor(&mut rng, &[2, 2, 3, 4], -1.0, 1.0);
    check("tile_concat", vec![("v", vis), ("a", aud)], &|g, v| {
        let y = g.tile_concat(v[0], v[1])?;
        proj(g, y, &r)
    });

    let z = random_tensor(&mut rng, &[2], -3.0, 3.0);
    let label = (seed % 2) as usize;
    check("cross_entropy", vec![("z", z)], &|g, v| g.cross_entropy(v[0], label));

    let a = random_tensor(&mut rng, &[5], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[5], -1.0, 1.0);
    check("mul_add_scale", vec![("a", a), ("b", b)], &|g, v| {
        let m = g.mul(v[0], v[1])?;
        let s = g.add(m, v[0])?;
        let s = g.scale(s, -1.7);
        let sq = g.mul(s, s)?;
        Ok(g.sum(sq))
    });
    out
}

/// A clip of uniform noise with the geometry of `config`.
pub fn random_clip(config: &FusionConfig, rng: &mut Rng) -> AvClip {
    let n = config.n_blocks;
    AvClip {
        visual: random_tensor(
            rng,
            &[
                n * config.frames_per_block,
                config.frame_height,
                config.frame_width,
                config.frame_channels,
            ],
            0.0,
            1.0,
        ),
        audio: random_tensor(rng, &[n * config.audio_per_block, 1], -1.0, 1.0),
        label: rng.below(2) as u8,
        shift_blocks: 0,
        block_discriminative: (0..n).map(|_| rng.bernoulli(0.5)).collect(),
    }
}
