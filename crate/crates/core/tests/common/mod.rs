#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use sculpture_core::ansatz::{FeatureVector, ParameterVector};
use sculpture_core::linalg::SquareMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect::<Vec<f64>>()
}

pub fn angles(rng: &mut ChaCha8Rng, n: usize) -> ParameterVector {
    (0..n)
        .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect::<Vec<_>>()
        .into()
}

pub fn features(rng: &mut ChaCha8Rng, n: usize) -> FeatureVector {
    normal_vec(rng, n, 1.0).into()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.gen_range(-1.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// `A Aᵀ` for a random `n × k` matrix `A`; rank `min(n, k)`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, k: usize) -> SquareMatrix {
    let a: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(rng, k, 1.0)).collect();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum());
        }
    }
    m
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(floor)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_gradient<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let plus = f(&probe);
            probe[k] = x[k] - h;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}
