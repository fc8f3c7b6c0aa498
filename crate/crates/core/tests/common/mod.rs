#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sharpfactor::factors::{loss, make_minimizer, partial_products, DimSignature, EntryLaw, FactorChain, Target};
use sharpfactor::Direction;

pub type Mat = DMatrix<f64>;

/// Random feasible widths with depth in `depths`, every width in `1..=max_w`
/// and at most `max_n` parameters.
pub fn random_signature(rng: &mut ChaCha8Rng, depths: (usize, usize), max_w: usize, max_n: usize) -> DimSignature {
    loop {
        let depth = rng.random_range(depths.0..=depths.1);
        let d0 = rng.random_range(1..=max_w);
        let dl = rng.random_range(1..=max_w);
        let lo = d0.min(dl);
        let mut dims = vec![d0];
        for _ in 1..depth {
            dims.push(rng.random_range(lo..=max_w));
        }
        dims.push(dl);
        let sig = DimSignature::new(dims).unwrap();
        if sig.num_params() <= max_n {
            return sig;
        }
    }
}

/// A certified minimizer from the usual small-instance family
/// (`L ∈ 2..=6`, widths ≤ 8, `N ≤ 200`).
pub fn small_minimizer(seed: u64) -> (FactorChain, Target) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sig = random_signature(&mut rng, (2, 6), 8, 200);
    make_minimizer(&sig, seed, EntryLaw::default()).unwrap()
}

/// A point off the minimizer set: a minimizer with every entry perturbed by
/// `N(0, noise²)`.
pub fn off_minimum(seed: u64, noise: f64) -> (FactorChain, Target) {
    let (c, t) = small_minimizer(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let flat: Vec<f64> = c
        .flatten()
        .iter()
        .map(|w| w + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (FactorChain::from_flat(c.signature(), &flat).unwrap(), t)
}

pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// `Σ_i (B_iᵀB_i) ⊗ (A_iA_iᵀ)` assembled densely.
pub fn dense_kron_sum(chain: &FactorChain) -> Mat {
    let pp = partial_products(chain);
    let sig = chain.signature();
    let n = sig.output_dim() * sig.input_dim();
    let mut out = Mat::zeros(n, n);
    for (a, b) in pp.above.iter().zip(&pp.below) {
        let g = b.transpose() * b;
        let h = a * a.transpose();
        out += g.kronecker(&h);
    }
    out
}

/// Loss-based central differences, coordinate by coordinate.
pub fn fd_gradient(chain: &FactorChain, target: &Target, eps: f64) -> DVector<f64> {
    let sig = chain.signature();
    let w = chain.flatten();
    DVector::from_fn(w.len(), |j, _| {
        let mut p = w.clone();
        let mut m = w.clone();
        p[j] += eps;
        m[j] -= eps;
        let lp = loss(&FactorChain::from_flat(sig, p.as_slice()).unwrap(), target).unwrap();
        let lm = loss(&FactorChain::from_flat(sig, m.as_slice()).unwrap(), target).unwrap();
        (lp - lm) / (2.0 * eps)
    })
}

/// `(loss(w + hU) − 2 loss(w) + loss(w − hU)) / h²`.
pub fn second_difference(chain: &FactorChain, target: &Target, dir: &Direction, h: f64) -> f64 {
    let f = |t: f64| loss(&sharpfactor::directional::perturb(chain, dir, t).unwrap(), target).unwrap();
    (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h)
}

pub fn random_direction(chain: &FactorChain, seed: u64) -> Direction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Direction::random_unit(chain.signature(), &mut rng)
}

/// `vec(Σ_i A_i U_i B_i)` computed directly from the partial products.
pub fn first_order_response(chain: &FactorChain, dir: &Direction) -> DVector<f64> {
    let pp = partial_products(chain);
    let sig = chain.signature();
    let mut s = Mat::zeros(sig.output_dim(), sig.input_dim());
    for (i, u) in dir.blocks().iter().enumerate() {
        s += &pp.above[i] * u * &pp.below[i];
    }
    DVector::from_column_slice(s.as_slice())
}
