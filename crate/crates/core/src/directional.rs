//! Directional (Gâteaux) derivatives of the factorization loss.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::factors::{partial_products, product, DimSignature, FactorChain, Target};
use crate::linalg::frob_dot;
use crate::{Error, Mat, Result};

/// A perturbation `(U_1, …, U_L)` with block `i` shaped like factor `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    blocks: Vec<Mat>,
}

impl Direction {
    pub fn new(blocks: Vec<Mat>) -> Self {
        Self { blocks }
    }

    pub fn zeros(signature: &DimSignature) -> Self {
        Self {
            blocks: (0..signature.depth())
                .map(|i| {
                    let (r, c) = signature.factor_shape(i);
                    Mat::zeros(r, c)
                })
                .collect(),
        }
    }

    /// Standard normal blocks scaled to `Σ ‖U_i‖_F² = 1`.
    pub fn random_unit<R: Rng + ?Sized>(signature: &DimSignature, rng: &mut R) -> Self {
        let blocks = (0..signature.depth())
            .map(|i| {
                let (r, c) = signature.factor_shape(i);
                let data: Vec<f64> = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
                Mat::from_column_slice(r, c, &data)
            })
            .collect();
        Self { blocks }.normalized()
    }

    /// Splits a flat parameter-space vector (column-major per block).
    pub fn from_flat(signature: &DimSignature, flat: &[f64]) -> Result<Self> {
        let chain = FactorChain::from_flat(signature, flat)?;
        Ok(Self {
            blocks: chain.factors().to_vec(),
        })
    }

    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(b.as_slice());
        }
        DVector::from_vec(out)
    }

    pub fn blocks(&self) -> &[Mat] {
        &self.blocks
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| frob_dot(a, b))
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * c).collect(),
        }
    }

    /// Unit-norm copy; the zero direction is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm_sq().sqrt();
        if n == 0.0 {
            self.clone()
        } else {
            self.scaled(1.0 / n)
        }
    }

    pub fn check_compatible(&self, chain: &FactorChain) -> Result<()> {
        let ok = self.blocks.len() == chain.depth()
            && self
                .blocks
                .iter()
                .zip(chain.factors())
                .all(|(u, w)| u.shape() == w.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("direction does not match the chain's factor shapes".into()))
        }
    }
}

/// `chain + t · dir`.
pub fn perturb(chain: &FactorChain, dir: &Direction, t: f64) -> Result<FactorChain> {
    dir.check_compatible(chain)?;
    let mut out = chain.clone();
    for (w, u) in out.factors_mut().iter_mut().zip(dir.blocks()) {
        *w += u * t;
    }
    Ok(out)
}

/// Loss gradient; block `i` is `2 A_iᵀ (W_L⋯W_1 − M) B_iᵀ`.
pub fn gradient(chain: &FactorChain, target: &Target) -> Result<Direction> {
    Ok(loss_and_gradient(chain, target)?.1)
}

/// Loss and gradient from a single set of partial products.
pub fn loss_and_gradient(chain: &FactorChain, target: &Target) -> Result<(f64, Direction)> {
    target.check_compatible(chain)?;
    let pp = partial_products(chain);
    // Same association as `product`, so the residual is exactly zero at
    // minimizers built by `make_minimizer`.
    let residual = product(chain) - target.matrix();
    let blocks = pp
        .above
        .iter()
        .zip(&pp.below)
        .map(|(a, b)| (a.transpose() * &residual * b.transpose()) * 2.0)
        .collect();
    Ok((residual.norm_squared(), Direction { blocks }))
}

/// Exact `d²/dt² loss(chain + tU)` at `t = 0`:
/// `2‖Σ_i A_i U_i B_i‖_F² − 4⟨M − W_L⋯W_1, Σ_{k<i} A_i U_i W_{i-1}⋯W_{k+1} U_k B_k⟩`.
///
/// The second sum is accumulated with `C_{i+1} = W_i C_i + U_i B_i`, where
/// `C_i = Σ_{k<i} W_{i-1}⋯W_{k+1} U_k B_k`.
pub fn second_directional(chain: &FactorChain, target: &Target, dir: &Direction) -> Result<f64> {
    target.check_compatible(chain)?;
    dir.check_compatible(chain)?;
    let pp = partial_products(chain);
    let sig = chain.signature();
    let mut first = Mat::zeros(sig.output_dim(), sig.input_dim());
    let mut cross = Mat::zeros(sig.output_dim(), sig.input_dim());
    let mut carry = Mat::zeros(sig.input_dim(), sig.input_dim());
    for (i, u) in dir.blocks().iter().enumerate() {
        let ub = u * &pp.below[i];
        first += &pp.above[i] * &ub;
        if i > 0 {
            cross += &pp.above[i] * (u * &carry);
            carry = chain.factor(i) * carry + ub;
        } else {
            carry = ub;
        }
    }
    let residual = target.matrix() - product(chain);
    Ok(2.0 * first.norm_squared() - 4.0 * frob_dot(&residual, &cross))
}

/// Central-difference Hessian–vector product
/// `(∇loss(w + hU) − ∇loss(w − hU)) / (2h)`.
pub fn fd_hessian_vector(
    chain: &FactorChain,
    target: &Target,
    dir: &Direction,
    h: f64,
) -> Result<Direction> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    let plus = gradient(&perturb(chain, dir, h)?, target)?;
    let minus = gradient(&perturb(chain, dir, -h)?, target)?;
    let blocks = plus
        .blocks
        .iter()
        .zip(&minus.blocks)
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect();
    Ok(Direction { blocks })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) struct DirectionDoc(pub Vec<Vec<f64>>);

impl From<&Direction> for DirectionDoc {
    fn from(d: &Direction) -> Self {
        DirectionDoc(d.blocks.iter().map(|b| b.transpose().as_slice().to_vec()).collect())
    }
}
