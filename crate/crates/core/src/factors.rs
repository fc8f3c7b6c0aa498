//! Factor chains `W_1 … W_L`, their partial products, targets and the
//! construction of random global minimizers.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

/// Layer widths `(d_0, d_1, …, d_L)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DimSignature {
    dims: Vec<usize>,
}

impl DimSignature {
    /// Validates depth `L ≥ 2`, positive widths and the feasibility condition
    /// `min_i d_i ≥ min(d_0, d_L)`.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        let infeasible = |reason: &str| Error::InfeasibleSignature {
            dims: dims.clone(),
            reason: reason.to_string(),
        };
        if dims.len() < 3 {
            return Err(infeasible("depth must be at least 2 (three or more widths)"));
        }
        if dims.contains(&0) {
            return Err(infeasible("every width must be positive"));
        }
        let outer = dims[0].min(dims[dims.len() - 1]);
        if dims[1..].iter().any(|&d| d < outer) {
            return Err(infeasible("some width is below min(d_0, d_L)"));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of factors `L`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    /// `d_0`, the number of columns of the end-to-end product.
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// `d_L`, the number of rows of the end-to-end product.
    pub fn output_dim(&self) -> usize {
        self.dims[self.depth()]
    }

    /// Shape `(d_i, d_{i-1})` of factor `i`, zero-based.
    pub fn factor_shape(&self, i: usize) -> (usize, usize) {
        (self.dims[i + 1], self.dims[i])
    }

    /// Total parameter count `N = Σ d_i d_{i-1}`.
    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// True when `d_0 = d_L = 1`.
    pub fn is_scalar(&self) -> bool {
        self.input_dim() == 1 && self.output_dim() == 1
    }

    /// Draws hidden widths uniformly from `range` (inclusive) around fixed
    /// outer widths. Infeasible draws are rejected and redrawn.
    pub fn random(
        depth: usize,
        input_dim: usize,
        output_dim: usize,
        range: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let (lo, hi) = range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid width range [{lo}, {hi}]")));
        }
        if hi < input_dim.min(output_dim) {
            return Err(Error::Config(format!(
                "width range [{lo}, {hi}] cannot satisfy min(d_0, d_L) = {}",
                input_dim.min(output_dim)
            )));
        }
        let lo = lo.max(input_dim.min(output_dim));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = Vec::with_capacity(depth + 1);
        dims.push(input_dim);
        for _ in 1..depth {
            dims.push(rng.random_range(lo..=hi));
        }
        dims.push(output_dim);
        Self::new(dims)
    }
}

impl TryFrom<Vec<usize>> for DimSignature {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<DimSignature> for Vec<usize> {
    fn from(sig: DimSignature) -> Self {
        sig.dims
    }
}

/// The point `w = vec([W_1, …, W_L])` in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorChain {
    signature: DimSignature,
    factors: Vec<Mat>,
}

impl FactorChain {
    /// Builds a chain from factors ordered `W_1, …, W_L`, inferring the
    /// signature from their shapes.
    pub fn new(factors: Vec<Mat>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::Shape(format!(
                "a chain needs at least 2 factors, got {}",
                factors.len()
            )));
        }
        let mut dims = vec![factors[0].ncols()];
        for (i, f) in factors.iter().enumerate() {
            if f.ncols() != dims[i] {
                return Err(Error::Shape(format!(
                    "factor {} has {} columns but factor {} has {} rows",
                    i + 1,
                    f.ncols(),
                    i,
                    dims[i]
                )));
            }
            dims.push(f.nrows());
        }
        let signature = DimSignature::new(dims)?;
        Ok(Self { signature, factors })
    }

    pub fn zeros(signature: &DimSignature) -> Self {
        let factors = (0..signature.depth())
            .map(|i| {
                let (r, c) = signature.factor_shape(i);
                Mat::zeros(r, c)
            })
            .collect();
        Self {
            signature: signature.clone(),
            factors,
        }
    }

    /// Every factor is the (rectangular) identity.
    pub fn identity(signature: &DimSignature) -> Self {
        let factors = (0..signature.depth())
            .map(|i| {
                let (r, c) = signature.factor_shape(i);
                Mat::identity(r, c)
            })
            .collect();
        Self {
            signature: signature.clone(),
            factors,
        }
    }

    /// Inverse of [`FactorChain::flatten`].
    pub fn from_flat(signature: &DimSignature, flat: &[f64]) -> Result<Self> {
        if flat.len() != signature.num_params() {
            return Err(Error::Shape(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                signature.num_params()
            )));
        }
        let mut offset = 0;
        let factors = (0..signature.depth())
            .map(|i| {
                let (r, c) = signature.factor_shape(i);
                let m = Mat::from_column_slice(r, c, &flat[offset..offset + r * c]);
                offset += r * c;
                m
            })
            .collect();
        Ok(Self {
            signature: signature.clone(),
            factors,
        })
    }

    pub fn signature(&self) -> &DimSignature {
        &self.signature
    }

    pub fn depth(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Mat] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &Mat {
        &self.factors[i]
    }

    pub(crate) fn factors_mut(&mut self) -> &mut [Mat] {
        &mut self.factors
    }

    /// Concatenated column-major vectorizations of `W_1, …, W_L`.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.signature.num_params());
        for f in &self.factors {
            out.extend_from_slice(f.as_slice());
        }
        DVector::from_vec(out)
    }

    /// Rescales factor `i` by `c` and factor `i + 1` by `1 / c` (zero-based),
    /// which leaves the end-to-end product unchanged.
    pub fn rescale_adjacent(&self, i: usize, c: f64) -> Result<Self> {
        if i + 1 >= self.depth() || c == 0.0 || !c.is_finite() {
            return Err(Error::Domain(format!(
                "cannot rescale factors {i} and {} by {c}",
                i + 1
            )));
        }
        let mut out = self.clone();
        out.factors[i] *= c;
        out.factors[i + 1] /= c;
        Ok(out)
    }
}

/// Target matrix `M` of shape `d_L × d_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Target(pub Mat);

impl Target {
    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn check_compatible(&self, chain: &FactorChain) -> Result<()> {
        let sig = chain.signature();
        let want = (sig.output_dim(), sig.input_dim());
        if self.0.shape() != want {
            return Err(Error::Shape(format!(
                "target is {:?} but the chain produces {:?}",
                self.0.shape(),
                want
            )));
        }
        Ok(())
    }
}

/// `A_k = W_L ⋯ W_{k+1}` and `B_k = W_{k-1} ⋯ W_1`, stored zero-based so that
/// `above[k]` and `below[k]` flank factor `k`.
#[derive(Debug, Clone)]
pub struct PartialProducts {
    pub above: Vec<Mat>,
    pub below: Vec<Mat>,
}

/// End-to-end product `W_L W_{L-1} ⋯ W_1`.
pub fn product(chain: &FactorChain) -> Mat {
    let mut acc = chain.factors[0].clone();
    for f in &chain.factors[1..] {
        acc = f * acc;
    }
    acc
}

/// Partial products by one left-to-right and one right-to-left pass.
pub fn partial_products(chain: &FactorChain) -> PartialProducts {
    let l = chain.depth();
    let sig = chain.signature();
    let mut below = Vec::with_capacity(l);
    below.push(Mat::identity(sig.input_dim(), sig.input_dim()));
    for k in 1..l {
        let next = &chain.factors[k - 1] * &below[k - 1];
        below.push(next);
    }
    let mut above = vec![Mat::zeros(0, 0); l];
    above[l - 1] = Mat::identity(sig.output_dim(), sig.output_dim());
    for k in (0..l - 1).rev() {
        above[k] = &above[k + 1] * &chain.factors[k + 1];
    }
    PartialProducts { above, below }
}

/// Law of the entries of random factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EntryLaw {
    /// `N(0, scale²)`.
    Normal { scale: f64 },
}

impl Default for EntryLaw {
    fn default() -> Self {
        EntryLaw::Normal { scale: 1.0 }
    }
}

impl EntryLaw {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            EntryLaw::Normal { scale } => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }
        }
    }
}

/// Random factors with the given entry law and `M` set to their product, so
/// the chain is a global minimizer by construction.
pub fn make_minimizer(
    signature: &DimSignature,
    seed: u64,
    law: EntryLaw,
) -> Result<(FactorChain, Target)> {
    let sig = DimSignature::new(signature.dims().to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..sig.depth())
        .map(|i| {
            let (r, c) = sig.factor_shape(i);
            // Column-major fill keeps the draw order aligned with `flatten`.
            let data: Vec<f64> = (0..r * c).map(|_| law.sample(&mut rng)).collect();
            Mat::from_column_slice(r, c, &data)
        })
        .collect();
    let chain = FactorChain {
        signature: sig,
        factors,
    };
    let target = Target(product(&chain));
    Ok((chain, target))
}

/// Squared Frobenius residual `‖M − W_L ⋯ W_1‖_F²`.
pub fn loss(chain: &FactorChain, target: &Target) -> Result<f64> {
    target.check_compatible(chain)?;
    Ok((target.matrix() - product(chain)).norm_squared())
}

/// JSON form of an instance; every matrix is stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub dims: Vec<usize>,
    pub factors: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl InstanceDoc {
    pub fn from_instance(chain: &FactorChain, target: &Target, seed: Option<u64>) -> Self {
        Self {
            dims: chain.signature().dims().to_vec(),
            factors: chain.factors().iter().map(row_major).collect(),
            target: row_major(target.matrix()),
            seed,
        }
    }

    pub fn to_instance(&self) -> Result<(FactorChain, Target)> {
        let sig = DimSignature::new(self.dims.clone())?;
        if self.factors.len() != sig.depth() {
            return Err(Error::Shape(format!(
                "{} factors listed for depth {}",
                self.factors.len(),
                sig.depth()
            )));
        }
        let factors = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, data)| {
                let (r, c) = sig.factor_shape(i);
                if data.len() != r * c {
                    return Err(Error::Shape(format!(
                        "factor {} has {} entries, expected {}×{}",
                        i + 1,
                        data.len(),
                        r,
                        c
                    )));
                }
                Ok(Mat::from_row_slice(r, c, data))
            })
            .collect::<Result<Vec<_>>>()?;
        let (r, c) = (sig.output_dim(), sig.input_dim());
        if self.target.len() != r * c {
            return Err(Error::Shape(format!(
                "target has {} entries, expected {r}×{c}",
                self.target.len()
            )));
        }
        let target = Target(Mat::from_row_slice(r, c, &self.target));
        Ok((FactorChain::new(factors)?, target))
    }
}
