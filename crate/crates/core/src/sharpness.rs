//! Largest Hessian eigenvalue at global minimizers.
//!
//! At a minimizer the Hessian quadratic form is `2‖Σ_i A_i U_i B_i‖_F²`, so the
//! sharpness is `2 σ_max(Σ_i B_iᵀB_i ⊗ A_iA_iᵀ)`. The general path applies that
//! operator matrix-free as `X ↦ Σ_i A_iA_iᵀ X B_iᵀB_i` and extracts its top
//! eigenvalue with a Krylov solver. Scalar chains (`d_0 = d_L = 1`) and depth-2
//! factorizations have explicit singular-value formulas and explicit
//! maximizing directions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::directional::{Direction, DirectionDoc};
use crate::factors::{loss, partial_products, FactorChain, PartialProducts, Target};
use crate::linalg::{top_eigenpair, top_singular, KrylovOptions};
use crate::{Error, Mat, Result};

/// Relative tolerance under which the two leading eigenvalues count as tied.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// `Σ_i G_i ⊗ H_i` with `G_i = B_iᵀB_i` (`d_0 × d_0`) and `H_i = A_iA_iᵀ`
/// (`d_L × d_L`), acting on `d_L × d_0` matrices.
#[derive(Debug, Clone)]
pub struct KronSumOperator {
    terms: Vec<(Mat, Mat)>,
    rows: usize,
    cols: usize,
}

impl KronSumOperator {
    pub fn from_partials(pp: &PartialProducts) -> Self {
        let terms: Vec<(Mat, Mat)> = pp
            .above
            .iter()
            .zip(&pp.below)
            .map(|(a, b)| (b.transpose() * b, a * a.transpose()))
            .collect();
        let rows = terms[0].1.nrows();
        let cols = terms[0].0.nrows();
        Self { terms, rows, cols }
    }

    pub fn from_chain(chain: &FactorChain) -> Self {
        Self::from_partials(&partial_products(chain))
    }

    /// `(G_i, H_i)` pairs.
    pub fn terms(&self) -> &[(Mat, Mat)] {
        &self.terms
    }

    /// Shape `(d_L, d_0)` of the matrices the operator acts on.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Dimension `d_L · d_0` of the vectorized space.
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// `Σ_i H_i X G_i`, i.e. the operator applied to `vec(X)`.
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        if x.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "operator acts on {:?} matrices, got {:?}",
                self.shape(),
                x.shape()
            )));
        }
        let mut out = Mat::zeros(self.rows, self.cols);
        for (g, h) in &self.terms {
            out += h * x * g;
        }
        Ok(out)
    }

    fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let x = Mat::from_column_slice(self.rows, self.cols, v.as_slice());
        let y = self.apply(&x).expect("shape fixed by construction");
        DVector::from_column_slice(y.as_slice())
    }
}

/// Applies the Kronecker-sum operator of the chain's partial products to `X`.
pub fn apply_kron_sum(op: &KronSumOperator, x: &Mat) -> Result<Mat> {
    op.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GeneralKron,
    ScalarChain,
    Depth2,
    DenseOracle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GeneralKron => "general_kron",
            Method::ScalarChain => "scalar_chain",
            Method::Depth2 => "depth2",
            Method::DenseOracle => "dense_oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SharpnessReport {
    pub lambda_max: f64,
    pub method: Method,
    /// Unit-norm maximizer of the Hessian quadratic form.
    pub extremal_direction: Option<Direction>,
    pub iterations: usize,
    /// `‖Op v − λ v‖₂` of the operator's top eigenpair; zero for closed forms.
    pub residual: f64,
    /// The top eigenvalue looked tied, so the maximizer is not unique.
    pub degenerate: bool,
}

/// JSON view of a [`SharpnessReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharpnessDoc {
    pub lambda_max: f64,
    pub method: Method,
    pub iterations: usize,
    pub residual: f64,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<Vec<f64>>>,
}

impl SharpnessReport {
    /// Serializable form; direction blocks are row-major.
    pub fn to_doc(&self, with_direction: bool) -> SharpnessDoc {
        SharpnessDoc {
            lambda_max: self.lambda_max,
            method: self.method,
            iterations: self.iterations,
            residual: self.residual,
            degenerate: self.degenerate,
            direction: if with_direction {
                self.extremal_direction.as_ref().map(|d| DirectionDoc::from(d).0)
            } else {
                None
            },
        }
    }
}

/// Loss tolerance `1e-10 · max(1, ‖M‖_F²)` for treating a chain as a minimizer.
pub fn certification_tolerance(target: &Target) -> f64 {
    1e-10 * target.frobenius_sq().max(1.0)
}

/// Rejects chains that are not global minimizers within tolerance.
pub fn certify_minimizer(chain: &FactorChain, target: &Target) -> Result<f64> {
    let l = loss(chain, target)?;
    let tolerance = certification_tolerance(target);
    if l.is_nan() || l > tolerance {
        return Err(Error::NotMinimizer { loss: l, tolerance });
    }
    Ok(l)
}

/// General closed form `2 λ_max(Σ_i B_iᵀB_i ⊗ A_iA_iᵀ)` with the extremal
/// direction lifted blockwise as `U_i ∝ A_iᵀ V B_iᵀ`.
pub fn lambda_max_general(chain: &FactorChain, target: &Target) -> Result<SharpnessReport> {
    lambda_max_general_with(chain, target, &KrylovOptions::default())
}

pub fn lambda_max_general_with(
    chain: &FactorChain,
    target: &Target,
    opts: &KrylovOptions,
) -> Result<SharpnessReport> {
    certify_minimizer(chain, target)?;
    let pp = partial_products(chain);
    let op = KronSumOperator::from_partials(&pp);
    let top = top_eigenpair(op.dim(), |v| op.apply_vec(v), opts)?;
    let (rows, cols) = op.shape();
    let v = Mat::from_column_slice(rows, cols, top.vector.as_slice());
    let blocks = pp
        .above
        .iter()
        .zip(&pp.below)
        .map(|(a, b)| a.transpose() * &v * b.transpose())
        .collect();
    let dir = Direction::new(blocks).normalized();
    let value = top.value.max(0.0);
    let degenerate = top
        .second
        .is_some_and(|s| (value - s).abs() <= DEGENERACY_TOL * value.max(f64::MIN_POSITIVE));
    Ok(SharpnessReport {
        lambda_max: 2.0 * value,
        method: Method::GeneralKron,
        extremal_direction: Some(dir),
        iterations: top.iterations,
        residual: top.residual,
        degenerate,
    })
}

/// `2 Σ_i σ_max(A_i)² σ_max(B_i)²` for `d_0 = d_L = 1`, with the maximizer
/// `U_i = ± (c_i / ‖c‖) v_{A_i} u_{B_i}ᵀ`, `c_i = σ_max(A_i) σ_max(B_i)`.
pub fn lambda_max_scalar_chain(chain: &FactorChain, target: &Target) -> Result<SharpnessReport> {
    if !chain.signature().is_scalar() {
        return Err(Error::Domain(format!(
            "scalar-chain formula needs d_0 = d_L = 1, got dims {:?}",
            chain.signature().dims()
        )));
    }
    certify_minimizer(chain, target)?;
    let pp = partial_products(chain);
    let mut weights = Vec::with_capacity(chain.depth());
    let mut rank_one = Vec::with_capacity(chain.depth());
    for (a, b) in pp.above.iter().zip(&pp.below) {
        // A_i is a row and B_i a column, so their SVDs are normalizations.
        // The 1×1 singular vectors carry signs; fold them in so that every
        // A_i U_i B_i comes out positive.
        let (sa, ua, va) = top_singular(a);
        let (sb, ub, vb) = top_singular(b);
        weights.push(sa * sb);
        rank_one.push(&va * ub.transpose() * (ua[0] * vb[0]));
    }
    Ok(closed_form_report(weights, rank_one, Method::ScalarChain))
}

/// `2(σ_max(L)² + σ_max(R)²)` for `M = L Rᵀ`.
///
/// In chain terms `W_1 = Rᵀ` and `W_2 = L`; the maximizer perturbs them by
/// `σ_L/s · v_L u_Rᵀ` and `σ_R/s · u_L v_Rᵀ`, `s = √(σ_L² + σ_R²)`.
pub fn lambda_max_depth2(left: &Mat, right: &Mat, target: &Target) -> Result<SharpnessReport> {
    if left.ncols() != right.ncols() {
        return Err(Error::Shape(format!(
            "L is {:?} and R is {:?}; inner widths differ",
            left.shape(),
            right.shape()
        )));
    }
    let chain = FactorChain::new(vec![right.transpose(), left.clone()])?;
    certify_minimizer(&chain, target)?;
    let (sl, ul, vl) = top_singular(left);
    let (sr, ur, vr) = top_singular(right);
    let weights = vec![sl, sr];
    let rank_one = vec![&vl * ur.transpose(), &ul * vr.transpose()];
    Ok(closed_form_report(weights, rank_one, Method::Depth2))
}

/// Depth-2 formula applied to a chain `(W_1, W_2)`.
pub fn lambda_max_depth2_chain(chain: &FactorChain, target: &Target) -> Result<SharpnessReport> {
    if chain.depth() != 2 {
        return Err(Error::Domain(format!(
            "depth-2 formula needs 2 factors, got {}",
            chain.depth()
        )));
    }
    lambda_max_depth2(chain.factor(1), &chain.factor(0).transpose(), target)
}

fn closed_form_report(weights: Vec<f64>, rank_one: Vec<Mat>, method: Method) -> SharpnessReport {
    let total: f64 = weights.iter().map(|c| c * c).sum();
    let norm = total.sqrt();
    let blocks = weights
        .iter()
        .zip(rank_one)
        .map(|(c, r)| if norm > 0.0 { r * (c / norm) } else { r * 0.0 })
        .collect();
    SharpnessReport {
        lambda_max: 2.0 * total,
        method,
        extremal_direction: Some(Direction::new(blocks)),
        iterations: 0,
        residual: 0.0,
        degenerate: false,
    }
}

/// Picks the most specific closed form: scalar chain, then depth 2, then the
/// general Kronecker-sum operator.
pub fn lambda_max(chain: &FactorChain, target: &Target) -> Result<SharpnessReport> {
    if chain.signature().is_scalar() {
        lambda_max_scalar_chain(chain, target)
    } else if chain.depth() == 2 {
        lambda_max_depth2_chain(chain, target)
    } else {
        lambda_max_general(chain, target)
    }
}

/// Unit-norm direction attaining `λ_max` in the Hessian quadratic form, and
/// whether the top eigenvalue looked degenerate.
pub fn extremal_direction(chain: &FactorChain, target: &Target) -> Result<(Direction, bool)> {
    let report = lambda_max(chain, target)?;
    let dir = report
        .extremal_direction
        .expect("every closed form builds a direction");
    Ok((dir, report.degenerate))
}
