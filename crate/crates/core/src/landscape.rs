//! Two-dimensional slices `p(x, y) = loss(w* + xζ + yγ)` of the loss
//! landscape, and projections of GD trajectories onto the same plane.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, Trajectory};
use crate::factors::{loss, FactorChain, Target};
use crate::hessian_oracle::DenseHessian;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    Random,
    #[serde(rename = "hessian_v1_vn")]
    HessianV1VN,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub zeta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub origin: DVector<f64>,
    pub mode: BasisMode,
}

impl ProjectionBasis {
    /// Two seeded standard-normal vectors, each normalized.
    pub fn random(origin: &FactorChain, seed: u64) -> Self {
        let n = origin.signature().num_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let norm = v.norm();
            v / norm
        };
        let zeta = draw();
        let gamma = draw();
        Self {
            zeta,
            gamma,
            origin: origin.flatten(),
            mode: BasisMode::Random,
        }
    }

    /// `ζ = v_1` and `γ = v_N` of the Hessian at `origin`.
    pub fn from_hessian(origin: &FactorChain, hessian: &DenseHessian) -> Result<Self> {
        let n = origin.signature().num_params();
        if hessian.dim() != n {
            return Err(Error::Shape(format!(
                "Hessian is {}×{} but the chain has {n} parameters",
                hessian.dim(),
                hessian.dim()
            )));
        }
        let zeta = hessian
            .top_eigenvector()
            .ok_or_else(|| Error::Domain("Hessian eigenvectors were not computed".into()))?;
        let gamma = hessian.bottom_eigenvector().expect("present with the top one");
        Ok(Self {
            zeta,
            gamma,
            origin: origin.flatten(),
            mode: BasisMode::HessianV1VN,
        })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.zeta.len() != n || self.gamma.len() != n || self.origin.len() != n {
            return Err(Error::Shape(format!(
                "projection basis has dimension {} but the chain has {n} parameters",
                self.origin.len()
            )));
        }
        Ok(())
    }

    /// Coordinates of a flattened point in the slice plane.
    pub fn project(&self, w: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(w.len())?;
        let d = DVector::from_column_slice(w) - &self.origin;
        Ok((d.dot(&self.zeta), d.dot(&self.gamma)))
    }

    pub fn to_doc(&self, origin_ref: Option<String>) -> BasisDoc {
        BasisDoc {
            mode: self.mode,
            zeta: self.zeta.as_slice().to_vec(),
            gamma: self.gamma.as_slice().to_vec(),
            origin_ref,
        }
    }
}

/// Basis sidecar: `{"mode", "zeta", "gamma", "origin_ref"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDoc {
    pub mode: BasisMode,
    pub zeta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub origin_ref: Option<String>,
}

impl BasisDoc {
    pub fn to_basis(&self, origin: &FactorChain) -> Result<ProjectionBasis> {
        let basis = ProjectionBasis {
            zeta: DVector::from_vec(self.zeta.clone()),
            gamma: DVector::from_vec(self.gamma.clone()),
            origin: origin.flatten(),
            mode: self.mode,
        };
        basis.check_dim(origin.signature().num_params())?;
        Ok(basis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Square `[−a, a]²` grid.
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            x_range: (-half_width, half_width),
            y_range: (-half_width, half_width),
            nx: n,
            ny: n,
        }
    }

    /// 201×201 over `[−a, a]²` with `a` five times the largest excursion of
    /// the projected points (or `fallback` when they all sit at the origin).
    pub fn fitted(points: &[(f64, f64)], fallback: f64) -> Self {
        let reach = points
            .iter()
            .map(|(x, y)| x.abs().max(y.abs()))
            .fold(0.0, f64::max);
        let a = if reach > 0.0 && reach.is_finite() { 5.0 * reach } else { fallback };
        Self::square(a, 201)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!(
                "grid resolution must be at least 2×2, got {}×{}",
                self.nx, self.ny
            )));
        }
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 < r.1;
        if !ok(self.x_range) || !ok(self.y_range) {
            return Err(Error::Config("grid ranges must be finite, increasing intervals".into()));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        lerp(self.x_range, i, self.nx)
    }

    pub fn y(&self, j: usize) -> f64 {
        lerp(self.y_range, j, self.ny)
    }
}

fn lerp((lo, hi): (f64, f64), i: usize, n: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Loss values on the grid; `values[j * nx + i] = p(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ContourGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }

    /// CSV with header `x,y,p`, rows ordered by `y` then `x`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,p")?;
        for j in 0..self.spec.ny {
            for i in 0..self.spec.nx {
                writeln!(
                    out,
                    "{},{},{}",
                    fmt_f64(self.spec.x(i)),
                    fmt_f64(self.spec.y(j)),
                    fmt_f64(self.value(i, j))
                )?;
            }
        }
        Ok(())
    }
}

/// Exact loss at every grid node around `origin`.
pub fn contour_grid(
    origin: &FactorChain,
    target: &Target,
    basis: &ProjectionBasis,
    spec: &GridSpec,
) -> Result<ContourGrid> {
    spec.validate()?;
    target.check_compatible(origin)?;
    let sig = origin.signature();
    basis.check_dim(sig.num_params())?;
    let values = (0..spec.nx * spec.ny)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % spec.nx, idx / spec.nx);
            let w = &basis.origin + &basis.zeta * spec.x(i) + &basis.gamma * spec.y(j);
            loss(&FactorChain::from_flat(sig, w.as_slice())?, target)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContourGrid {
        spec: *spec,
        values,
    })
}

/// `(⟨w_k − w*, ζ⟩, ⟨w_k − w*, γ⟩)` for every recorded snapshot.
pub fn project_trajectory(traj: &Trajectory, basis: &ProjectionBasis) -> Result<Vec<(f64, f64)>> {
    traj.snapshots
        .iter()
        .map(|s| {
            let w = s.params.as_ref().ok_or(Error::MissingSnapshots)?;
            basis.project(w)
        })
        .collect()
}

/// Fills the `proj` column of every snapshot.
pub fn attach_projection(traj: &mut Trajectory, basis: &ProjectionBasis) -> Result<()> {
    let coords = project_trajectory(traj, basis)?;
    for (s, c) in traj.snapshots.iter_mut().zip(coords) {
        s.proj = Some(c);
    }
    Ok(())
}
