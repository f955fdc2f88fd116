use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_supported, offset, pair_value, DiffOp, KernelSpec, OperatorFunctional};
use crate::error::{input, Error, Result};
use crate::linalg::{default_nugget, factor_with_escalation, Cholesky};

/// Pairwise inner products `⟨ψ_i, ψ_j⟩` of the representers of a basis of
/// operator functionals, with a cached factorization of `K + nugget·I`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    nugget: f64,
    factor: Cholesky,
    asymmetry: f64,
}

impl GramMatrix {
    /// Symmetrized entries, without the nugget.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Diagonal shift that made the factorization succeed.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `max |K − Kᵀ|` measured before symmetrization.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    /// Solve `(K + nugget·I) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }
}

pub(crate) fn diff_ops(spec: &KernelSpec, basis: &[OperatorFunctional]) -> Result<Vec<DiffOp>> {
    basis
        .iter()
        .map(|f| {
            if f.point.len() != spec.dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim,
                    got: f.point.len(),
                });
            }
            check_supported(spec, &f.op, &f.op)?;
            f.op.diff_op(spec.dim)
        })
        .collect()
}

/// Rows indexed by `rows`, columns by `cols`: `(L_i)_x (L_j)_y k(x_i, x_j)`.
pub(crate) fn cross_entries(
    spec: &KernelSpec,
    rows: &[OperatorFunctional],
    cols: &[OperatorFunctional],
) -> Result<DMatrix<f64>> {
    let row_ops = diff_ops(spec, rows)?;
    let col_ops = diff_ops(spec, cols)?;
    let (n, m) = (rows.len(), cols.len());
    let mut data = vec![0.0; n * m];
    // column-major: column j holds all rows against cols[j]
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(j, col)| {
        let (yj, opj) = (&cols[j].point, &col_ops[j]);
        for (i, out) in col.iter_mut().enumerate() {
            *out = pair_value(spec, &row_ops[i], opj, &offset(&rows[i].point, yj));
        }
    });
    Ok(DMatrix::from_vec(n, m, data))
}

/// Gram matrix with the default nugget `1e-10 · trace(K) / n`.
pub fn gram_default(spec: &KernelSpec, basis: &[OperatorFunctional]) -> Result<GramMatrix> {
    assemble(spec, basis, None)
}

pub fn gram(spec: &KernelSpec, basis: &[OperatorFunctional], nugget: f64) -> Result<GramMatrix> {
    if !(nugget >= 0.0) {
        return input(format!("nugget must be nonnegative, got {nugget}"));
    }
    assemble(spec, basis, Some(nugget))
}

fn assemble(spec: &KernelSpec, basis: &[OperatorFunctional], nugget: Option<f64>) -> Result<GramMatrix> {
    if basis.is_empty() {
        return input("gram basis is empty");
    }
    GramMatrix::from_entries(cross_entries(spec, basis, basis)?, nugget)
}

impl GramMatrix {
    /// Symmetrize and factor precomputed inner products.
    pub(crate) fn from_entries(raw: DMatrix<f64>, nugget: Option<f64>) -> Result<GramMatrix> {
        if raw.is_empty() {
            return input("gram basis is empty");
        }
        let asymmetry = (&raw - raw.transpose()).abs().max();
        let entries = (&raw + raw.transpose()) * 0.5;
        let nugget = nugget.unwrap_or_else(|| default_nugget(&entries));
        let (factor, nugget) = factor_with_escalation(&entries, nugget)?;
        Ok(GramMatrix {
            entries,
            nugget,
            factor,
            asymmetry,
        })
    }
}
