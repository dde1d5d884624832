//! Minibatch K-NN graphs over cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Degrees are floored here so isolated nodes do not divide by zero.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Per-sample nearest-neighbor lists, self excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSets {
    k: usize,
    lists: Vec<Vec<usize>>,
}

impl NeighborSets {
    /// Effective neighbor count, `min(k, n - 1)`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.lists.iter().map(Vec::as_slice)
    }

    /// 0/1 mask with `mask[i][j] = 1` iff `j` is a neighbor of `i`.
    pub fn mask(&self) -> Matrix {
        let n = self.lists.len();
        let mut m = Matrix::zeros(n, n);
        for (i, list) in self.lists.iter().enumerate() {
            for &j in list {
                m.set(i, j, 1.0);
            }
        }
        m
    }
}

/// How the K-NN affinity is turned into a propagation operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// `A ← (A + Aᵀ)/2`, then `S = D^{-1/2} A D^{-1/2}`.
    #[default]
    Symmetric,
    /// Raw asymmetric mask with `S = D^{-1} A`.
    RowStochastic,
}

/// Pairwise cosine similarities. Errors on any zero row.
pub fn cosine_similarity(features: &Matrix) -> Result<Matrix> {
    let norms = features.row_norms();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("feature row {i} has zero norm; cosine is undefined")));
    }
    // g_ij / sqrt(g_ii g_jj) gives exactly 1 for identical rows
    let gram = features.matmul(&features.transpose())?;
    let n = features.rows();
    Matrix::from_fn(n, n, |i, j| {
        (gram.get(i, j) / (gram.get(i, i) * gram.get(j, j)).sqrt()).clamp(-1.0, 1.0)
    })
}

/// `k` most cosine-similar other samples per row, ranked by descending
/// similarity with ties going to the lower index. `k` is clamped to `n - 1`.
pub fn knn_neighbors(features: &Matrix, k: usize) -> Result<NeighborSets> {
    if k == 0 {
        return Err(Error::Degenerate("k must be at least 1".into()));
    }
    let sim = cosine_similarity(features)?;
    Ok(neighbors_from_similarity(&sim, k))
}

pub(crate) fn neighbors_from_similarity(sim: &Matrix, k: usize) -> NeighborSets {
    let n = sim.rows();
    let k = k.min(n - 1);
    let rank_row = |i: usize| -> Vec<usize> {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| sim.get(i, b).total_cmp(&sim.get(i, a)).then(a.cmp(&b)));
        others.truncate(k);
        others
    };
    let rows: Vec<usize> = (0..n).collect();
    let lists = crate::numerics::kernels::map_items(&rows, |&i| rank_row(i));
    NeighborSets { k, lists }
}

/// Affinity `A`, propagation operator `S` and floored degrees.
#[derive(Clone, Debug)]
pub struct AffinityGraph {
    pub affinity: Matrix,
    pub normalized: Matrix,
    pub degrees: Vec<f64>,
}

/// Differentiable counterpart of [`AffinityGraph`] living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AffinityVars<'t> {
    pub affinity: Var<'t>,
    pub normalized: Var<'t>,
    /// n x 1 floored degrees.
    pub degrees: Var<'t>,
}

impl AffinityVars<'_> {
    pub fn to_graph(&self) -> AffinityGraph {
        AffinityGraph {
            affinity: self.affinity.value(),
            normalized: self.normalized.value(),
            degrees: self.degrees.value().into_vec(),
        }
    }
}

/// Builds `a_ij = exp((tau/2) cos(g_i, g_j))` on the neighbor mask, then the
/// normalized operator. Differentiable in `projected`; the mask is constant.
pub fn build_affinity_var<'t>(
    projected: Var<'t>,
    neighbors: &NeighborSets,
    tau: f64,
    mode: GraphMode,
) -> Result<AffinityVars<'t>> {
    let tape = projected.tape();
    let n = projected.rows();
    if neighbors.len() != n {
        return Err(Error::shape(
            "build_affinity",
            format!("{} neighbor lists for {n} samples", neighbors.len()),
        ));
    }
    let unit = projected.row_normalize()?;
    let cos = unit.matmul(unit.transpose())?;
    let kernel = cos.scale(tau / 2.0).exp();
    let masked = kernel.mul(tape.constant(neighbors.mask()))?;
    match mode {
        GraphMode::Symmetric => {
            let affinity = masked.add(masked.transpose())?.scale(0.5);
            let degrees = affinity.row_sum().clamp_min(DEGREE_FLOOR);
            let inv_sqrt = degrees.powf(-0.5)?;
            let normalized = affinity.mul_col(inv_sqrt)?.mul_row(inv_sqrt.transpose())?;
            Ok(AffinityVars {
                affinity,
                normalized,
                degrees,
            })
        }
        GraphMode::RowStochastic => {
            let degrees = masked.row_sum().clamp_min(DEGREE_FLOOR);
            let normalized = masked.mul_col(degrees.powf(-1.0)?)?;
            Ok(AffinityVars {
                affinity: masked,
                normalized,
                degrees,
            })
        }
    }
}

/// Non-differentiable wrapper around [`build_affinity_var`].
pub fn build_affinity(projected: &Matrix, neighbors: &NeighborSets, tau: f64, mode: GraphMode) -> Result<AffinityGraph> {
    let tape = Tape::new();
    let g = tape.constant(projected.clone());
    Ok(build_affinity_var(g, neighbors, tau, mode)?.to_graph())
}
