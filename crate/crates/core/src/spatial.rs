//! Spatial weight matrices, spatial lags and instrument construction.

use crate::funcspace::Grid;
use crate::{Error, Matrix, Result};
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Sparse `n × n` spatial weight matrix with zero diagonal.
///
/// Rows are stored as column-sorted `(j, w_ij)` lists, so every reduction over
/// a row runs in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    row_normalized: bool,
}

impl SpatialWeights {
    /// The `n × n` zero matrix.
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
            row_normalized: false,
        }
    }

    /// Builds `W` from `(i, j, w)` triplets. Zero weights are dropped;
    /// self-loops, repeated pairs and non-finite weights are rejected.
    pub fn from_triplets<I>(n: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
            }
            if i == j {
                return Err(Error::Invalid(format!("diagonal entry ({i}, {i}) must be zero")));
            }
            if !w.is_finite() {
                return Err(Error::Invalid(format!("non-finite weight at ({i}, {j})")));
            }
            if map.insert((i, j), w).is_some() {
                return Err(Error::Invalid(format!("entry ({i}, {j}) given twice")));
            }
        }
        let mut rows = vec![Vec::new(); n];
        for ((i, j), w) in map {
            if w != 0.0 {
                rows[i].push((j, w));
            }
        }
        Ok(Self {
            n,
            rows,
            row_normalized: false,
        })
    }

    /// Rook contiguity among units occupying cells of a `rows × cols`
    /// lattice, row-normalized. Unit `u` sits at `positions[u] = (row, col)`.
    pub fn rook_lattice(rows: usize, cols: usize, positions: &[(usize, usize)]) -> Result<Self> {
        let mut occupant: Vec<Option<usize>> = vec![None; rows * cols];
        for (u, &(r, c)) in positions.iter().enumerate() {
            if r >= rows || c >= cols {
                return Err(Error::Invalid(format!(
                    "unit {u} at ({r}, {c}) lies outside the {rows}x{cols} lattice"
                )));
            }
            let cell = &mut occupant[r * cols + c];
            if let Some(other) = cell {
                return Err(Error::Invalid(format!("units {other} and {u} share cell ({r}, {c})")));
            }
            *cell = Some(u);
        }
        let n = positions.len();
        let mut adj = vec![Vec::new(); n];
        for (u, &(r, c)) in positions.iter().enumerate() {
            let mut neighbors = Vec::with_capacity(4);
            if r > 0 {
                neighbors.push((r - 1, c));
            }
            if r + 1 < rows {
                neighbors.push((r + 1, c));
            }
            if c > 0 {
                neighbors.push((r, c - 1));
            }
            if c + 1 < cols {
                neighbors.push((r, c + 1));
            }
            for (nr, nc) in neighbors {
                if let Some(v) = occupant[nr * cols + nc] {
                    adj[u].push((v, 1.0));
                }
            }
            adj[u].sort_by_key(|e| e.0);
        }
        Self {
            n,
            rows: adj,
            row_normalized: false,
        }
        .row_normalize()
    }

    /// Row-normalized weights `w_ij ∝ √size_j` over the neighbors of `i`.
    ///
    /// `edges` is an undirected adjacency list; both orientations are added.
    /// Units without neighbors keep a zero row.
    pub fn size_weighted_adjacency(n: usize, edges: &[(usize, usize)], sizes: &[f64]) -> Result<Self> {
        if sizes.len() != n {
            return Err(Error::Dimension(format!("{} sizes for {n} units", sizes.len())));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!("edge ({i}, {j}) references a unit outside 0..{n}")));
            }
            if i == j {
                continue;
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut rows = Vec::with_capacity(n);
        for (i, mut nbrs) in adj.into_iter().enumerate() {
            nbrs.sort_unstable();
            nbrs.dedup();
            let mut row = Vec::with_capacity(nbrs.len());
            for j in nbrs {
                let size = sizes[j];
                if !(size > 0.0 && size.is_finite()) {
                    return Err(Error::Invalid(format!(
                        "unit {j} (neighbor of {i}) has non-positive size {size}"
                    )));
                }
                row.push((j, libm::sqrt(size)));
            }
            rows.push(row);
        }
        Self {
            n,
            rows,
            row_normalized: false,
        }
        .row_normalize()
    }

    /// Scales every nonzero row to sum to one; zero rows stay zero.
    pub fn row_normalize(&self) -> Result<Self> {
        let mut rows = Vec::with_capacity(self.n);
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(&(j, w)) = row.iter().find(|e| e.1 < 0.0) {
                return Err(Error::Invalid(format!("negative weight {w} at ({i}, {j})")));
            }
            let total: f64 = row.iter().map(|e| e.1).sum();
            if total == 0.0 || (self.row_normalized && total == 1.0) {
                rows.push(row.clone());
            } else {
                rows.push(row.iter().map(|&(j, w)| (j, w / total)).collect());
            }
        }
        Ok(Self {
            n: self.n,
            rows,
            row_normalized: true,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_row_normalized(&self) -> bool {
        self.row_normalized
    }

    /// Nonzeros of row `i` as `(column, weight)`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// All nonzeros in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, w)| (i, j, w)))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `‖W‖_∞`, the maximum absolute row sum.
    pub fn infinity_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest number of neighbors of any unit.
    pub fn max_neighbors(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of units without neighbors.
    pub fn isolated_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_empty()).count()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, j, w) in self.triplets() {
            m[(i, j)] = w;
        }
        m
    }

    /// `W · M`.
    pub fn lag(&self, m: &Matrix) -> Result<Matrix> {
        if m.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "spatial lag of a matrix with {} rows by a {}x{} weight matrix",
                m.nrows(),
                self.n,
                self.n
            )));
        }
        let mut out = Matrix::zeros(self.n, m.ncols());
        for c in 0..m.ncols() {
            let src = m.column(c);
            let mut dst = out.column_mut(c);
            for (i, row) in self.rows.iter().enumerate() {
                let mut acc = 0.0;
                for &(j, w) in row {
                    acc += w * src[j];
                }
                dst[i] = acc;
            }
        }
        Ok(out)
    }

    /// `W · v`.
    pub fn lag_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::Dimension(format!("vector of length {} for {} units", v.len(), self.n)));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * v[j]).sum())
            .collect())
    }
}

/// `W · M`.
pub fn spatial_lag(w: &SpatialWeights, m: &Matrix) -> Result<Matrix> {
    w.lag(m)
}

/// Instruments `[W[1 | X] | W²[1 | X] | … | W^order[1 | X]]`.
///
/// The lags of the constant are kept even when they duplicate the intercept;
/// the estimator's generalized inverse absorbs the collinearity.
pub fn build_instruments(w: &SpatialWeights, x: &Matrix, max_order: usize) -> Result<Matrix> {
    if max_order == 0 {
        return Err(Error::Invalid("instrument order must be at least 1".into()));
    }
    if x.nrows() != w.n() && x.ncols() > 0 {
        return Err(Error::Dimension(format!("{} covariate rows for {} units", x.nrows(), w.n())));
    }
    let n = w.n();
    let d = x.ncols();
    let mut base = Matrix::from_element(n, d + 1, 1.0);
    if d > 0 {
        base.view_mut((0, 1), (n, d)).copy_from(x);
    }
    let mut out = Matrix::zeros(n, max_order * (d + 1));
    let mut current = base;
    for p in 0..max_order {
        current = w.lag(&current)?;
        out.view_mut((0, p * (d + 1)), (n, d + 1)).copy_from(&current);
    }
    Ok(out)
}

/// Sufficient conditions for the model to have a unique solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletenessReport {
    /// `max |α(t, s)|` over the grid.
    pub alpha_sup: f64,
    /// `‖W‖_∞`.
    pub row_sum_norm: f64,
    /// `alpha_sup · ‖W‖_∞`.
    pub product: f64,
    /// `‖W‖_∞ · max_s ∫ |α(t, s)| dt`.
    pub alt_bound: f64,
    /// `product < 1`.
    pub sup_condition: bool,
    /// `alt_bound < 1`.
    pub integral_condition: bool,
}

impl CompletenessReport {
    /// True when either sufficient condition holds.
    pub fn satisfied(&self) -> bool {
        self.sup_condition || self.integral_condition
    }
}

/// Evaluates both completeness conditions for a kernel given on `grid × grid`
/// (`alpha[(g, h)] = α(t_g, s_h)`). Reports only; never fails on violation.
pub fn completeness_check(w: &SpatialWeights, alpha: &Matrix, grid: &Grid) -> Result<CompletenessReport> {
    let g = grid.len();
    if alpha.shape() != (g, g) {
        return Err(Error::Dimension(format!(
            "kernel is {}x{} but the grid has {g} points",
            alpha.nrows(),
            alpha.ncols()
        )));
    }
    let alpha_sup = alpha.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let col_int = (0..g)
        .map(|h| grid.step() * alpha.column(h).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let row_sum_norm = w.infinity_norm();
    let product = alpha_sup * row_sum_norm;
    let alt_bound = row_sum_norm * col_int;
    Ok(CompletenessReport {
        alpha_sup,
        row_sum_norm,
        product,
        alt_bound,
        sup_condition: product < 1.0,
        integral_condition: alt_bound < 1.0,
    })
}
