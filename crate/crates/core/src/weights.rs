//! Weighting matrices (`W_b`, `W_l`, full-system `W`) and combination weights.
//!
//! A [`WeightMatrix`] is the covariance-like matrix of the reconciliation
//! objective `(x - x̂)' W⁻¹ (x - x̂)`: larger entries mean less trusted
//! forecasts, which absorb more of a discrepancy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::{spd_factor, symmetrize};

/// Tolerance for column sums of combination weights.
pub const PROPORTION_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Identity,
    Diagonal,
    Full,
}

/// Where a weight matrix came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSource {
    Unit,
    Proportions,
    TrainingVariance,
    ResidualShrinkage { lambda: f64 },
    User,
}

#[derive(Debug, Clone)]
enum Repr {
    Identity(usize),
    Diagonal(Vec<f64>),
    Full {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

/// Symmetric positive-definite weighting matrix.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    repr: Repr,
    source: WeightSource,
}

impl WeightMatrix {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWeights("weight matrix of size 0".into()));
        }
        Ok(Self {
            repr: Repr::Identity(n),
            source: WeightSource::Unit,
        })
    }

    pub fn diagonal(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidWeights("weight matrix of size 0".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidWeights(format!(
                "diagonal entry {i} is {v}, must be finite and positive"
            )));
        }
        Ok(Self {
            repr: Repr::Diagonal(values),
            source: WeightSource::User,
        })
    }

    /// Full symmetric matrix; rejects asymmetric, non-positive-diagonal or
    /// numerically singular input.
    pub fn full(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::InvalidWeights(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                n,
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidWeights("non-finite entry".into()));
        }
        let scale = matrix.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            if matrix[(i, i)] <= 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "diagonal entry {i} is {}, must be positive",
                    matrix[(i, i)]
                )));
            }
            for j in (i + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidWeights(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut matrix = matrix;
        symmetrize(&mut matrix);
        let chol = spd_factor(&matrix).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("{n}x{n} weight matrix"))
        })?;
        Ok(Self {
            repr: Repr::Full { matrix, chol },
            source: WeightSource::User,
        })
    }

    pub fn with_source(mut self, source: WeightSource) -> Self {
        self.source = source;
        self
    }

    pub fn source(&self) -> WeightSource {
        self.source
    }

    pub fn kind(&self) -> WeightKind {
        match self.repr {
            Repr::Identity(_) => WeightKind::Identity,
            Repr::Diagonal(_) => WeightKind::Diagonal,
            Repr::Full { .. } => WeightKind::Full,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Identity(n) => *n,
            Repr::Diagonal(d) => d.len(),
            Repr::Full { matrix, .. } => matrix.nrows(),
        }
    }

    /// Diagonal entries (the variances).
    pub fn diagonal_values(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Identity(n) => vec![1.0; *n],
            Repr::Diagonal(d) => d.clone(),
            Repr::Full { matrix, .. } => matrix.diagonal().iter().copied().collect(),
        }
    }

    /// Diagonal of `W⁻¹` for identity or diagonal matrices.
    pub fn precision_diagonal(&self) -> Result<Vec<f64>> {
        match &self.repr {
            Repr::Full { .. } => Err(Error::InvalidWeights(
                "precision diagonal requested for a full matrix".into(),
            )),
            _ => Ok(self.diagonal_values().iter().map(|v| 1.0 / v).collect()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Identity(n) => DMatrix::identity(*n, *n),
            Repr::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Repr::Full { matrix, .. } => matrix.clone(),
        }
    }

    /// `W x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Identity(_) => x.clone(),
            Repr::Diagonal(d) => DVector::from_iterator(x.len(), x.iter().zip(d).map(|(a, b)| a * b)),
            Repr::Full { matrix, .. } => matrix * x,
        }
    }

    /// `W M`.
    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.repr {
            Repr::Identity(_) => m.clone(),
            Repr::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            Repr::Full { matrix, .. } => matrix * m,
        }
    }

    /// `W⁻¹ x`.
    pub fn solve_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Identity(_) => x.clone(),
            Repr::Diagonal(d) => DVector::from_iterator(x.len(), x.iter().zip(d).map(|(a, b)| a / b)),
            Repr::Full { chol, .. } => chol.solve(x),
        }
    }

    /// `W⁻¹ M`.
    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.repr {
            Repr::Identity(_) => m.clone(),
            Repr::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                out
            }
            Repr::Full { chol, .. } => chol.solve(m),
        }
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn principal(&self, indices: &[usize]) -> Result<Self> {
        let n = self.dim();
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension(format!("index {i} out of range for size {n}")));
        }
        let sub = match &self.repr {
            Repr::Identity(_) => Self::identity(indices.len())?,
            Repr::Diagonal(d) => Self::diagonal(indices.iter().map(|&i| d[i]).collect())?,
            Repr::Full { matrix, .. } => {
                let m = DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
                    matrix[(indices[r], indices[c])]
                });
                Self::full(m)?
            }
        };
        Ok(sub.with_source(self.source))
    }

    /// Block-diagonal `diag(self, other)`; stays diagonal when both are.
    pub fn block_diag(&self, other: &WeightMatrix) -> Result<Self> {
        if self.kind() != WeightKind::Full && other.kind() != WeightKind::Full {
            let mut d = self.diagonal_values();
            d.extend(other.diagonal_values());
            return Self::diagonal(d);
        }
        let (a, b) = (self.dim(), other.dim());
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.to_dense());
        m.view_mut((a, a), (b, b)).copy_from(&other.to_dense());
        Self::full(m)
    }
}

/// A weighting that is either shared by all horizons or given per horizon.
#[derive(Debug, Clone)]
pub enum Weighting {
    Constant(WeightMatrix),
    PerHorizon(Vec<WeightMatrix>),
}

impl Weighting {
    /// Weight matrix for horizon index `h` (0-based column).
    pub fn for_horizon(&self, h: usize) -> Result<&WeightMatrix> {
        match self {
            Weighting::Constant(w) => Ok(w),
            Weighting::PerHorizon(ws) => ws.get(h).ok_or_else(|| {
                Error::Dimension(format!(
                    "no weight matrix for horizon {} (have {})",
                    h + 1,
                    ws.len()
                ))
            }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Weighting::Constant(w) => w.dim(),
            Weighting::PerHorizon(ws) => ws.first().map_or(0, WeightMatrix::dim),
        }
    }
}

impl From<WeightMatrix> for Weighting {
    fn from(w: WeightMatrix) -> Self {
        Weighting::Constant(w)
    }
}

/// Combination weights `P_l` of one level: one weight vector per elementary
/// hierarchy, each summing to one over the parent's bottom series.
#[derive(Debug, Clone)]
pub struct CombinationWeights {
    level: usize,
    blocks: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    n_b: usize,
}

impl CombinationWeights {
    /// `blocks[j]` holds the weights of the bottom members of the `j`-th
    /// level-`l` node, in bottom order.
    pub fn new(h: &Hierarchy, l: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        let members: Vec<Vec<usize>> = h
            .elementary_hierarchies(l)?
            .into_iter()
            .map(|e| e.bottom_indices)
            .collect();
        if blocks.len() != members.len() {
            return Err(Error::Dimension(format!(
                "level {l} has {} nodes, got {} weight blocks",
                members.len(),
                blocks.len()
            )));
        }
        for (j, (p, m)) in blocks.iter().zip(&members).enumerate() {
            if p.len() != m.len() {
                return Err(Error::InvalidWeights(format!(
                    "block {j} has {} weights for {} bottom series",
                    p.len(),
                    m.len()
                )));
            }
            check_block(p, j)?;
        }
        Ok(Self {
            level: l,
            blocks,
            members,
            n_b: h.n_b(),
        })
    }

    /// Builds the blocks from one weight per bottom series.
    pub fn from_bottom_weights(h: &Hierarchy, l: usize, p: &[f64]) -> Result<Self> {
        if p.len() != h.n_b() {
            return Err(Error::Dimension(format!(
                "{} proportions for {} bottom series",
                p.len(),
                h.n_b()
            )));
        }
        let blocks = h
            .elementary_hierarchies(l)?
            .into_iter()
            .map(|e| e.bottom_indices.iter().map(|&b| p[b]).collect())
            .collect();
        Self::new(h, l, blocks)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    /// Weight of each bottom series within its level-`l` block.
    pub fn bottom_weights(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_b];
        for (block, m) in self.blocks.iter().zip(&self.members) {
            for (&w, &b) in block.iter().zip(m) {
                p[b] = w;
            }
        }
        p
    }

    /// Dense `P_l` (n_b x n_l).
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_b, self.blocks.len());
        for (j, (block, m)) in self.blocks.iter().zip(&self.members).enumerate() {
            for (&w, &b) in block.iter().zip(m) {
                p[(b, j)] = w;
            }
        }
        p
    }
}

fn check_block(p: &[f64], j: usize) -> Result<()> {
    // A single-member block (a duplicated node) can only carry weight 1.
    let singleton = p.len() == 1;
    for &v in p {
        let ok = v.is_finite() && v > 0.0 && (v < 1.0 || (singleton && v == 1.0));
        if !ok {
            return Err(Error::InvalidWeights(format!(
                "combination weight {v} in block {j} is outside (0, 1)"
            )));
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROPORTION_SUM_TOL {
        return Err(Error::InvalidWeights(format!(
            "combination weights of block {j} sum to {sum}"
        )));
    }
    Ok(())
}

/// Diagonal bottom weighting equivalent to the combination weights: with
/// `W_b = diag(p)` the exogenous solution reproduces `P_l â_l + (I - P_l C_l) b̂`.
/// The objective precision `W_b⁻¹` is `diag(1/p)`.
pub fn weights_from_proportions(p: &CombinationWeights) -> Result<WeightMatrix> {
    Ok(WeightMatrix::diagonal(p.bottom_weights())?.with_source(WeightSource::Proportions))
}

/// Per elementary hierarchy at level `l`: `p_i = σ²_i / Σ_members σ²`.
pub fn proportions_from_weights(
    w: &WeightMatrix,
    h: &Hierarchy,
    l: usize,
) -> Result<CombinationWeights> {
    if w.kind() == WeightKind::Full {
        return Err(Error::InvalidWeights(
            "combination weights need a diagonal weight matrix".into(),
        ));
    }
    if w.dim() != h.n_b() {
        return Err(Error::Dimension(format!(
            "weight matrix of size {} for {} bottom series",
            w.dim(),
            h.n_b()
        )));
    }
    let sigma = w.diagonal_values();
    let blocks = h
        .elementary_hierarchies(l)?
        .into_iter()
        .map(|e| {
            let total: f64 = e.bottom_indices.iter().map(|&b| sigma[b]).sum();
            e.bottom_indices.iter().map(|&b| sigma[b] / total).collect()
        })
        .collect();
    CombinationWeights::new(h, l, blocks)
}

pub fn unit_weights(n: usize) -> Result<WeightMatrix> {
    WeightMatrix::identity(n)
}

/// Sample variance with denominator `n - 1`.
pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Per-series training variances, optionally stratified by season.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalVariances {
    period: usize,
    /// `strata[i][s]`: variance of series `i` in stratum `s`.
    strata: Vec<Vec<f64>>,
    lens: Vec<usize>,
}

impl SeasonalVariances {
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn strata(&self) -> &[Vec<f64>] {
        &self.strata
    }

    /// Variances used for horizon `h` (1-based): the stratum of the
    /// observation `h` steps after the end of each training window.
    pub fn variances(&self, h: usize) -> Vec<f64> {
        self.strata
            .iter()
            .zip(&self.lens)
            .map(|(s, &len)| s[(len + h - 1) % self.period])
            .collect()
    }

    pub fn for_horizon(&self, h: usize) -> Result<WeightMatrix> {
        Ok(WeightMatrix::diagonal(self.variances(h))?.with_source(WeightSource::TrainingVariance))
    }

    /// One matrix per horizon `1..=horizons` (a single shared one when not seasonal).
    pub fn weighting(&self, horizons: usize) -> Result<Weighting> {
        if self.period == 1 {
            return Ok(Weighting::Constant(self.for_horizon(1)?));
        }
        Ok(Weighting::PerHorizon(
            (1..=horizons).map(|h| self.for_horizon(h)).collect::<Result<_>>()?,
        ))
    }
}

/// Sample variances of training histories. With `seasonal`, observations are
/// stratified by `index mod seasonal_period`. Zero variances are an error
/// unless `var_floor` is given, in which case they are raised to the floor.
pub fn training_variance_weights(
    training: &[Vec<f64>],
    seasonal_period: usize,
    seasonal: bool,
    var_floor: Option<f64>,
) -> Result<SeasonalVariances> {
    if training.is_empty() {
        return Err(Error::InvalidArgument("no training series".into()));
    }
    if seasonal_period == 0 {
        return Err(Error::InvalidArgument("seasonal period must be positive".into()));
    }
    let period = if seasonal { seasonal_period } else { 1 };
    let mut strata = Vec::with_capacity(training.len());
    for (i, series) in training.iter().enumerate() {
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::Missing(format!("non-finite training value in series {i}")));
        }
        let mut per = Vec::with_capacity(period);
        for s in 0..period {
            let obs: Vec<f64> = series.iter().skip(s).step_by(period).copied().collect();
            if obs.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "series {i}, stratum {s}: {} observations, need at least 2",
                    obs.len()
                )));
            }
            let mut v = sample_variance(&obs);
            if v <= 0.0 {
                match var_floor {
                    Some(f) if f > 0.0 => v = f,
                    _ => {
                        return Err(Error::Degenerate(format!(
                            "series {i}, stratum {s} has zero training variance"
                        )))
                    }
                }
            } else if let Some(f) = var_floor {
                v = v.max(f);
            }
            per.push(v);
        }
        strata.push(per);
    }
    Ok(SeasonalVariances {
        period,
        strata,
        lens: training.iter().map(Vec::len).collect(),
    })
}

/// Column-centred residuals and their sample standard deviations.
fn centred(residuals: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (t, n) = residuals.shape();
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "shrinkage needs at least 3 residual rows, got {t}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no residual columns".into()));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Missing("non-finite residual".into()));
    }
    let mut x = residuals.clone();
    let mut sd = Vec::with_capacity(n);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / t as f64;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / (t as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::Degenerate(format!("residual column {j} has zero variance")));
        }
        sd.push(var.sqrt());
    }
    Ok((x, sd))
}

/// Schäfer–Strimmer intensity for shrinking the sample covariance towards
/// its diagonal, clamped to `[0, 1]`.
pub fn shrinkage_intensity(residuals: &DMatrix<f64>) -> Result<f64> {
    let (x, sd) = centred(residuals)?;
    let (t, n) = x.shape();
    let tf = t as f64;
    let mut z = x;
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col /= sd[j];
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut mean = 0.0;
            for k in 0..t {
                mean += z[(k, i)] * z[(k, j)];
            }
            mean /= tf;
            let mut ss = 0.0;
            for k in 0..t {
                ss += (z[(k, i)] * z[(k, j)] - mean).powi(2);
            }
            let r = tf / (tf - 1.0) * mean;
            num += tf / (tf - 1.0).powi(3) * ss;
            den += r * r;
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Shrunk covariance `λ diag(Σ̂) + (1 - λ) Σ̂` at the estimated intensity.
pub fn shrinkage_covariance(residuals: &DMatrix<f64>) -> Result<WeightMatrix> {
    let lambda = shrinkage_intensity(residuals)?;
    shrinkage_covariance_with_intensity(residuals, lambda)
}

/// Shrunk covariance at a given intensity `lambda ∈ [0, 1]`.
pub fn shrinkage_covariance_with_intensity(
    residuals: &DMatrix<f64>,
    lambda: f64,
) -> Result<WeightMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("intensity {lambda} outside [0, 1]")));
    }
    let (x, _) = centred(residuals)?;
    let t = x.nrows() as f64;
    let mut cov = x.transpose() * &x / (t - 1.0);
    for i in 0..cov.nrows() {
        for j in 0..cov.ncols() {
            if i != j {
                cov[(i, j)] *= 1.0 - lambda;
            }
        }
    }
    let w = if lambda == 1.0 {
        WeightMatrix::diagonal(cov.diagonal().iter().copied().collect())?
    } else {
        WeightMatrix::full(cov)?
    };
    Ok(w.with_source(WeightSource::ResidualShrinkage { lambda }))
}
