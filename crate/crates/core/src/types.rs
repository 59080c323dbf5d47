//! Shared value types. Everything here is validated on construction and
//! immutable afterwards.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`DiscreteDistribution`].
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-9;

/// Symmetry tolerance for [`IntraCostMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// `n` embedding vectors of dimension `d`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    vectors: Array2<f64>,
}

impl FeatureBatch {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::NoRows);
        }
        if vectors.ncols() == 0 {
            return Err(Error::InvalidInput("feature dimension must be at least 1".into()));
        }
        if let Some(((row, col), _)) = vectors.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                line: row + 1,
                column: col + 1,
            });
        }
        Ok(Self { vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::NoRows);
        }
        let d = rows[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::RaggedRow {
                    line: i + 1,
                    expected: d,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let vectors = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Reorders rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        Ok(Self {
            vectors: self.vectors.select(Axis(0), perm),
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for {} rows",
            perm.len(),
            n
        )));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Probability weights over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    weights: Array1<f64>,
}

impl DiscreteDistribution {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("no weights".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "weight {i} is {w}, expected a finite non-negative value"
            )));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    /// The empirical measure with mass `1/n` on each of `n` atoms.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("n must be at least 1".into()));
        }
        Self::new(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    /// True when every weight equals `1/n` exactly.
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| x == w)
    }

    /// `mu ⊗ nu`, the independent coupling.
    pub fn product(&self, other: &DiscreteDistribution) -> Array2<f64> {
        let (n, m) = (self.len(), other.len());
        Array2::from_shape_fn((n, m), |(i, j)| self.weights[i] * other.weights[j])
    }
}

/// Convenience wrapper for [`DiscreteDistribution::uniform`].
pub fn uniform_distribution(n: usize) -> Result<DiscreteDistribution> {
    DiscreteDistribution::uniform(n)
}

/// A transport plan together with the marginals it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    plan: Array2<f64>,
    row_marginal: DiscreteDistribution,
    col_marginal: DiscreteDistribution,
}

impl Coupling {
    pub fn new(
        plan: Array2<f64>,
        row_marginal: DiscreteDistribution,
        col_marginal: DiscreteDistribution,
    ) -> Result<Self> {
        if plan.dim() != (row_marginal.len(), col_marginal.len()) {
            return Err(Error::DimensionMismatch(format!(
                "plan is {:?}, marginals are {} and {}",
                plan.dim(),
                row_marginal.len(),
                col_marginal.len()
            )));
        }
        if plan.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "coupling entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            plan,
            row_marginal,
            col_marginal,
        })
    }

    pub fn product(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Self {
        Self {
            plan: mu.product(nu),
            row_marginal: mu.clone(),
            col_marginal: nu.clone(),
        }
    }

    pub fn plan(&self) -> ArrayView2<'_, f64> {
        self.plan.view()
    }

    pub fn into_plan(self) -> Array2<f64> {
        self.plan
    }

    pub fn row_marginal(&self) -> &DiscreteDistribution {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &DiscreteDistribution {
        &self.col_marginal
    }

    pub fn shape(&self) -> (usize, usize) {
        self.plan.dim()
    }

    /// L1 distance between the plan's marginals and the prescribed ones.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(
            self.plan.view(),
            self.row_marginal.weights(),
            self.col_marginal.weights(),
        )
    }

    pub fn transposed(&self) -> Self {
        Self {
            plan: self.plan.t().to_owned(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
        }
    }
}

pub(crate) fn marginal_violation(
    plan: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
) -> f64 {
    let rows = plan.sum_axis(Axis(1));
    let cols = plan.sum_axis(Axis(0));
    let r: f64 = rows.iter().zip(mu).map(|(a, b)| (a - b).abs()).sum();
    let c: f64 = cols.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum();
    r + c
}

/// Pairwise L1 distances within one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraCostMatrix {
    costs: Array2<f64>,
}

impl IntraCostMatrix {
    /// Wraps an arbitrary matrix after checking it is square, symmetric,
    /// non-negative and zero on the diagonal.
    pub fn try_from_matrix(costs: Array2<f64>) -> Result<Self> {
        let (n, m) = costs.dim();
        if n != m || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "intra-space costs must be square and non-empty, got {n}x{m}"
            )));
        }
        for i in 0..n {
            if costs[[i, i]] != 0.0 {
                return Err(Error::InvalidInput(format!("non-zero diagonal at {i}")));
            }
            for k in 0..n {
                let c = costs[[i, k]];
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "cost ({i},{k}) = {c} is not finite and non-negative"
                    )));
                }
                if (c - costs[[k, i]]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!("asymmetric at ({i},{k})")));
                }
            }
        }
        Ok(Self { costs })
    }

    pub fn len(&self) -> usize {
        self.costs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn costs(&self) -> ArrayView2<'_, f64> {
        self.costs.view()
    }

    pub fn mean(&self) -> f64 {
        self.costs.mean().unwrap_or(0.0)
    }
}

/// `costs[i][k] = Σ_d |x_i[d] − x_k[d]|`.
pub fn intra_costs(batch: &FeatureBatch) -> IntraCostMatrix {
    let n = batch.len();
    let mut costs = Array2::zeros((n, n));
    for i in 0..n {
        for k in (i + 1)..n {
            let d: f64 = batch
                .row(i)
                .iter()
                .zip(batch.row(k))
                .map(|(a, b)| (a - b).abs())
                .sum();
            costs[[i, k]] = d;
            costs[[k, i]] = d;
        }
    }
    IntraCostMatrix { costs }
}

/// How the entropic regularization strength is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    /// A multiple of the mean entry of the cost the solver sees.
    RelativeToMeanCost(f64),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::RelativeToMeanCost(0.01)
    }
}

impl Epsilon {
    pub fn resolve(self, mean_cost: f64) -> Result<f64> {
        let eps = match self {
            Epsilon::Absolute(e) => e,
            Epsilon::RelativeToMeanCost(s) => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidEpsilon(s));
                }
                let e = s * mean_cost;
                // An all-zero cost makes any epsilon exact; fall back to the factor itself.
                if e > 0.0 {
                    e
                } else {
                    s
                }
            }
        };
        if eps > 0.0 && eps.is_finite() {
            Ok(eps)
        } else {
            Err(Error::InvalidEpsilon(eps))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub epsilon: Epsilon,
    /// Mirror-descent steps of the Gromov-Wasserstein solver.
    pub max_outer_iters: usize,
    pub max_sinkhorn_iters: usize,
    /// L1 marginal violation accepted by Sinkhorn; also the outer-loop
    /// stopping threshold on successive plans.
    pub marginal_tol: f64,
    /// Force the log-domain solver. It is also selected automatically when
    /// `epsilon < 0.05 * max(cost)`.
    pub log_domain: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::default(),
            max_outer_iters: 200,
            max_sinkhorn_iters: 10_000,
            marginal_tol: 1e-9,
            log_domain: false,
        }
    }
}

impl SolverConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Epsilon::Absolute(epsilon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (Epsilon::Absolute(e) | Epsilon::RelativeToMeanCost(e)) = self.epsilon;
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidEpsilon(e));
        }
        if self.max_outer_iters == 0 || self.max_sinkhorn_iters == 0 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        if !(self.marginal_tol > 0.0 && self.marginal_tol.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.marginal_tol
            )));
        }
        Ok(())
    }
}

/// 8-bit interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("image dimensions must be positive".into()));
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if pixels.len() != expected {
            return Err(Error::Image(format!(
                "buffer holds {} bytes, expected {expected} for {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.iter().copied().cycle().take(n * 3).collect())
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copies out the `w × h` rectangle at `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        check_rect(self.dims(), x, y, w, h)?;
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        Self::new(w, h, pixels)
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }
}

pub(crate) fn check_rect((fw, fh): (u32, u32), x: u32, y: u32, w: u32, h: u32) -> Result<()> {
    let inside = w > 0
        && h > 0
        && (x as u64 + w as u64) <= fw as u64
        && (y as u64 + h as u64) <= fh as u64;
    if inside {
        Ok(())
    } else {
        Err(Error::OutOfBounds(format!(
            "{w}x{h}+{x}+{y} in {fw}x{fh}"
        )))
    }
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("mask dimensions must be positive".into()));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::Image(format!(
                "mask holds {} values, expected {}",
                values.len(),
                width as usize * height as usize
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::NonBinaryMask { value, index });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value as u8; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y) as u8);
            }
        }
        Self::new(width, height, values)
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// One entry per pixel, each 0 or 1.
    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

/// Signed per-channel correction image with values in `[-255, 255]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualImage {
    width: u32,
    height: u32,
    values: Vec<i16>,
}

impl ResidualImage {
    pub fn new(width: u32, height: u32, values: Vec<i16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("residual dimensions must be positive".into()));
        }
        if values.len() != width as usize * height as usize * 3 {
            return Err(Error::Image(format!(
                "residual holds {} values, expected {}",
                values.len(),
                width as usize * height as usize * 3
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-255..=255).contains(*v)) {
            return Err(Error::Image(format!("residual value {v} outside [-255, 255]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: i16) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize * 3])
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}
