//! Points, block partitions and the closed catalog of nonexpansive local
//! operators, plus sampled validators for nonexpansiveness and bounded
//! displacement.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{dist, Matrix};
use crate::par::{map_indices, Execution};
use crate::validation::ValidationReport;

/// Tolerance on `‖R − Rᵀ‖_max` and on negative eigenvalues of affine operators.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Splits `ℝⁿ` into `m` contiguous coordinate blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockPartition {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Empty("block partition"));
        }
        if let Some(l) = dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("block {l} has dimension 0")));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for d in &dims {
            offsets.push(total);
            total += d;
        }
        Ok(BlockPartition {
            dims,
            offsets,
            total,
        })
    }

    /// The trivial partition: one block covering all `n` coordinates.
    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    /// `n` one-dimensional blocks.
    pub fn unit_blocks(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("block partition"));
        }
        Self::new(vec![1; n])
    }

    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn range(&self, block: usize) -> Result<Range<usize>> {
        match self.dims.get(block) {
            Some(d) => Ok(self.offsets[block]..self.offsets[block] + d),
            None => Err(Error::BlockOutOfRange {
                block,
                blocks: self.dims.len(),
            }),
        }
    }
}

/// Closed convex sets with closed-form projections.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ConvexSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        ensure_len("box bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Empty("box"));
        }
        ensure_finite("box lower bound", &lower)?;
        ensure_finite("box upper bound", &upper)?;
        if let Some(j) = lower.iter().zip(&upper).position(|(l, u)| l > u) {
            return Err(Error::invalid(format!(
                "box lower bound exceeds upper bound at coordinate {j}"
            )));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::Empty("ball"));
        }
        ensure_finite("ball center", &center)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
        }
    }

    /// Writes coordinates `range` of the projection of `x` into `out`.
    fn project_range(&self, x: &[f64], range: Range<usize>, out: &mut [f64]) {
        match self {
            ConvexSet::Box { lower, upper } => {
                for (o, j) in out.iter_mut().zip(range) {
                    *o = x[j].max(lower[j]).min(upper[j]);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let d = dist(x, center);
                if d <= *radius {
                    out.copy_from_slice(&x[range]);
                } else {
                    let s = radius / d;
                    for (o, j) in out.iter_mut().zip(range) {
                        *o = center[j] + s * (x[j] - center[j]);
                    }
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.project_range(x, 0..x.len(), &mut out);
        out
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        dist(&self.project(x), x) <= tol
    }

    /// A point guaranteed to lie in the set.
    pub fn anchor(&self) -> Vec<f64> {
        match self {
            ConvexSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
            ConvexSet::Ball { center, .. } => center.clone(),
        }
    }
}

/// Smooth convex objective families.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothKind {
    /// `½‖A x − b‖²`
    Quadratic { a: Matrix, b: Vec<f64> },
    /// Coordinatewise Huber loss around `target`.
    Huber { target: Vec<f64>, delta: f64 },
}

/// A convex differentiable function together with a Lipschitz constant of its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothConvex {
    kind: SmoothKind,
    lipschitz: f64,
}

impl SmoothConvex {
    pub fn quadratic(a: Matrix, b: Vec<f64>) -> Result<Self> {
        ensure_len("quadratic b", a.rows(), b.len())?;
        ensure_finite("quadratic b", &b)?;
        let (_, lipschitz) = a.gram().symmetric_eigen_range();
        if lipschitz <= 0.0 {
            return Err(Error::invalid("quadratic with A = 0 has no positive Lipschitz constant"));
        }
        Ok(SmoothConvex {
            kind: SmoothKind::Quadratic { a, b },
            lipschitz,
        })
    }

    pub fn huber(target: Vec<f64>, delta: f64) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Empty("huber target"));
        }
        ensure_finite("huber target", &target)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("huber delta must be positive, got {delta}")));
        }
        Ok(SmoothConvex {
            kind: SmoothKind::Huber { target, delta },
            lipschitz: 1.0,
        })
    }

    pub fn kind(&self) -> &SmoothKind {
        &self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SmoothKind::Quadratic { a, .. } => a.cols(),
            SmoothKind::Huber { target, .. } => target.len(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            SmoothKind::Quadratic { a, b } => {
                let res: Vec<f64> = a.mul_vec(x).iter().zip(b).map(|(ax, bi)| ax - bi).collect();
                0.5 * res.iter().map(|r| r * r).sum::<f64>()
            }
            SmoothKind::Huber { target, delta } => x
                .iter()
                .zip(target)
                .map(|(xi, ti)| {
                    let d = (xi - ti).abs();
                    if d <= *delta {
                        0.5 * d * d
                    } else {
                        delta * (d - 0.5 * delta)
                    }
                })
                .sum(),
        }
    }

    /// Writes coordinates `range` of `∇f(x)` into `out`.
    fn gradient_range(&self, x: &[f64], range: Range<usize>, out: &mut [f64]) {
        match &self.kind {
            SmoothKind::Quadratic { a, b } => {
                let res: Vec<f64> = (0..a.rows()).map(|r| a.row_dot(r, x) - b[r]).collect();
                for (o, j) in out.iter_mut().zip(range) {
                    *o = res
                        .iter()
                        .enumerate()
                        .fold(0.0, |acc, (r, rr)| acc + a.get(r, j) * rr);
                }
            }
            SmoothKind::Huber { target, delta } => {
                for (o, j) in out.iter_mut().zip(range) {
                    *o = (x[j] - target[j]).clamp(-delta, *delta);
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.gradient_range(x, 0..x.len(), &mut out);
        out
    }
}

/// The operator catalog. Each variant is nonexpansive under the parameter
/// constraint enforced by its constructor on [`LocalOperator`].
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `x ↦ x − τ∇f(x)`
    GradientStep { problem: SmoothConvex, tau: f64 },
    /// Metric projection onto a closed convex set.
    Projection(ConvexSet),
    /// `x ↦ (I − θR)x + θr`
    Affine {
        matrix: Matrix,
        offset: Vec<f64>,
        theta: f64,
        /// Cached `I − θR`.
        linear: Matrix,
        /// Cached `θr`.
        shift: Vec<f64>,
    },
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOperator {
    kind: OperatorKind,
    partition: BlockPartition,
}

impl LocalOperator {
    pub fn identity(partition: BlockPartition) -> Self {
        LocalOperator {
            kind: OperatorKind::Identity,
            partition,
        }
    }

    pub fn projection(set: ConvexSet, partition: BlockPartition) -> Result<Self> {
        ensure_len("projection set", partition.dim(), set.dim())?;
        Ok(LocalOperator {
            kind: OperatorKind::Projection(set),
            partition,
        })
    }

    /// Requires `tau ∈ (0, 2/L)`.
    pub fn gradient_step(problem: SmoothConvex, tau: f64, partition: BlockPartition) -> Result<Self> {
        ensure_len("gradient step problem", partition.dim(), problem.dim())?;
        let upper = 2.0 / problem.lipschitz();
        if !(tau > 0.0 && tau < upper) {
            return Err(Error::invalid(format!(
                "gradient step tau = {tau} outside the open interval (0, {upper})"
            )));
        }
        Ok(LocalOperator {
            kind: OperatorKind::GradientStep { problem, tau },
            partition,
        })
    }

    /// Requires `R` symmetric PSD and `theta ∈ (0, 2/λ_max(R)]`.
    pub fn affine(matrix: Matrix, offset: Vec<f64>, theta: f64, partition: BlockPartition) -> Result<Self> {
        check_psd(&matrix)?;
        let (_, lambda_max) = matrix.symmetric_eigen_range();
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::invalid(format!("affine theta must be positive, got {theta}")));
        }
        if lambda_max > 0.0 && theta > (2.0 / lambda_max) * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "affine theta = {theta} exceeds 2/λ_max = {}",
                2.0 / lambda_max
            )));
        }
        Self::affine_unchecked(matrix, offset, theta, partition)
    }

    /// Builds an affine operator without the symmetry, PSD or step-size
    /// checks. The result may be expansive; meant for exercising validators.
    pub fn affine_unchecked(
        matrix: Matrix,
        offset: Vec<f64>,
        theta: f64,
        partition: BlockPartition,
    ) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("affine matrix must be square"));
        }
        ensure_len("affine matrix", partition.dim(), matrix.rows())?;
        ensure_len("affine offset", partition.dim(), offset.len())?;
        ensure_finite("affine offset", &offset)?;
        let linear = Matrix::identity(matrix.rows())
            .add(&matrix.scale(-theta))
            .expect("same shape");
        let shift = offset.iter().map(|r| theta * r).collect();
        Ok(LocalOperator {
            kind: OperatorKind::Affine {
                matrix,
                offset,
                theta,
                linear,
                shift,
            },
            partition,
        })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure_len("operator input", self.dim(), x.len())?;
        ensure_finite("operator input", x)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![0.0; x.len()];
        self.apply_range(x, 0..x.len(), &mut out);
        Ok(out)
    }

    /// The `block`-th block of `evaluate(x)`, computing only that block.
    pub fn evaluate_block(&self, block: usize, x: &[f64]) -> Result<Vec<f64>> {
        let range = self.partition.range(block)?;
        self.check_input(x)?;
        let mut out = vec![0.0; range.len()];
        self.apply_range(x, range, &mut out);
        Ok(out)
    }

    /// Unchecked kernel shared by full and block evaluation, which is what
    /// makes the two agree bitwise.
    pub(crate) fn apply_range(&self, x: &[f64], range: Range<usize>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), range.len());
        match &self.kind {
            OperatorKind::Identity => out.copy_from_slice(&x[range]),
            OperatorKind::Projection(set) => set.project_range(x, range, out),
            OperatorKind::GradientStep { problem, tau } => {
                problem.gradient_range(x, range.clone(), out);
                for (o, j) in out.iter_mut().zip(range) {
                    *o = x[j] - tau * *o;
                }
            }
            OperatorKind::Affine { linear, shift, .. } => {
                for (o, j) in out.iter_mut().zip(range) {
                    *o = linear.row_dot(j, x) + shift[j];
                }
            }
        }
    }
}

fn check_psd(matrix: &Matrix) -> Result<()> {
    if !matrix.is_square() {
        return Err(Error::invalid("affine matrix must be square"));
    }
    let asym = matrix.asymmetry();
    if asym > PSD_TOLERANCE {
        return Err(Error::invalid(format!("affine matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let (lambda_min, _) = matrix.symmetric_eigen_range();
    if lambda_min < -PSD_TOLERANCE {
        return Err(Error::invalid(format!(
            "affine matrix is not positive semidefinite (min eigenvalue {lambda_min:e})"
        )));
    }
    Ok(())
}

/// The indexed family `{F_i}` whose average is the global operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFamily {
    locals: Vec<LocalOperator>,
    /// Displacement bound `B` with `‖F_i(x) − x‖ ≤ B`, when known or estimated.
    pub displacement_bound: Option<f64>,
}

impl OperatorFamily {
    pub fn new(locals: Vec<LocalOperator>) -> Result<Self> {
        let first = locals.first().ok_or(Error::Empty("operator family"))?;
        if let Some(i) = locals.iter().position(|op| op.partition != first.partition) {
            return Err(Error::invalid(format!(
                "local operator {i} uses a different block partition"
            )));
        }
        Ok(OperatorFamily {
            locals,
            displacement_bound: None,
        })
    }

    pub fn locals(&self) -> &[LocalOperator] {
        &self.locals
    }

    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.locals[0].partition
    }

    pub fn dim(&self) -> usize {
        self.partition().dim()
    }

    /// `F(x) = (1/N) Σ F_i(x)`.
    pub fn global_evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.locals[0].check_input(x)?;
        Ok(self.global_apply(x))
    }

    pub(crate) fn global_apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut acc = vec![0.0; n];
        self.locals[0].apply_range(x, 0..n, &mut acc);
        let mut buf = vec![0.0; n];
        for op in &self.locals[1..] {
            op.apply_range(x, 0..n, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        let count = self.locals.len() as f64;
        acc.iter_mut().for_each(|a| *a /= count);
        acc
    }
}

/// Seeded uniform sampler on the box `[lower, upper]ⁿ`.
#[derive(Debug, Clone)]
pub struct PointSampler {
    dim: usize,
    lower: f64,
    upper: f64,
    rng: ChaCha8Rng,
}

impl PointSampler {
    pub fn new(dim: usize, lower: f64, upper: f64, seed: u64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::invalid(format!("sampler box [{lower}, {upper}] is empty")));
        }
        Ok(PointSampler {
            dim,
            lower,
            upper,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// The default validation region `[−10, 10]ⁿ`.
    pub fn standard(dim: usize, seed: u64) -> Self {
        Self::new(dim, -10.0, 10.0, seed).expect("valid default box")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self) -> Vec<f64> {
        (0..self.dim)
            .map(|_| self.rng.random_range(self.lower..self.upper))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairViolation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `‖F(x) − F(y)‖`
    pub lhs: f64,
    /// `‖x − y‖(1 + tol) + tol`
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonexpansiveReport {
    pub pairs_checked: usize,
    pub violations: Vec<PairViolation>,
}

impl NonexpansiveReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_report(&self, check: impl Into<String>) -> ValidationReport {
        let mut report = ValidationReport::new(check);
        report.note(format!("{} sampled pairs", self.pairs_checked));
        for v in self.violations.iter().take(5) {
            report.fail(format!("‖F(x)−F(y)‖ = {:.6e} > {:.6e}", v.lhs, v.rhs));
        }
        if self.violations.len() > 5 {
            report.fail(format!("... {} violations in total", self.violations.len()));
        }
        report
    }
}

/// Samples `num_pairs` pairs and tests `‖F(x) − F(y)‖ ≤ ‖x − y‖ + tol`.
pub fn check_nonexpansive(
    op: &LocalOperator,
    sampler: &mut PointSampler,
    num_pairs: usize,
    tol: f64,
) -> NonexpansiveReport {
    check_nonexpansive_map(
        |x: &[f64]| {
            let mut out = vec![0.0; x.len()];
            op.apply_range(x, 0..x.len(), &mut out);
            out
        },
        sampler,
        num_pairs,
        tol,
    )
}

/// Same check for an arbitrary map, e.g. the global average.
pub fn check_nonexpansive_map<F>(
    map: F,
    sampler: &mut PointSampler,
    num_pairs: usize,
    tol: f64,
) -> NonexpansiveReport
where
    F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..num_pairs)
        .map(|_| (sampler.sample(), sampler.sample()))
        .collect();
    let outcomes = map_indices(Execution::default(), pairs.len(), |p| {
        let (x, y) = &pairs[p];
        let lhs = dist(&map(x), &map(y));
        let rhs = dist(x, y) + tol;
        (lhs, rhs)
    });
    let violations = pairs
        .iter()
        .zip(outcomes)
        .filter(|(_, (lhs, rhs))| lhs > rhs)
        .map(|((x, y), (lhs, rhs))| PairViolation {
            x: x.clone(),
            y: y.clone(),
            lhs,
            rhs,
        })
        .collect();
    NonexpansiveReport {
        pairs_checked: num_pairs,
        violations,
    }
}

/// Sampled estimate of `max_i ‖F_i(x) − x‖`; stored on the family.
///
/// This is a lower bound on any valid displacement constant.
pub fn estimate_displacement_bound(
    family: &mut OperatorFamily,
    sampler: &mut PointSampler,
    num_points: usize,
) -> f64 {
    let points: Vec<Vec<f64>> = (0..num_points).map(|_| sampler.sample()).collect();
    let bound = displacement_on_points(family, &points);
    family.displacement_bound = Some(bound);
    bound
}

/// `max_i max_x ‖F_i(x) − x‖` over the given points.
pub fn displacement_on_points(family: &OperatorFamily, points: &[Vec<f64>]) -> f64 {
    let per_point = map_indices(Execution::default(), points.len(), |p| {
        family
            .locals
            .iter()
            .map(|op| displacement(op, &points[p]))
            .fold(0.0, f64::max)
    });
    per_point.into_iter().fold(0.0, f64::max)
}

/// Sampled check that `‖∇f(x) − ∇f(y)‖ ≤ L‖x − y‖(1 + tol)`.
pub fn check_gradient_lipschitz(
    problem: &SmoothConvex,
    sampler: &mut PointSampler,
    num_pairs: usize,
    tol: f64,
) -> ValidationReport {
    let mut report = ValidationReport::new("gradient Lipschitz constant");
    let l = problem.lipschitz();
    let mut worst: f64 = 0.0;
    for _ in 0..num_pairs {
        let x = sampler.sample();
        let y = sampler.sample();
        let gap = dist(&x, &y);
        let ratio = dist(&problem.gradient(&x), &problem.gradient(&y)) / gap;
        worst = worst.max(ratio);
        if ratio > l * (1.0 + tol) {
            report.fail(format!("observed ratio {ratio:.6e} exceeds L = {l:.6e}"));
            break;
        }
    }
    report.note(format!("largest sampled ratio {worst:.6e}, L = {l:.6e}"));
    report
}

/// Euclidean norm of `F(x) − x`.
fn displacement(op: &LocalOperator, x: &[f64]) -> f64 {
    let mut out = vec![0.0; x.len()];
    op.apply_range(x, 0..x.len(), &mut out);
    dist(&out, x)
}
