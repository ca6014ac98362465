//! Scenario builders for distributed gradient descent, the distributed
//! shortest-distance problem and separable linear equations, each paired with
//! an independent centralized oracle for the reference solution.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{InitialStates, Mode, RunConfig, TraceOptions};
use crate::error::{ensure_len, Error, Result};
use crate::graph::{ring_schedule, GraphSchedule};
use crate::linalg::{dist, Matrix};
use crate::operators::{BlockPartition, ConvexSet, LocalOperator, OperatorFamily, SmoothConvex, SmoothKind};
use crate::par::Execution;
use crate::stepsize::StepsizeSchedule;

/// Iteration cap shared by the iterative oracles.
pub const ORACLE_MAX_ITERATIONS: usize = 10_000_000;

/// Residual bound a reference must meet before a run is scored against it.
pub const REFERENCE_RESIDUAL_BOUND: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub point: Vec<f64>,
    /// Which oracle produced the point.
    pub provenance: String,
    /// False when the oracle found a continuum of solutions and returned one of them.
    pub unique: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: RunConfig,
    pub reference: Option<Reference>,
    pub expected_properties: Vec<String>,
}

/// Run-level settings shared by all builders.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub mode: Mode,
    /// Block dimensions; `None` means a single block.
    pub blocks: Option<Vec<usize>>,
    pub initial_states: InitialStates,
    pub max_rounds: u64,
    pub seed: u64,
    pub trace: TraceOptions,
    pub execution: Execution,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            mode: Mode::Dkm,
            blocks: None,
            initial_states: InitialStates::default(),
            max_rounds: 1000,
            seed: 0,
            trace: TraceOptions::default(),
            execution: Execution::default(),
        }
    }
}

impl RunSettings {
    fn partition(&self, dim: usize) -> Result<BlockPartition> {
        match &self.blocks {
            Some(dims) => {
                let p = BlockPartition::new(dims.clone())?;
                ensure_len("block partition", dim, p.dim())?;
                Ok(p)
            }
            None => BlockPartition::single(dim),
        }
    }

    fn into_config(
        self,
        family: OperatorFamily,
        schedule: GraphSchedule,
        stepsize: StepsizeSchedule,
        reference: Option<&Reference>,
    ) -> RunConfig {
        let mut trace = self.trace;
        if trace.reference.is_none() {
            trace.reference = reference.filter(|r| r.unique).map(|r| r.point.clone());
        }
        RunConfig {
            family,
            schedule,
            stepsize,
            mode: self.mode,
            initial_states: self.initial_states,
            max_rounds: self.max_rounds,
            seed: self.seed,
            trace,
            execution: self.execution,
            skip_validation: false,
        }
    }
}

/// Gradient-step family `F_i = Id − τ∇f_i`; requires `τ ∈ (0, 2/max_i L_i)`.
///
/// One D-KM round on this family is the descent update
/// `x_i ← x̂_i − τα_k ∇f_i(x̂_i)`.
pub fn build_dgd_scenario(
    name: impl Into<String>,
    specs: Vec<SmoothConvex>,
    tau: f64,
    schedule: GraphSchedule,
    stepsize: StepsizeSchedule,
    settings: RunSettings,
) -> Result<Scenario> {
    let first = specs.first().ok_or(Error::Empty("objective list"))?;
    let dim = first.dim();
    let l_max = specs.iter().map(SmoothConvex::lipschitz).fold(0.0, f64::max);
    if !(tau > 0.0 && tau < 2.0 / l_max) {
        return Err(Error::invalid(format!(
            "tau = {tau} outside the open interval (0, {}) set by the largest Lipschitz constant",
            2.0 / l_max
        )));
    }
    let partition = settings.partition(dim)?;
    let locals = specs
        .iter()
        .map(|f| LocalOperator::gradient_step(f.clone(), tau, partition.clone()))
        .collect::<Result<Vec<_>>>()?;
    let family = OperatorFamily::new(locals)?;

    let all_quadratic = specs.iter().all(|f| matches!(f.kind(), SmoothKind::Quadratic { .. }));
    let reference = if all_quadratic {
        let mut normal = Matrix::scaled_identity(dim, 0.0);
        let mut rhs = vec![0.0; dim];
        for f in &specs {
            if let SmoothKind::Quadratic { a, b } = f.kind() {
                normal = normal.add(&a.gram())?;
                for (r, v) in rhs.iter_mut().zip(a.transpose_mul_vec(b)) {
                    *r += v;
                }
            }
        }
        let sol = oracle_linear_solve(&normal, &rhs)?;
        Reference {
            point: sol.x,
            provenance: "normal equations (Σ AᵢᵀAᵢ) x = Σ Aᵢᵀbᵢ, dense SVD solve".into(),
            unique: sol.unique,
        }
    } else {
        Reference {
            point: oracle_smooth_minimizer(&specs, 1e-13)?,
            provenance: "centralized gradient descent on Σ fᵢ with step 1/Σ Lᵢ".into(),
            unique: true,
        }
    };

    let config = settings.into_config(family, schedule, stepsize, Some(&reference));
    Ok(Scenario {
        name: name.into(),
        config,
        reference: Some(reference),
        expected_properties: vec![
            "agents reach consensus".into(),
            "mean converges to a minimizer of Σ fᵢ".into(),
        ],
    })
}

/// Projection family `F_i = P_{X_i}` over bounded sets. Block-coordinate runs
/// require uniform block probabilities.
pub fn build_distance_scenario(
    name: impl Into<String>,
    sets: Vec<ConvexSet>,
    schedule: GraphSchedule,
    stepsize: StepsizeSchedule,
    settings: RunSettings,
) -> Result<Scenario> {
    let dim = sets.first().ok_or(Error::Empty("set list"))?.dim();
    if let Mode::Dbkm(selector) = &settings.mode {
        if !selector.is_uniform() {
            return Err(Error::invalid(
                "block-coordinate distance scenarios need uniform block probabilities p_l = 1/m \
                 (boundedness is only guaranteed in that case)",
            ));
        }
    }
    let partition = settings.partition(dim)?;
    let locals = sets
        .iter()
        .map(|s| LocalOperator::projection(s.clone(), partition.clone()))
        .collect::<Result<Vec<_>>>()?;
    let family = OperatorFamily::new(locals)?;
    let reference = Reference {
        point: oracle_distance_minimizer(&sets, 1e-13)?,
        provenance: "fixed-point iteration x ← (1/N) Σ P_{X_i}(x), i.e. unit-step gradient descent on (1/2N) Σ d²_{X_i}".into(),
        unique: true,
    };
    let config = settings.into_config(family, schedule, stepsize, Some(&reference));
    Ok(Scenario {
        name: name.into(),
        config,
        reference: Some(reference),
        expected_properties: vec![
            "agents reach consensus".into(),
            "mean converges to a minimizer of Σ d²_{X_i}".into(),
        ],
    })
}

/// `sin(iπ/2)` evaluated exactly.
fn sin_quarter_turns(i: usize) -> f64 {
    [0.0, 1.0, 0.0, -1.0][i % 4]
}

/// The boxes `X_i = [√i, √(i+1)] × [s_i, 1 + s_i] × [√i − √N + 2, √i]` with
/// `s_i = sin(iπ/2)`, for `i = 1..=N`.
pub fn paper_boxes(count: usize) -> Vec<ConvexSet> {
    let root_n = (count as f64).sqrt();
    (1..=count)
        .map(|i| {
            let ri = (i as f64).sqrt();
            let s = sin_quarter_turns(i);
            let lower = vec![ri, s, ri - root_n + 2.0];
            let upper = vec![((i + 1) as f64).sqrt(), 1.0 + s, ri];
            ConvexSet::new_box(lower, upper).expect("box bounds are ordered")
        })
        .collect()
}

/// Affine family `F_i(x) = (I − θR_i)x + θr_i`. `theta` defaults to
/// `2/max_i λ_max(R_i)`. Only D-KM and centralized runs are accepted.
pub fn build_linear_scenario(
    name: impl Into<String>,
    matrices: Vec<Matrix>,
    vectors: Vec<Vec<f64>>,
    theta: Option<f64>,
    schedule: GraphSchedule,
    stepsize: StepsizeSchedule,
    settings: RunSettings,
) -> Result<Scenario> {
    let first = matrices.first().ok_or(Error::Empty("matrix list"))?;
    ensure_len("linear right-hand sides", matrices.len(), vectors.len())?;
    if matches!(settings.mode, Mode::Dbkm(_)) {
        return Err(Error::invalid(
            "linear-equation scenarios support D-KM only (boundedness is not established for D-BKM)",
        ));
    }
    let dim = first.rows();
    let lambda_max = matrices
        .iter()
        .map(|m| m.symmetric_eigen_range().1)
        .fold(0.0, f64::max);
    let theta = match theta {
        Some(t) => t,
        None if lambda_max > 0.0 => 2.0 / lambda_max,
        None => 1.0,
    };
    let partition = settings.partition(dim)?;
    let locals = matrices
        .iter()
        .zip(&vectors)
        .map(|(m, r)| LocalOperator::affine(m.clone(), r.clone(), theta, partition.clone()))
        .collect::<Result<Vec<_>>>()?;
    let family = OperatorFamily::new(locals)?;

    let count = matrices.len() as f64;
    let mut avg = Matrix::scaled_identity(dim, 0.0);
    for m in &matrices {
        avg = avg.add(m)?;
    }
    let avg = avg.scale(1.0 / count);
    let mut rhs = vec![0.0; dim];
    for r in &vectors {
        for (a, v) in rhs.iter_mut().zip(r) {
            *a += v;
        }
    }
    rhs.iter_mut().for_each(|a| *a /= count);
    let sol = oracle_linear_solve(&avg, &rhs)?;
    let consistent = sol.residual <= 1e-8 * (1.0 + crate::linalg::norm(&rhs));
    let reference = Reference {
        point: sol.x,
        provenance: format!(
            "dense SVD solve of R x = r with R = (1/N) Σ Rᵢ, r = (1/N) Σ rᵢ (residual {:.3e}{})",
            sol.residual,
            if sol.unique { "" } else { ", minimum-norm of a non-unique family" }
        ),
        unique: sol.unique && consistent,
    };
    let config = settings.into_config(family, schedule, stepsize, Some(&reference));
    Ok(Scenario {
        name: name.into(),
        config,
        reference: Some(reference),
        expected_properties: vec!["agents converge to the solution of R x = r".into()],
    })
}

/// Seeded instance: `R_i = G_iᵀG_i + ridge·I` with Gaussian `G_i`, Gaussian `r_i`.
pub fn random_linear_instance(agents: usize, dim: usize, ridge: f64, seed: u64) -> (Vec<Matrix>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut matrices = Vec::with_capacity(agents);
    let mut vectors = Vec::with_capacity(agents);
    for _ in 0..agents {
        let g: Vec<f64> = (0..dim * dim).map(|_| gauss()).collect();
        let g = Matrix::new(dim, dim, g).expect("finite gaussian entries");
        matrices.push(g.gram().add(&Matrix::scaled_identity(dim, ridge)).expect("same shape"));
        vectors.push((0..dim).map(|_| gauss()).collect());
    }
    (matrices, vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    /// `‖R x − r‖`
    pub residual: f64,
    pub unique: bool,
}

/// Minimum-norm least-squares solution of `R x = r` via a dense SVD.
pub fn oracle_linear_solve(matrix: &Matrix, rhs: &[f64]) -> Result<LinearSolution> {
    if !matrix.is_square() {
        return Err(Error::invalid("linear oracle needs a square matrix"));
    }
    ensure_len("linear oracle rhs", matrix.rows(), rhs.len())?;
    let m = matrix.to_nalgebra();
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = sigma_max * 1e-12 * matrix.rows() as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let b = DVector::from_column_slice(rhs);
    let x = svd
        .solve(&b, cutoff)
        .map_err(|e| Error::invalid(format!("SVD solve failed: {e}")))?;
    let residual = (&m * &x - &b).norm();
    Ok(LinearSolution {
        x: x.iter().copied().collect(),
        residual,
        unique: rank == matrix.rows(),
    })
}

/// Iterates `x ← (1/N) Σ P_{X_i}(x)` from the mean of set anchors until
/// successive iterates differ by less than `tol`.
pub fn oracle_distance_minimizer(sets: &[ConvexSet], tol: f64) -> Result<Vec<f64>> {
    let first = sets.first().ok_or(Error::Empty("set list"))?;
    let dim = first.dim();
    for s in sets {
        ensure_len("set dimension", dim, s.dim())?;
    }
    let count = sets.len() as f64;
    let mut x = vec![0.0; dim];
    for s in sets {
        for (a, v) in x.iter_mut().zip(s.anchor()) {
            *a += v / count;
        }
    }
    iterate_to_fixed_point(x, tol, |x| {
        let mut next = vec![0.0; dim];
        for s in sets {
            for (a, v) in next.iter_mut().zip(s.project(x)) {
                *a += v;
            }
        }
        next.iter_mut().for_each(|a| *a /= count);
        next
    })
}

/// Gradient descent on `Σ f_i` with step `1/Σ L_i`, from the origin.
pub fn oracle_smooth_minimizer(specs: &[SmoothConvex], tol: f64) -> Result<Vec<f64>> {
    let first = specs.first().ok_or(Error::Empty("objective list"))?;
    let dim = first.dim();
    let step = 1.0 / specs.iter().map(SmoothConvex::lipschitz).sum::<f64>();
    iterate_to_fixed_point(vec![0.0; dim], tol, |x| {
        let mut grad = vec![0.0; dim];
        for f in specs {
            for (g, v) in grad.iter_mut().zip(f.gradient(x)) {
                *g += v;
            }
        }
        x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect()
    })
}

fn iterate_to_fixed_point<F>(mut x: Vec<f64>, tol: f64, map: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut last_step = f64::INFINITY;
    for _ in 0..ORACLE_MAX_ITERATIONS {
        let next = map(&x);
        last_step = dist(&next, &x);
        x = next;
        if last_step < tol {
            return Ok(x);
        }
    }
    Err(Error::OracleStalled {
        iterations: ORACLE_MAX_ITERATIONS,
        last_step,
    })
}

/// Six agents, boxes in ℝ³, two alternating graphs, D-KM.
pub fn paper_dkm_6(seed: u64, max_rounds: u64) -> Result<Scenario> {
    build_distance_scenario(
        "paper-dkm-6",
        paper_boxes(6),
        ring_schedule(6, 2, 0.5)?,
        StepsizeSchedule::standard(0.7)?,
        RunSettings {
            max_rounds,
            seed,
            ..RunSettings::default()
        },
    )
}

/// A hundred agents, window 10, three unit blocks drawn uniformly, D-BKM.
pub fn paper_dbkm_100(seed: u64, max_rounds: u64) -> Result<Scenario> {
    build_distance_scenario(
        "paper-dbkm-100",
        paper_boxes(100),
        ring_schedule(100, 10, 0.5)?,
        StepsizeSchedule::standard(0.7)?,
        RunSettings {
            mode: Mode::Dbkm(crate::engine::BlockSelector::uniform(3)?),
            blocks: Some(vec![1, 1, 1]),
            max_rounds,
            seed,
            ..RunSettings::default()
        },
    )
}
