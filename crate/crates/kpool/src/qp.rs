//! Weight estimation as a convex quadratic program on the simplex.
//!
//! For every strategy with free weights the empirical kernel score of the
//! pooled forecast is, up to a constant in `w`, the quadratic
//! `½ wᵀA w + cᵀw` with
//!
//! * `A[j,l] = Σ_i α_i E k(X_j,i, X_l,i)` over component pairs, and
//! * `c[j]  = −Σ_i α_i E k(X_j,i, y_i)`,
//!
//! where the expectations are weighted sums over atoms (per model for the
//! discrete pool, per flattened member for the point pool, per sorted
//! member for the ordered pool). Minimising over the simplex yields the
//! optimal pooling weights.
//!
//! The solver is accelerated projected gradient with exact simplex
//! projection, a step of `1/L` from a power-iteration estimate of the
//! largest eigenvalue, monotone restarts, and a KKT stopping rule. Every
//! iterate is feasible, there are no factorisations, and identical inputs
//! give bit-identical outputs.

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, embed_against_point, eval_kernel, eval_unchecked};
use crate::kernels::{DiscreteDistribution, KernelSpec, Point};
use crate::pooling::{combine, IndexSpace, Panel, Strategy, WeightVector};
use crate::scalar::{num, pairwise_sum_by, Scalar};
use crate::scoring::{empirical_score, AlphaWeights};
use rayon::prelude::*;

/// The assembled quadratic `½ wᵀA w + cᵀw` with its simplex index space.
#[derive(Debug, Clone)]
pub struct QpProblem<S: Scalar> {
    a: Vec<S>,
    c: Vec<S>,
    k: usize,
    index_space: IndexSpace,
}

impl<S: Scalar> QpProblem<S> {
    /// `a` is the row-major `k × k` matrix; symmetry is validated here,
    /// positive semidefiniteness when the problem is solved.
    pub fn new(a: Vec<S>, c: Vec<S>, index_space: IndexSpace) -> Result<Self> {
        let k = index_space.len();
        if k == 0 {
            return Err(Error::EmptyInput("qp dimensions"));
        }
        if a.len() != k * k {
            return Err(Error::LengthMismatch {
                what: "qp matrix",
                expected: k * k,
                got: a.len(),
            });
        }
        if c.len() != k {
            return Err(Error::LengthMismatch {
                what: "qp vector",
                expected: k,
                got: c.len(),
            });
        }
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("qp coefficients".into()));
        }
        let tol = S::symmetry_tol() * scale_of(&a);
        for i in 0..k {
            for j in (i + 1)..k {
                if (a[i * k + j] - a[j * k + i]).abs() > tol {
                    return Err(Error::InternalConsistency(format!(
                        "qp matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(QpProblem {
            a,
            c,
            k,
            index_space,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &[S] {
        &self.a
    }

    pub fn vector(&self) -> &[S] {
        &self.c
    }

    pub fn entry(&self, i: usize, j: usize) -> S {
        self.a[i * self.k + j]
    }

    pub fn index_space(&self) -> IndexSpace {
        self.index_space
    }

    /// `½ wᵀA w + cᵀw` for the original (un-ridged) problem.
    pub fn objective(&self, w: &[S]) -> S {
        objective(&self.a, &self.c, self.k, w)
    }
}

fn scale_of<S: Scalar>(a: &[S]) -> S {
    a.iter()
        .fold(S::zero(), |acc, v| acc.max(v.abs()))
        .max(S::one())
}

fn objective<S: Scalar>(a: &[S], c: &[S], k: usize, w: &[S]) -> S {
    let aw = matvec(a, k, w);
    let quad = pairwise_sum_by(k, &|i| w[i] * aw[i]);
    let lin = pairwise_sum_by(k, &|i| c[i] * w[i]);
    num::<S>(0.5) * quad + lin
}

fn matvec<S: Scalar>(a: &[S], k: usize, v: &[S]) -> Vec<S> {
    (0..k)
        .map(|i| pairwise_sum_by(k, &|j| a[i * k + j] * v[j]))
        .collect()
}

/// Solver parameters; the defaults are deliberate and rarely need tuning.
#[derive(Debug, Clone)]
pub struct SolverConfig<S: Scalar> {
    /// Stop once the KKT residual drops below this.
    pub kkt_tol: S,
    /// Iteration cap; exceeding it returns `converged = false`.
    pub max_iter: usize,
    /// Relative Tikhonov term `ridge · trace(A)/K` added to the diagonal;
    /// biases flat directions toward the minimal-norm (uniform-like)
    /// solution so degenerate problems have a reproducible answer.
    pub ridge: S,
}

impl<S: Scalar> Default for SolverConfig<S> {
    fn default() -> Self {
        SolverConfig {
            kkt_tol: num(1e-8),
            max_iter: 50_000,
            ridge: num(1e-10),
        }
    }
}

impl<S: Scalar> SolverConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.kkt_tol.is_nan() || self.kkt_tol <= S::zero() {
            return Err(Error::InvalidParameter {
                name: "kkt_tol",
                reason: "must be strictly positive".into(),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter",
                reason: "must be at least 1".into(),
            });
        }
        if self.ridge.is_nan() || self.ridge < S::zero() {
            return Err(Error::InvalidParameter {
                name: "ridge",
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }

    pub fn with_kkt_tol(mut self, tol: S) -> Self {
        self.kkt_tol = tol;
        self
    }
}

/// Result of a solve: simplex weights plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<S: Scalar> {
    pub weights: WeightVector<S>,
    /// `½ wᵀA w + cᵀw` of the original problem at `weights`. For the
    /// equal-weight strategy, which solves nothing, this is the training
    /// empirical score instead.
    pub objective: S,
    pub iterations: usize,
    pub kkt_residual: S,
    pub converged: bool,
}

/// Objective values sampled along the solve, for diagnostics.
pub type ObjectiveTrace<S> = Vec<(usize, S)>;

/// Euclidean projection onto the probability simplex by sort and
/// threshold: with `u` the coordinates of `v` sorted descending and
/// `ρ = max{ j : u_j + (1 − Σ_{r≤j} u_r)/j > 0 }`, the projection is
/// `w_i = max(v_i − θ, 0)` with `θ = (Σ_{r≤ρ} u_r − 1)/ρ`.
pub fn project_simplex<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("projection input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let mut u: Vec<S> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cum = S::zero();
    let mut theta = S::zero();
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let jn = num::<S>((j + 1) as f64);
        let cand = (cum - S::one()) / jn;
        if uj - cand > S::zero() {
            theta = cand;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(S::zero())).collect())
}

/// Largest-eigenvalue estimate by power iteration with a fixed
/// deterministic start vector.
fn power_iteration<S: Scalar>(a: &[S], k: usize, iters: usize) -> S {
    let mut v: Vec<S> = (0..k)
        .map(|i| S::one() + num::<S>(i as f64) / num::<S>(k as f64))
        .collect();
    let nrm = pairwise_sum_by(k, &|i| v[i] * v[i]).sqrt();
    for x in v.iter_mut() {
        *x /= nrm;
    }
    for _ in 0..iters {
        let u = matvec(a, k, &v);
        let nu = pairwise_sum_by(k, &|i| u[i] * u[i]).sqrt();
        if nu == S::zero() {
            return S::zero();
        }
        v = u.iter().map(|&x| x / nu).collect();
    }
    let av = matvec(a, k, &v);
    pairwise_sum_by(k, &|i| v[i] * av[i])
}

/// KKT residual on the simplex: with `g = Aw + c` and `μ = min_l g_l`,
/// the largest `g_j − μ` over the support `{j : w_j > 1e-10}`. Zero at an
/// exact minimiser.
fn kkt_residual<S: Scalar>(g: &[S], w: &[S], active_tol: S) -> S {
    let mu = g.iter().fold(S::infinity(), |acc, &x| acc.min(x));
    let mut res = S::zero();
    for (gi, wi) in g.iter().zip(w.iter()) {
        if *wi > active_tol {
            res = res.max(*gi - mu);
        }
    }
    res
}

fn active_tol<S: Scalar>() -> S {
    // Support threshold for the KKT certificate.
    num::<S>(1e-10).max(S::epsilon() * num::<S>(128.0))
}

/// Minimise `½ wᵀA w + cᵀw` over the simplex; see the module docs for the
/// algorithm. Returns the trace of original-problem objectives alongside.
pub fn solve_traced<S: Scalar>(
    problem: &QpProblem<S>,
    config: &SolverConfig<S>,
) -> Result<(Solution<S>, ObjectiveTrace<S>)> {
    config.validate()?;
    let k = problem.dim();
    let trace_a = pairwise_sum_by(k, &|i| problem.entry(i, i));
    check_psd(problem, trace_a)?;

    // Ridge-regularised copy actually iterated on.
    let mut a_r = problem.a.clone();
    let ridge_term = config.ridge * trace_a / num::<S>(k as f64);
    for i in 0..k {
        a_r[i * k + i] += ridge_term;
    }

    let lam = power_iteration(&a_r, k, 100);
    let mut step_l = if lam > S::zero() {
        lam * num::<S>(1.01)
    } else {
        S::one()
    };

    let obj_r = |w: &[S]| objective(&a_r, &problem.c, k, w);
    // Objective comparisons near the optimum sit in rounding noise; steps
    // within this band are still accepted so progress can continue below
    // the resolution of the objective value itself.
    let slack = |obj: S| (obj.abs() + S::one()) * S::epsilon() * num::<S>(16.0);
    let uniform = vec![S::one() / num::<S>(k as f64); k];
    let mut w = uniform;
    let mut z = w.clone();
    let mut t = S::one();
    let mut obj_w = obj_r(&w);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut residual;
    let atol = active_tol::<S>();

    loop {
        let g_w = {
            let mut g = matvec(&a_r, k, &w);
            for (gi, ci) in g.iter_mut().zip(problem.c.iter()) {
                *gi += *ci;
            }
            g
        };
        residual = kkt_residual(&g_w, &w, atol);
        if iterations % 50 == 0 {
            trace.push((iterations, problem.objective(&w)));
        }
        if residual <= config.kkt_tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }
        iterations += 1;

        let g_z = {
            let mut g = matvec(&a_r, k, &z);
            for (gi, ci) in g.iter_mut().zip(problem.c.iter()) {
                *gi += *ci;
            }
            g
        };
        let cand: Vec<S> = z
            .iter()
            .zip(g_z.iter())
            .map(|(&zi, &gi)| zi - gi / step_l)
            .collect();
        let mut w_next = project_simplex(&cand)?;
        let mut obj_next = obj_r(&w_next);
        let mut plain = z == w;
        if obj_next > obj_w + slack(obj_w) {
            // Monotone restart: drop momentum, take a plain projected
            // gradient step from the best iterate. A genuine increase on
            // the plain step means the curvature estimate was too small;
            // halving the step (doubling L) recovers descent.
            t = S::one();
            plain = true;
            let mut tries = 0;
            loop {
                let cand: Vec<S> = w
                    .iter()
                    .zip(g_w.iter())
                    .map(|(&wi, &gi)| wi - gi / step_l)
                    .collect();
                w_next = project_simplex(&cand)?;
                obj_next = obj_r(&w_next);
                if obj_next <= obj_w + slack(obj_w) || w_next == w || tries >= 64 {
                    break;
                }
                step_l *= num::<S>(2.0);
                tries += 1;
            }
            if obj_next > obj_w + slack(obj_w) && w_next != w {
                // Step size exhausted without descent; keep the incumbent.
                w_next = w.clone();
            }
        }
        if w_next == w {
            if plain {
                // Exact fixed point of the projected gradient map.
                break;
            }
            // Momentum returned to the incumbent; retry without it.
            z = w.clone();
            t = S::one();
            continue;
        }
        let t_next = (S::one() + (S::one() + num::<S>(4.0) * t * t).sqrt()) / num::<S>(2.0);
        let momentum = (t - S::one()) / t_next;
        z = w_next
            .iter()
            .zip(w.iter())
            .map(|(&wn, &wp)| wn + momentum * (wn - wp))
            .collect();
        t = t_next;
        w = w_next;
        obj_w = obj_next;
    }

    trace.push((iterations, problem.objective(&w)));
    let weights = WeightVector::new(w.clone(), problem.index_space())?;
    Ok((
        Solution {
            weights,
            objective: problem.objective(&w),
            iterations,
            kkt_residual: residual,
            converged,
        },
        trace,
    ))
}

/// [`solve_traced`] without the trace.
pub fn solve<S: Scalar>(problem: &QpProblem<S>, config: &SolverConfig<S>) -> Result<Solution<S>> {
    solve_traced(problem, config).map(|(s, _)| s)
}

fn check_psd<S: Scalar>(problem: &QpProblem<S>, trace_a: S) -> Result<S> {
    let k = problem.dim();
    let tol = S::psd_rel_tol() * trace_a.abs() / num::<S>(k as f64);
    // A PSD matrix cannot have a negative diagonal entry or negative trace.
    for i in 0..k {
        if problem.entry(i, i) < -tol {
            return Err(Error::NotPsd {
                min_eig: problem.entry(i, i).to_f64().unwrap_or(f64::NAN),
                tol: tol.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let lam_dom = power_iteration(&problem.a, k, 100);
    if lam_dom < -tol {
        return Err(Error::NotPsd {
            min_eig: lam_dom.to_f64().unwrap_or(f64::NAN),
            tol: tol.to_f64().unwrap_or(f64::NAN),
        });
    }
    // Smallest eigenvalue via the shifted complement s·I − A.
    let s = lam_dom.max(S::zero()) * num::<S>(1.001) + trace_a.abs() * num::<S>(1e-12);
    let mut b = vec![S::zero(); k * k];
    for i in 0..k {
        for j in 0..k {
            b[i * k + j] = -problem.entry(i, j);
        }
        b[i * k + i] += s;
    }
    let mu = power_iteration(&b, k, 100);
    let lam_min = s - mu;
    if lam_min < -tol {
        return Err(Error::NotPsd {
            min_eig: lam_min.to_f64().unwrap_or(f64::NAN),
            tol: tol.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(lam_min)
}

/// Per-case atom layout the QP coefficients are summed over.
enum CaseLayout<S: Scalar> {
    /// Per-model distributions (discrete pool).
    Models(Vec<DiscreteDistribution<S>>),
    /// Flattened members, either in canonical or sorted order.
    Flat(Vec<Point<S>>),
}

/// Assemble `(A, c)` for a strategy over a panel.
///
/// The upper triangle is computed (in parallel over entries, each entry a
/// fixed-order pairwise sum over cases) and mirrored, so `A` is exactly
/// symmetric by construction.
pub fn assemble<S: Scalar>(
    spec: &KernelSpec<S>,
    panel: &Panel<S>,
    strategy: Strategy,
    alphas: &AlphaWeights<S>,
) -> Result<QpProblem<S>> {
    if strategy == Strategy::EqualLp {
        return Err(Error::Config(
            "the equal-weight pool has fixed weights; nothing to estimate".into(),
        ));
    }
    if panel.is_empty() {
        return Err(Error::EmptyInput("panel"));
    }
    if alphas.len() != panel.len() {
        return Err(Error::LengthMismatch {
            what: "alpha weights vs panel cases",
            expected: panel.len(),
            got: alphas.len(),
        });
    }
    let index_space = strategy.index_space(panel.member_counts());
    let k = index_space.len();
    let n = panel.len();
    let a_vals = alphas.values();

    let layouts: Vec<CaseLayout<S>> = panel
        .cases()
        .iter()
        .map(|case| match strategy {
            Strategy::DiscreteLp => Ok(CaseLayout::Models(case.components().to_vec())),
            Strategy::PointLp => Ok(CaseLayout::Flat(
                case.components()
                    .iter()
                    .flat_map(|comp| comp.atoms().iter().cloned())
                    .collect(),
            )),
            Strategy::OrderedLp => {
                if case.dim() != 1 {
                    return Err(Error::OrderedRequiresUnivariate(case.dim()));
                }
                let mut flat = Vec::new();
                for comp in case.components() {
                    let mut sorted = comp.atoms().to_vec();
                    sorted.sort_by(|a, b| a.value().partial_cmp(&b.value()).expect("finite atoms"));
                    flat.extend(sorted);
                }
                Ok(CaseLayout::Flat(flat))
            }
            Strategy::EqualLp => unreachable!(),
        })
        .collect::<Result<Vec<_>>>()?;

    // A[j,l] = Σ_i α_i ⟨μ_{j,i}, μ_{l,i}⟩ over the upper triangle.
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|j| (j..k).map(move |l| (j, l))).collect();
    let upper: Vec<S> = pairs
        .par_iter()
        .map(|&(j, l)| {
            pairwise_sum_by(n, &|i| {
                let contrib = match &layouts[i] {
                    CaseLayout::Models(comps) => {
                        cross_gram(spec, &comps[j], &comps[l]).expect("dims validated by panel")
                    }
                    CaseLayout::Flat(atoms) => eval_unchecked(spec, &atoms[j], &atoms[l]),
                };
                a_vals[i] * contrib
            })
        })
        .collect();
    let mut a = vec![S::zero(); k * k];
    for (&(j, l), &v) in pairs.iter().zip(upper.iter()) {
        a[j * k + l] = v;
        a[l * k + j] = v;
    }

    let c: Vec<S> = (0..k)
        .into_par_iter()
        .map(|j| {
            -pairwise_sum_by(n, &|i| {
                let y = panel.cases()[i].observation();
                let contrib = match &layouts[i] {
                    CaseLayout::Models(comps) => {
                        embed_against_point(spec, &comps[j], y).expect("dims validated by panel")
                    }
                    CaseLayout::Flat(atoms) => eval_unchecked(spec, &atoms[j], y),
                };
                a_vals[i] * contrib
            })
        })
        .collect();

    QpProblem::new(a, c, index_space)
}

/// Assemble and solve in one call.
///
/// The equal-weight strategy skips the QP: it returns the fixed uniform
/// model weights with the training empirical score as the objective.
pub fn fit_traced<S: Scalar>(
    spec: &KernelSpec<S>,
    panel: &Panel<S>,
    strategy: Strategy,
    alphas: &AlphaWeights<S>,
    config: &SolverConfig<S>,
) -> Result<(Solution<S>, ObjectiveTrace<S>)> {
    if strategy == Strategy::EqualLp {
        let weights = WeightVector::uniform(IndexSpace::PerModel(panel.num_models()));
        let combined: Vec<DiscreteDistribution<S>> = panel
            .cases()
            .iter()
            .map(|case| combine(case, strategy, &weights))
            .collect::<Result<Vec<_>>>()?;
        let obs = panel.observations();
        let objective = empirical_score(spec, &combined, &obs, alphas)?;
        let solution = Solution {
            weights,
            objective,
            iterations: 0,
            kkt_residual: S::zero(),
            converged: true,
        };
        return Ok((solution, vec![(0, objective)]));
    }
    let problem = assemble(spec, panel, strategy, alphas)?;
    solve_traced(&problem, config)
}

/// [`fit_traced`] without the trace.
pub fn fit<S: Scalar>(
    spec: &KernelSpec<S>,
    panel: &Panel<S>,
    strategy: Strategy,
    alphas: &AlphaWeights<S>,
    config: &SolverConfig<S>,
) -> Result<Solution<S>> {
    fit_traced(spec, panel, strategy, alphas, config).map(|(s, _)| s)
}

/// The constant separating the QP objective from the empirical score:
/// `Σ_i α_i ½ k(y_i, y_i)`.
pub fn score_offset<S: Scalar>(
    spec: &KernelSpec<S>,
    panel: &Panel<S>,
    alphas: &AlphaWeights<S>,
) -> Result<S> {
    let half = num::<S>(0.5);
    Ok(pairwise_sum_by(panel.len(), &|i| {
        let y = panel.cases()[i].observation();
        alphas.values()[i] * half * eval_kernel(spec, y, y).expect("observation dims consistent")
    }))
}
