//! Primal-dual interior-point method on a rescaled copy of the program.

use serde::{Deserialize, Serialize};

use super::newton::{self, Structure};
use super::program::ConvexProgram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonMethod {
    /// Block elimination exploiting small variable groups, with dense fallback.
    Structured,
    /// Dense LU of the full KKT matrix.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative surrogate duality gap at termination.
    pub tol: f64,
    /// Primal and dual residual at termination, in scaled units.
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Barrier parameter decrease factor.
    pub mu: f64,
    pub newton: NewtonMethod,
    /// Print one line per Newton step to stderr.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 200,
            mu: 10.0,
            newton: NewtonMethod::Structured,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStatus {
    pub converged: bool,
    pub iterations: usize,
    /// Surrogate duality gap, relative to `1 + |objective|` in scaled units.
    pub gap: f64,
    /// Largest scaled primal violation (positive inequality value or equality residual).
    pub infeasibility: f64,
    pub dual_residual: f64,
    /// The start point was returned because the final iterate was not better.
    pub kept_start: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Multipliers of the quadratic rows followed by the exponential rows.
    pub ineq_duals: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("start point is outside the domain of a constraint")]
    OutsideDomain,
    #[error("iteration limit reached after {} iterations (gap {:e}, primal {:e}, dual {:e})",
        .partial.status.iterations, .partial.status.gap, .partial.status.infeasibility, .partial.status.dual_residual)]
    IterationLimit { partial: Box<Solution> },
    #[error("numerical failure after {} iterations: {reason} (gap {:e}, primal {:e}, dual {:e})",
        .partial.status.iterations, .partial.status.gap, .partial.status.infeasibility, .partial.status.dual_residual)]
    Numerical { reason: String, partial: Box<Solution> },
}

impl SolverError {
    /// Last strictly feasible iterate, when the solver got that far.
    pub fn partial(&self) -> Option<&Solution> {
        match self {
            SolverError::IterationLimit { partial } | SolverError::Numerical { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// An inequality row in scaled variables.
#[derive(Clone, Debug)]
pub(super) struct Row {
    /// Sorted, distinct variable indices.
    pub support: Vec<usize>,
    pub kind: RowKind,
}

#[derive(Clone, Debug)]
pub(super) enum RowKind {
    /// `Σ (q·x)² + l·x + c`; positions index into `support`.
    Quad {
        squares: Vec<Vec<(usize, f64)>>,
        lin: Vec<f64>,
        c: f64,
    },
    /// `a·(b·x_e − ln(d·x_u))`, the logarithmic form of `exp(b·x_e) ≤ d·x_u`;
    /// `e`, `u` are positions into `support`.
    LogRatio { e: usize, u: usize, a: f64, b: f64, d: f64 },
}

impl Row {
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            RowKind::Quad { squares, lin, c } => {
                let sq: f64 = squares
                    .iter()
                    .map(|q| q.iter().map(|&(p, v)| v * x[self.support[p]]).sum::<f64>().powi(2))
                    .sum();
                let l: f64 = lin.iter().zip(&self.support).map(|(v, &i)| v * x[i]).sum();
                sq + l + c
            }
            RowKind::LogRatio { e, u, a, b, d } => {
                let xu = d * x[self.support[*u]];
                if xu > 0.0 {
                    a * (b * x[self.support[*e]] - xu.ln())
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn grad(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.kind {
            RowKind::Quad { squares, lin, .. } => {
                out.extend_from_slice(lin);
                for q in squares {
                    let qx: f64 = q.iter().map(|&(p, v)| v * x[self.support[p]]).sum();
                    for &(p, v) in q {
                        out[p] += 2.0 * qx * v;
                    }
                }
            }
            RowKind::LogRatio { e, u, a, b, .. } => {
                out.resize(self.support.len(), 0.0);
                out[*e] += a * b;
                out[*u] -= a / x[self.support[*u]];
            }
        }
    }

    /// Calls `f(p, q, v)` for each entry of the Hessian (positions into `support`);
    /// entries may repeat and must be summed.
    pub fn hess_for_each(&self, x: &[f64], mut f: impl FnMut(usize, usize, f64)) {
        match &self.kind {
            RowKind::Quad { squares, .. } => {
                for q in squares {
                    for &(p, vp) in q {
                        for &(r, vr) in q {
                            f(p, r, 2.0 * vp * vr);
                        }
                    }
                }
            }
            RowKind::LogRatio { u, a, .. } => f(*u, *u, a / x[self.support[*u]].powi(2)),
        }
    }

    fn scale_by(&mut self, k: f64) {
        match &mut self.kind {
            RowKind::Quad { squares, lin, c } => {
                let r = k.sqrt();
                squares.iter_mut().flatten().for_each(|(_, v)| *v *= r);
                lin.iter_mut().for_each(|v| *v *= k);
                *c *= k;
            }
            RowKind::LogRatio { a, .. } => *a *= k,
        }
    }

    /// Diagonal-only quadratic rows with wide support.
    pub fn is_global(&self) -> bool {
        match &self.kind {
            RowKind::Quad { squares, .. } => {
                self.support.len() >= newton::GLOBAL_MIN_SUPPORT
                    && !squares.is_empty()
                    && squares.iter().all(|q| q.len() == 1)
            }
            RowKind::LogRatio { .. } => false,
        }
    }
}

/// Sparse equality row in scaled variables.
#[derive(Clone, Debug)]
pub(super) struct EqRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl EqRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    pub fn axpy(&self, alpha: f64, y: &mut [f64]) {
        for (&i, v) in self.idx.iter().zip(&self.val) {
            y[i] += alpha * v;
        }
    }
}

fn local_support<'a>(vars: impl Iterator<Item = &'a usize>) -> Vec<usize> {
    let mut s: Vec<usize> = vars.copied().collect();
    s.sort_unstable();
    s.dedup();
    s
}

fn pos(support: &[usize], i: usize) -> usize {
    support.binary_search(&i).expect("index in support")
}

struct Scaled {
    n: usize,
    s: Vec<f64>,
    c: Vec<f64>,
    obj_scale: f64,
    rows: Vec<Row>,
    row_scale: Vec<f64>,
    eqs: Vec<EqRow>,
    b: Vec<f64>,
    eq_scale: Vec<f64>,
}

impl Scaled {
    fn new(p: &ConvexProgram) -> Self {
        let n = p.num_vars();
        let s = p.scale.clone();
        let mut c: Vec<f64> = p.objective.iter().zip(&s).map(|(c, s)| c * s).collect();
        let cmax = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let obj_scale = if cmax > 0.0 { cmax } else { 1.0 };
        c.iter_mut().for_each(|v| *v /= obj_scale);

        let mut rows = Vec::with_capacity(p.num_inequalities());
        for q in &p.quadratic {
            let support = local_support(q.squares.iter().flat_map(|sq| sq.idx.iter()).chain(q.linear.idx.iter()));
            let squares = q
                .squares
                .iter()
                .map(|sq| {
                    sq.idx
                        .iter()
                        .zip(&sq.val)
                        .map(|(&i, &v)| (pos(&support, i), v * s[i]))
                        .collect()
                })
                .collect();
            let mut lin = vec![0.0; support.len()];
            for (&i, &v) in q.linear.idx.iter().zip(&q.linear.val) {
                lin[pos(&support, i)] += v * s[i];
            }
            rows.push(Row {
                support,
                kind: RowKind::Quad {
                    squares,
                    lin,
                    c: q.constant,
                },
            });
        }
        for e in &p.exponential {
            let support = local_support([e.e, e.u].iter());
            rows.push(Row {
                kind: RowKind::LogRatio {
                    e: pos(&support, e.e),
                    u: pos(&support, e.u),
                    a: 1.0,
                    b: std::f64::consts::LN_2 * s[e.e] / e.bandwidth,
                    d: s[e.u],
                },
                support,
            });
        }
        // u > 0, completing the exponential-cone barrier
        for e in &p.exponential {
            rows.push(Row {
                support: vec![e.u],
                kind: RowKind::Quad {
                    squares: Vec::new(),
                    lin: vec![-1.0],
                    c: 0.0,
                },
            });
        }
        let row_scale = vec![1.0; rows.len()];

        let mut eqs = Vec::with_capacity(p.equalities.len());
        let mut b = Vec::with_capacity(p.equalities.len());
        let mut eq_scale = Vec::with_capacity(p.equalities.len());
        for r in &p.equalities {
            let mut idx = local_support(r.row.idx.iter());
            let mut val = vec![0.0; idx.len()];
            for (&i, &v) in r.row.idx.iter().zip(&r.row.val) {
                val[pos(&idx, i)] += v * s[i];
            }
            let keep: Vec<bool> = val.iter().map(|v| *v != 0.0).collect();
            let mut k = keep.iter();
            idx.retain(|_| *k.next().unwrap());
            val.retain(|v| *v != 0.0);
            let m = val.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rho = if m > 0.0 { 1.0 / m } else { 1.0 };
            val.iter_mut().for_each(|v| *v *= rho);
            eqs.push(EqRow { idx, val });
            b.push(r.rhs * rho);
            eq_scale.push(rho);
        }
        Scaled {
            n,
            s,
            c,
            obj_scale,
            rows,
            row_scale,
            eqs,
            b,
            eq_scale,
        }
    }

    /// Normalizes each inequality by its gradient magnitude at `x`.
    fn normalize_rows(&mut self, x: &[f64]) {
        let mut g = Vec::new();
        for (row, k) in self.rows.iter_mut().zip(&mut self.row_scale) {
            row.grad(x, &mut g);
            let m = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m > 0.0 && m.is_finite() {
                *k = 1.0 / m;
                row.scale_by(*k);
            }
        }
    }
}

/// Row values and gradients at a point.
#[derive(Clone)]
struct Eval {
    f: Vec<f64>,
    grads: Vec<Vec<f64>>,
}

impl Scaled {
    /// `None` outside the domain of some row.
    fn evaluate(&self, x: &[f64]) -> Option<Eval> {
        let mut f = Vec::with_capacity(self.rows.len());
        let mut grads = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let v = row.value(x);
            if !v.is_finite() {
                return None;
            }
            f.push(v);
            let mut g = Vec::new();
            row.grad(x, &mut g);
            grads.push(g);
        }
        Some(Eval { f, grads })
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn primal_residual(&self, x: &[f64]) -> Vec<f64> {
        self.eqs.iter().zip(&self.b).map(|(r, b)| r.dot(x) - b).collect()
    }

    /// `c + Σ λ_i ∇f_i + Aᵀν`.
    fn dual_residual(&self, ev: &Eval, lam: &[f64], nu: &[f64]) -> Vec<f64> {
        let mut r = self.c.clone();
        for ((row, g), l) in self.rows.iter().zip(&ev.grads).zip(lam) {
            for (gi, &i) in g.iter().zip(&row.support) {
                r[i] += l * gi;
            }
        }
        for (row, &v) in self.eqs.iter().zip(nu) {
            row.axpy(v, &mut r);
        }
        r
    }

    /// Least-squares choice of `τ` minimizing `‖c + τ·Σ∇f_i/s_i + Aᵀν‖` over
    /// `(τ, ν)`, floored so the implied gap is at least `1 + |cᵀx|`.
    fn initial_tau(&self, x: &[f64], ev: &Eval, slack: &[f64]) -> f64 {
        let n = self.n;
        let mut v = vec![0.0; n];
        for (row, (g, s)) in self.rows.iter().zip(ev.grads.iter().zip(slack)) {
            for (gi, &i) in g.iter().zip(&row.support) {
                v[i] += gi / s;
            }
        }
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(self.eqs.len() + 1);
        cols.push(v);
        for r in &self.eqs {
            let mut col = vec![0.0; n];
            r.axpy(1.0, &mut col);
            cols.push(col);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let k = cols.len();
        let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| dot(&cols[i], &cols[j]) + if i == j { 1e-14 } else { 0.0 });
        let rhs = nalgebra::DVector::from_fn(k, |i, _| -dot(&cols[i], &self.c));
        let floor = (1.0 + self.objective(x).abs()) / self.rows.len() as f64;
        match gram.cholesky().map(|ch| ch.solve(&rhs)) {
            Some(s) if s[0].is_finite() => s[0].max(floor),
            _ => floor,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest `α ≤ 1` keeping `v + α·dv ≥ 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0f64, |a, (v, d)| a.min(-v / d))
}

/// Iterations without improving on the best iterate before giving up.
const STALL_ITERATIONS: usize = 8;

/// Smallest slack given to a row at the start point, in normalized units;
/// rows nearer to active start with a nonzero slack residual.
const MIN_START_SLACK: f64 = 1e-4;

/// Minimizes `program` from `start`.
///
/// `start` must lie in the domain of every row; inequalities and equalities
/// need not hold there. When the inequalities hold at `start` (within
/// `feas_tol` in normalized units) the returned point is never worse than
/// `start` in objective.
///
/// Primal-dual interior-point method with explicit slacks `f(x) + s = 0` and
/// Mehrotra's predictor-corrector centering.
pub fn solve(program: &ConvexProgram, start: &[f64], options: &SolverOptions) -> Result<Solution, SolverError> {
    program.validate().map_err(|e| SolverError::Invalid(e.to_string()))?;
    if start.len() != program.num_vars() {
        return Err(SolverError::Invalid(format!(
            "start has {} entries, program has {} variables",
            start.len(),
            program.num_vars()
        )));
    }
    if program.num_inequalities() == 0 {
        return Err(SolverError::Invalid("program has no inequality constraints".into()));
    }
    if !(options.tol > 0.0) || !(options.feas_tol > 0.0) {
        return Err(SolverError::Invalid("tolerances must be positive".into()));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::OutsideDomain);
    }

    let mut sc = Scaled::new(program);
    let mut x: Vec<f64> = start.iter().zip(&sc.s).map(|(x, s)| x / s).collect();
    sc.normalize_rows(&x);
    let structure = match options.newton {
        NewtonMethod::Structured => Some(Structure::analyze(sc.n, &sc.rows, &sc.eqs)),
        NewtonMethod::Dense => None,
    };
    let m = sc.rows.len();
    let Some(mut ev) = sc.evaluate(&x) else {
        return Err(SolverError::OutsideDomain);
    };
    let start_feasible = ev.f.iter().all(|f| *f <= options.feas_tol);
    let mut s: Vec<f64> = ev.f.iter().map(|f| (-f).max(MIN_START_SLACK)).collect();
    let tau = sc.initial_tau(&x, &ev, &s);
    let mut lam: Vec<f64> = s.iter().map(|s| tau / s).collect();
    let mut nu = vec![0.0; sc.eqs.len()];

    let obj_start = program.objective_value(start);
    let mut iterations = 0;
    let mut failure: Option<String> = None;
    let mut converged = false;
    // iterate with the smallest residual relative to the tolerances, returned
    // if the iteration breaks down
    let mut since_best = 0;
    let mut best: Option<(f64, Vec<f64>, Eval, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    loop {
        let rd = sc.dual_residual(&ev, &lam, &nu);
        let rp = sc.primal_residual(&x);
        let ri: Vec<f64> = ev.f.iter().zip(&s).map(|(f, s)| f + s).collect();
        let eta: f64 = s.iter().zip(&lam).map(|(s, l)| s * l).sum();
        let gap = eta / (1.0 + sc.objective(&x).abs());
        let (dual_inf, pri_inf) = (max_abs(&rd), max_abs(&rp).max(max_abs(&ri)));
        if options.trace {
            eprintln!("ipm {iterations}: gap {gap:.3e} primal {pri_inf:.3e} dual {dual_inf:.3e}");
        }
        if gap <= options.tol && dual_inf <= options.feas_tol && pri_inf <= options.feas_tol {
            converged = true;
            break;
        }
        let merit = (gap / options.tol)
            .max(pri_inf / options.feas_tol)
            .max(dual_inf / options.feas_tol);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), ev.clone(), s.clone(), lam.clone(), nu.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > STALL_ITERATIONS {
                failure = Some("no progress".into());
                break;
            }
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;
        let mu = eta / m as f64;

        let weights: Vec<f64> = lam.iter().zip(&s).map(|(l, s)| l / s).collect();
        let sys = newton::System {
            n: sc.n,
            x: &x,
            rows: &sc.rows,
            grads: &ev.grads,
            lam: &lam,
            weights: &weights,
            eqs: &sc.eqs,
        };
        let Some(kkt) = newton::factorize(structure.as_ref(), &sys) else {
            failure = Some("singular Newton system".into());
            break;
        };
        let r2: Vec<f64> = rp.iter().map(|v| -v).collect();
        // direction for complementarity target `rc`: λΔs + sΔλ = −rc
        let direction = |rc: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut r1: Vec<f64> = rd.iter().map(|v| -v).collect();
            for (i, (row, g)) in sc.rows.iter().zip(&ev.grads).enumerate() {
                let k = weights[i] * ri[i] - rc[i] / s[i];
                for (gi, &j) in g.iter().zip(&row.support) {
                    r1[j] -= gi * k;
                }
            }
            let (dx, dnu) = kkt.solve(&r1, &r2)?;
            let gdx: Vec<f64> = sc
                .rows
                .iter()
                .zip(&ev.grads)
                .map(|(row, g)| g.iter().zip(&row.support).map(|(gi, &j)| gi * dx[j]).sum())
                .collect();
            let ds: Vec<f64> = (0..m).map(|i| -ri[i] - gdx[i]).collect();
            let dl: Vec<f64> = (0..m).map(|i| weights[i] * (gdx[i] + ri[i]) - rc[i] / s[i]).collect();
            Some((dx, ds, dl, dnu))
        };
        let rc_aff: Vec<f64> = s.iter().zip(&lam).map(|(s, l)| s * l).collect();
        let Some((_, ds_a, dl_a, _)) = direction(&rc_aff) else {
            failure = Some("singular Newton system".into());
            break;
        };
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff: f64 = (0..m)
            .map(|i| (s[i] + a_aff * ds_a[i]) * (lam[i] + a_aff * dl_a[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc: Vec<f64> = (0..m).map(|i| s[i] * lam[i] - sigma * mu + ds_a[i] * dl_a[i]).collect();
        let Some((dx, ds, dl, dnu)) = direction(&rc) else {
            failure = Some("singular Newton system".into());
            break;
        };

        let mut alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        let mut accepted = None;
        while alpha > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(x, d)| x + alpha * d).collect();
            if let Some(tev) = sc.evaluate(&trial) {
                accepted = Some((trial, tev));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, tev)) = accepted else {
            failure = Some("line search left the domain".into());
            break;
        };
        x = trial;
        ev = tev;
        s.iter_mut().zip(&ds).for_each(|(v, d)| *v += alpha * d);
        lam.iter_mut().zip(&dl).for_each(|(v, d)| *v += alpha * d);
        nu.iter_mut().zip(&dnu).for_each(|(v, d)| *v += alpha * d);
    }

    if !converged {
        if let Some((_, bx, bev, bs, blam, bnu)) = best {
            (x, ev, s, lam, nu) = (bx, bev, bs, blam, bnu);
        }
    }
    let dual_residual = max_abs(&sc.dual_residual(&ev, &lam, &nu));
    let infeasibility = max_abs(&sc.primal_residual(&x)).max(ev.f.iter().fold(0.0f64, |a, f| a.max(*f)));
    // back to raw units
    let x_scaled = x;
    let x: Vec<f64> = x_scaled.iter().zip(&sc.s).map(|(x, s)| x * s).collect();
    // multipliers of the program's own rows; a log-form row maps back through
    // the derivative ratio exp(b·x_e)
    let reported = program.num_inequalities();
    let ineq_duals: Vec<f64> = (0..reported)
        .map(|i| {
            let mut v = lam[i] * sc.row_scale[i] * sc.obj_scale;
            if let RowKind::LogRatio { e, b, .. } = &sc.rows[i].kind {
                v /= (b * x_scaled[sc.rows[i].support[*e]]).exp();
            }
            v
        })
        .collect();
    let eq_duals: Vec<f64> = nu.iter().zip(&sc.eq_scale).map(|(v, r)| v * r * sc.obj_scale).collect();
    let eta: f64 = lam.iter().zip(&s).map(|(l, s)| l * s).sum();
    let mut status = SolveStatus {
        converged,
        iterations,
        gap: eta / (1.0 + sc.objective(&x_scaled).abs()),
        infeasibility,
        dual_residual,
        kept_start: false,
    };
    let mut objective = program.objective_value(&x);
    let x = if start_feasible && objective > obj_start {
        status.kept_start = true;
        objective = obj_start;
        start.to_vec()
    } else {
        x
    };
    let sol = Solution {
        x,
        ineq_duals,
        eq_duals,
        objective,
        status,
    };
    match failure {
        _ if converged => Ok(sol),
        Some(reason) => Err(SolverError::Numerical {
            reason,
            partial: Box::new(sol),
        }),
        None => Err(SolverError::IterationLimit { partial: Box::new(sol) }),
    }
}
