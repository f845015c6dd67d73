//! Newton step of the interior-point method:
//!
//! ```text
//! [ H  Aᵀ ] [Δx]   [r1]
//! [ A  0  ] [Δν] = [r2],   H = Σ λ_i ∇²f_i + Σ (λ_i/s_i) ∇f_i ∇f_iᵀ
//! ```
//!
//! The structured route eliminates small groups of variables ("leaves") that
//! never appear inside a square, factors the remaining variables block by
//! block and handles wide diagonal rows (the power ball) by a Woodbury update.
//! What is left is a small dense system in the equality multipliers and the
//! "pivot" variables: equality variables whose only rows are their own bounds.
//! Their curvature vanishes as the bounds go slack, so they are kept out of
//! `H⁻¹`.

use nalgebra::{Cholesky, DMatrix, DVector, DVectorViewMut, Dyn};

use super::ipm::{EqRow, Row, RowKind};

/// Diagonal-only rows touching at least this many variables go through Woodbury.
pub(super) const GLOBAL_MIN_SUPPORT: usize = 16;
const MAX_LEAF_GROUP: usize = 4;

#[derive(Clone, Copy)]
pub(super) struct System<'a> {
    pub n: usize,
    pub x: &'a [f64],
    pub rows: &'a [Row],
    pub grads: &'a [Vec<f64>],
    pub lam: &'a [f64],
    /// `λ_i / s_i`.
    pub weights: &'a [f64],
    pub eqs: &'a [EqRow],
}

#[derive(Clone, Copy, Debug)]
enum Role {
    Core { block: usize, pos: usize },
    Leaf { group: usize, pos: usize },
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub(super) struct Structure {
    role: Vec<Role>,
    block_vars: Vec<Vec<usize>>,
    block_offset: Vec<usize>,
    n_core: usize,
    group_vars: Vec<Vec<usize>>,
    group_block: Vec<Option<usize>>,
    global: Vec<bool>,
    /// Equality variables whose rows involve no other variable; they join
    /// the equality multipliers in the final dense system.
    pivots: Vec<usize>,
    pivot_group: Vec<bool>,
}

/// Components of `members` under `uf`, ordered by smallest member.
fn components(uf: &mut UnionFind, members: &[usize]) -> Vec<Vec<usize>> {
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &v in members {
        by_root.entry(uf.find(v)).or_default().push(v);
    }
    let mut comps: Vec<Vec<usize>> = by_root.into_values().collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

impl Structure {
    pub fn analyze(n: usize, rows: &[Row], eqs: &[EqRow]) -> Structure {
        let global: Vec<bool> = rows.iter().map(Row::is_global).collect();
        let mut candidate = vec![true; n];
        for (row, &g) in rows.iter().zip(&global) {
            if g {
                row.support.iter().for_each(|&v| candidate[v] = false);
            } else if let RowKind::Quad { squares, .. } = &row.kind {
                for &(p, _) in squares.iter().flatten() {
                    candidate[row.support[p]] = false;
                }
            }
        }
        let mut uf = UnionFind::new(n);
        for (row, &g) in rows.iter().zip(&global) {
            if g {
                continue;
            }
            let mut first = None;
            for &v in row.support.iter().filter(|&&v| candidate[v]) {
                match first {
                    None => first = Some(v),
                    Some(f) => uf.union(f, v),
                }
            }
        }
        let cands: Vec<usize> = (0..n).filter(|&v| candidate[v]).collect();
        let mut group_vars = Vec::new();
        for comp in components(&mut uf, &cands) {
            if comp.len() <= MAX_LEAF_GROUP {
                group_vars.push(comp);
            } else {
                comp.iter().for_each(|&v| candidate[v] = false);
            }
        }
        let mut leaf_group = vec![usize::MAX; n];
        for (gi, vars) in group_vars.iter().enumerate() {
            vars.iter().for_each(|&v| leaf_group[v] = gi);
        }

        // Core blocks: core variables sharing a local row, plus fill through leaf groups.
        let mut uf = UnionFind::new(n);
        let mut group_anchor: Vec<Option<usize>> = vec![None; group_vars.len()];
        for (row, &g) in rows.iter().zip(&global) {
            if g {
                continue;
            }
            let core: Vec<usize> = row
                .support
                .iter()
                .copied()
                .filter(|&v| leaf_group[v] == usize::MAX)
                .collect();
            for w in core.windows(2) {
                uf.union(w[0], w[1]);
            }
            if let (Some(&c), Some(&l)) = (core.first(), row.support.iter().find(|&&v| leaf_group[v] != usize::MAX)) {
                let gi = leaf_group[l];
                match group_anchor[gi] {
                    None => group_anchor[gi] = Some(c),
                    Some(a) => uf.union(a, c),
                }
            }
        }
        let core_vars: Vec<usize> = (0..n).filter(|&v| leaf_group[v] == usize::MAX).collect();
        let block_vars = components(&mut uf, &core_vars);
        let mut role = vec![Role::Leaf { group: 0, pos: 0 }; n];
        let mut block_offset = Vec::with_capacity(block_vars.len());
        let mut off = 0;
        for (b, vars) in block_vars.iter().enumerate() {
            block_offset.push(off);
            off += vars.len();
            for (p, &v) in vars.iter().enumerate() {
                role[v] = Role::Core { block: b, pos: p };
            }
        }
        for (gi, vars) in group_vars.iter().enumerate() {
            for (p, &v) in vars.iter().enumerate() {
                role[v] = Role::Leaf { group: gi, pos: p };
            }
        }
        let group_block = group_anchor
            .iter()
            .map(|a| {
                a.map(|v| match role[v] {
                    Role::Core { block, .. } => block,
                    Role::Leaf { .. } => unreachable!("anchors are core variables"),
                })
            })
            .collect::<Vec<_>>();
        let mut in_eq = vec![false; n];
        eqs.iter().flat_map(|r| &r.idx).for_each(|&v| in_eq[v] = true);
        let pivot_group: Vec<bool> = group_vars
            .iter()
            .zip(&group_block)
            .map(|(vars, b)| vars.len() == 1 && b.is_none() && in_eq[vars[0]])
            .collect();
        let pivots = group_vars
            .iter()
            .zip(&pivot_group)
            .filter(|(_, p)| **p)
            .map(|(vars, _)| vars[0])
            .collect();
        Structure {
            role,
            block_vars,
            block_offset,
            n_core: off,
            group_vars,
            group_block,
            global,
            pivots,
            pivot_group,
        }
    }

    #[cfg(test)]
    fn shape(&self) -> (Vec<usize>, Vec<usize>) {
        (
            self.block_vars.iter().map(Vec::len).collect(),
            self.group_vars.iter().map(Vec::len).collect(),
        )
    }

    fn factor(&self, sys: &System) -> Option<Factor> {
        let bl: Vec<usize> = self.block_vars.iter().map(Vec::len).collect();
        let gl: Vec<usize> = self.group_vars.iter().map(Vec::len).collect();
        // column-major blocks, row-major leaf blocks and couplings
        let mut blocks: Vec<Vec<f64>> = bl.iter().map(|&n| vec![0.0; n * n]).collect();
        let mut leaf: Vec<Vec<f64>> = gl.iter().map(|&k| vec![0.0; k * k]).collect();
        let mut coupling: Vec<Vec<f64>> = self
            .group_block
            .iter()
            .zip(&gl)
            .map(|(b, &k)| vec![0.0; b.map_or(0, |b| bl[b]) * k])
            .collect();
        let mut u_cols: Vec<Vec<f64>> = Vec::new();

        let mut roles = Vec::new();
        let mut core_pos: Vec<(usize, usize)> = Vec::new();
        let mut leaf_pos: Vec<usize> = Vec::new();
        for (i, row) in sys.rows.iter().enumerate() {
            let sup = &row.support;
            roles.clear();
            roles.extend(sup.iter().map(|&v| self.role[v]));
            let lam = sys.lam[i];
            row.hess_for_each(sys.x, |p, q, v| {
                add_entry(
                    &mut blocks,
                    &mut leaf,
                    &mut coupling,
                    &bl,
                    &gl,
                    roles[p],
                    roles[q],
                    lam * v,
                )
            });
            let w = sys.weights[i];
            let g = &sys.grads[i];
            if self.global[i] {
                let r = w.sqrt();
                let mut col = vec![0.0; self.n_core];
                for (gv, role) in g.iter().zip(&roles) {
                    if let Role::Core { block, pos } = *role {
                        col[self.block_offset[block] + pos] = r * gv;
                    }
                }
                u_cols.push(col);
                continue;
            }
            core_pos.clear();
            leaf_pos.clear();
            let mut block = 0;
            for (a, role) in roles.iter().enumerate() {
                match *role {
                    Role::Core { block: b, pos } if g[a] != 0.0 => {
                        block = b;
                        core_pos.push((a, pos));
                    }
                    Role::Leaf { .. } if g[a] != 0.0 => leaf_pos.push(a),
                    _ => {}
                }
            }
            // core variables of a local row share one block
            if !core_pos.is_empty() {
                let (blk, nb) = (&mut blocks[block], bl[block]);
                for &(a, pa) in &core_pos {
                    let ga = w * g[a];
                    for &(c, pc) in &core_pos {
                        blk[pa + pc * nb] += ga * g[c];
                    }
                }
            }
            for &a in &leaf_pos {
                let ga = w * g[a];
                for &c in leaf_pos.iter().chain(core_pos.iter().map(|(c, _)| c)) {
                    add_entry(
                        &mut blocks,
                        &mut leaf,
                        &mut coupling,
                        &bl,
                        &gl,
                        roles[c],
                        roles[a],
                        ga * g[c],
                    );
                }
            }
        }

        let mut leaf_inv = Vec::with_capacity(leaf.len());
        let mut pivot_diag = Vec::with_capacity(self.pivots.len());
        let mut t = Vec::new();
        for (gi, h) in leaf.into_iter().enumerate() {
            if self.pivot_group[gi] {
                pivot_diag.push(h[0]);
                leaf_inv.push(Vec::new());
                continue;
            }
            let k = gl[gi];
            let inv = DMatrix::from_row_slice(k, k, &h).cholesky()?.inverse();
            let inv: Vec<f64> = inv.transpose().as_slice().to_vec();
            if let Some(b) = self.group_block[gi] {
                // block −= C L⁻¹ Cᵀ, lower triangle
                let (c, nb) = (&coupling[gi], bl[b]);
                let cols: Vec<usize> = (0..k).filter(|&a| (0..nb).any(|p| c[p * k + a] != 0.0)).collect();
                let kc = cols.len();
                t.clear();
                t.resize(nb * kc, 0.0);
                for p in 0..nb {
                    for (ai, &a) in cols.iter().enumerate() {
                        t[p * kc + ai] = cols.iter().map(|&e| c[p * k + e] * inv[e * k + a]).sum();
                    }
                }
                let blk = &mut blocks[b];
                for q in 0..nb {
                    let cq: [f64; MAX_LEAF_GROUP] =
                        std::array::from_fn(|ai| cols.get(ai).map_or(0.0, |&a| c[q * k + a]));
                    if cq.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for p in q..nb {
                        let tp = &t[p * kc..p * kc + kc];
                        blk[p + q * nb] -= tp.iter().zip(&cq).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            leaf_inv.push(inv);
        }
        let block_chol: Vec<Cholesky<f64, Dyn>> = blocks
            .into_iter()
            .zip(&bl)
            .map(|(mut v, &n)| {
                for q in 0..n {
                    for p in q + 1..n {
                        v[q + p * n] = v[p + q * n];
                    }
                }
                DMatrix::from_vec(n, n, v).cholesky()
            })
            .collect::<Option<_>>()?;

        let mut fac = Factor {
            block_chol,
            leaf_inv,
            coupling,
            wood: None,
            pivot_diag,
        };
        if !u_cols.is_empty() {
            let r = u_cols.len();
            let mut w_cols = u_cols.clone();
            for col in &mut w_cols {
                self.block_solve(&fac, col);
            }
            let small = DMatrix::from_fn(r, r, |i, j| {
                let d: f64 = u_cols[i].iter().zip(&w_cols[j]).map(|(a, b)| a * b).sum();
                d + if i == j { 1.0 } else { 0.0 }
            });
            let chol = small.cholesky()?;
            fac.wood = Some(Woodbury {
                u: u_cols,
                w: w_cols,
                chol,
            });
        }
        Some(fac)
    }

    fn block_solve(&self, fac: &Factor, y: &mut [f64]) {
        for (b, ch) in fac.block_chol.iter().enumerate() {
            let off = self.block_offset[b];
            let len = self.block_vars[b].len();
            let mut v = DVectorViewMut::from_slice(&mut y[off..off + len], len);
            ch.solve_mut(&mut v);
        }
    }

    /// Solves `H z = r` in place on all but the pivot variables, which are
    /// left untouched.
    fn h_solve(&self, fac: &Factor, r: &mut [f64]) {
        let mut core = vec![0.0; self.n_core];
        for (b, vars) in self.block_vars.iter().enumerate() {
            let off = self.block_offset[b];
            for (p, &v) in vars.iter().enumerate() {
                core[off + p] = r[v];
            }
        }
        let mut t = [0.0; MAX_LEAF_GROUP];
        for (gi, vars) in self.group_vars.iter().enumerate() {
            let Some(b) = self.group_block[gi] else { continue };
            let (k, inv) = (vars.len(), &fac.leaf_inv[gi]);
            for a in 0..k {
                t[a] = (0..k).map(|e| inv[a * k + e] * r[vars[e]]).sum();
            }
            if t[..k].iter().all(|v| *v == 0.0) {
                continue;
            }
            let off = self.block_offset[b];
            for (p, cp) in fac.coupling[gi].chunks_exact(k).enumerate() {
                core[off + p] -= cp.iter().zip(&t).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        self.block_solve(fac, &mut core);
        if let Some(wb) = &fac.wood {
            let ut = DVector::from_iterator(
                wb.u.len(),
                wb.u.iter().map(|u| u.iter().zip(&core).map(|(a, b)| a * b).sum()),
            );
            let coef = wb.chol.solve(&ut);
            for (w, c) in wb.w.iter().zip(coef.iter()) {
                core.iter_mut().zip(w).for_each(|(z, wi)| *z -= c * wi);
            }
        }
        let mut rl = [0.0; MAX_LEAF_GROUP];
        for (gi, vars) in self.group_vars.iter().enumerate() {
            if self.pivot_group[gi] {
                continue;
            }
            let k = vars.len();
            for (a, &v) in vars.iter().enumerate() {
                rl[a] = r[v];
            }
            if let Some(b) = self.group_block[gi] {
                let off = self.block_offset[b];
                for (p, cp) in fac.coupling[gi].chunks_exact(k).enumerate() {
                    let z = core[off + p];
                    rl.iter_mut().zip(cp).for_each(|(x, c)| *x -= c * z);
                }
            }
            let inv = &fac.leaf_inv[gi];
            for (a, &v) in vars.iter().enumerate() {
                r[v] = (0..k).map(|e| inv[a * k + e] * rl[e]).sum();
            }
        }
        for (b, vars) in self.block_vars.iter().enumerate() {
            let off = self.block_offset[b];
            for (p, &v) in vars.iter().enumerate() {
                r[v] = core[off + p];
            }
        }
    }

    /// Structured KKT solve; `None` when a factorization breaks down.
    #[cfg(test)]
    pub fn solve(&self, sys: &System, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        factorize(Some(self), sys)?.solve(r1, r2)
    }
}

/// Adds `v` at `(a, b)` of the Hessian; the lower-left coupling is implied.
#[allow(clippy::too_many_arguments)]
fn add_entry(
    blocks: &mut [Vec<f64>],
    leaf: &mut [Vec<f64>],
    coupling: &mut [Vec<f64>],
    bl: &[usize],
    gl: &[usize],
    a: Role,
    b: Role,
    v: f64,
) {
    match (a, b) {
        (Role::Core { block, pos: p }, Role::Core { pos: q, .. }) => blocks[block][p + q * bl[block]] += v,
        (Role::Leaf { group, pos: p }, Role::Leaf { pos: q, .. }) => leaf[group][p * gl[group] + q] += v,
        (Role::Core { pos: p, .. }, Role::Leaf { group, pos: q }) => coupling[group][p * gl[group] + q] += v,
        (Role::Leaf { .. }, Role::Core { .. }) => {}
    }
}

pub(super) struct Factor {
    block_chol: Vec<Cholesky<f64, Dyn>>,
    /// Row-major inverse of each leaf block.
    leaf_inv: Vec<Vec<f64>>,
    /// Row-major `block × group` coupling of each leaf group.
    coupling: Vec<Vec<f64>>,
    wood: Option<Woodbury>,
    /// Hessian diagonal at each pivot variable.
    pivot_diag: Vec<f64>,
}

/// Low-rank part `U Uᵀ` of the core matrix, with `W = S⁻¹U` and the
/// Cholesky factor of `I + UᵀW`.
struct Woodbury {
    u: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
}

/// A factored KKT matrix, reusable for several right-hand sides.
pub(super) struct KktFactor<'a> {
    sys: System<'a>,
    kind: FactorKind<'a>,
}

enum FactorKind<'a> {
    Structured {
        structure: &'a Structure,
        fac: Factor,
        /// `H⁻¹ aᵢ` for each equality row, zero at the pivots.
        y: Vec<Vec<f64>>,
        /// `[D Aₚᵀ; Aₚ −A H⁻¹ Aᵀ]` over the pivots and the equalities.
        reduced: Option<nalgebra::LU<f64, Dyn, Dyn>>,
    },
    Dense(nalgebra::LU<f64, Dyn, Dyn>),
}

/// Factors the KKT matrix, through `structure` when given and possible,
/// densely otherwise.
pub(super) fn factorize<'a>(structure: Option<&'a Structure>, sys: &System<'a>) -> Option<KktFactor<'a>> {
    if let Some(st) = structure {
        if let Some(f) = factor_structured(st, sys) {
            return Some(f);
        }
    }
    factor_dense(sys)
}

fn factor_structured<'a>(structure: &'a Structure, sys: &System<'a>) -> Option<KktFactor<'a>> {
    let fac = structure.factor(sys)?;
    let p = sys.eqs.len();
    let pivots = &structure.pivots;
    let mut y: Vec<Vec<f64>> = Vec::with_capacity(p);
    for row in sys.eqs {
        let mut col = vec![0.0; sys.n];
        row.axpy(1.0, &mut col);
        pivots.iter().for_each(|&v| col[v] = 0.0);
        structure.h_solve(&fac, &mut col);
        y.push(col);
    }
    let reduced = if p == 0 {
        None
    } else {
        let q = pivots.len();
        let mut k = DMatrix::zeros(q + p, q + p);
        for (a, &d) in fac.pivot_diag.iter().enumerate() {
            k[(a, a)] = d;
        }
        for (i, row) in sys.eqs.iter().enumerate() {
            for (a, &v) in pivots.iter().enumerate() {
                if let Ok(pos) = row.idx.binary_search(&v) {
                    k[(a, q + i)] = row.val[pos];
                    k[(q + i, a)] = row.val[pos];
                }
            }
            for (j, yj) in y.iter().enumerate().skip(i) {
                let v = -row.dot(yj);
                k[(q + i, q + j)] = v;
                k[(q + j, q + i)] = v;
            }
        }
        Some(k.lu())
    };
    Some(KktFactor {
        sys: *sys,
        kind: FactorKind::Structured {
            structure,
            fac,
            y,
            reduced,
        },
    })
}

fn factor_dense<'a>(sys: &System<'a>) -> Option<KktFactor<'a>> {
    let n = sys.n;
    let p = sys.eqs.len();
    let mut k = DMatrix::<f64>::zeros(n + p, n + p);
    for (i, row) in sys.rows.iter().enumerate() {
        let sup = &row.support;
        let lam = sys.lam[i];
        row.hess_for_each(sys.x, |a, b, v| k[(sup[a], sup[b])] += lam * v);
        let g = &sys.grads[i];
        for (a, &va) in sup.iter().enumerate() {
            for (b, &vb) in sup.iter().enumerate() {
                k[(va, vb)] += sys.weights[i] * g[a] * g[b];
            }
        }
    }
    for (r, row) in sys.eqs.iter().enumerate() {
        for (&i, &v) in row.idx.iter().zip(&row.val) {
            k[(n + r, i)] += v;
            k[(i, n + r)] += v;
        }
    }
    Some(KktFactor {
        sys: *sys,
        kind: FactorKind::Dense(k.lu()),
    })
}

/// Refinement passes after the first solve.
const REFINE_STEPS: usize = 3;

impl KktFactor<'_> {
    /// Solves the KKT system, refining iteratively against the exact product.
    pub fn solve(&self, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let (mut dx, mut dnu) = self.raw_solve(r1, r2)?;
        let scale = r1
            .iter()
            .chain(r2)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let residual = |dx: &[f64], dnu: &[f64]| {
            let (k1, k2) = self.product(dx, dnu);
            let e1: Vec<f64> = r1.iter().zip(&k1).map(|(r, k)| r - k).collect();
            let e2: Vec<f64> = r2.iter().zip(&k2).map(|(r, k)| r - k).collect();
            let err = e1.iter().chain(&e2).fold(0.0f64, |m, v| m.max(v.abs()));
            (e1, e2, err)
        };
        let (mut e1, mut e2, mut err) = residual(&dx, &dnu);
        for _ in 0..REFINE_STEPS {
            if !(err > 1e-14 * scale) {
                break;
            }
            let (cx, cnu) = self.raw_solve(&e1, &e2)?;
            let nx: Vec<f64> = dx.iter().zip(&cx).map(|(a, b)| a + b).collect();
            let nnu: Vec<f64> = dnu.iter().zip(&cnu).map(|(a, b)| a + b).collect();
            let (n1, n2, nerr) = residual(&nx, &nnu);
            // a correction that does not reduce the residual is discarded
            if !(nerr < err) {
                break;
            }
            (dx, dnu, e1, e2, err) = (nx, nnu, n1, n2, nerr);
        }
        finite(dx, dnu)
    }

    /// `[H Aᵀ; A 0]·(dx, dnu)`.
    fn product(&self, dx: &[f64], dnu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sys = &self.sys;
        let mut out = vec![0.0; sys.n];
        for (i, row) in sys.rows.iter().enumerate() {
            let sup = &row.support;
            let lam = sys.lam[i];
            row.hess_for_each(sys.x, |a, b, v| out[sup[a]] += lam * v * dx[sup[b]]);
            let g = &sys.grads[i];
            let gd: f64 = g.iter().zip(sup).map(|(gi, &j)| gi * dx[j]).sum();
            for (gi, &j) in g.iter().zip(sup) {
                out[j] += sys.weights[i] * gi * gd;
            }
        }
        for (row, &v) in sys.eqs.iter().zip(dnu) {
            row.axpy(v, &mut out);
        }
        let ax = sys.eqs.iter().map(|row| row.dot(dx)).collect();
        (out, ax)
    }

    fn raw_solve(&self, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            FactorKind::Structured {
                structure,
                fac,
                y,
                reduced,
            } => {
                let eqs = self.sys.eqs;
                let pivots = &structure.pivots;
                let mut z = r1.to_vec();
                pivots.iter().for_each(|&v| z[v] = 0.0);
                structure.h_solve(fac, &mut z);
                let Some(reduced) = reduced else {
                    return Some((z, Vec::new()));
                };
                let q = pivots.len();
                let rhs = DVector::from_iterator(
                    q + eqs.len(),
                    pivots
                        .iter()
                        .map(|&v| r1[v])
                        .chain(eqs.iter().zip(r2).map(|(row, r)| r - row.dot(&z))),
                );
                let sol = reduced.solve(&rhs)?;
                let dnu = sol.rows(q, eqs.len());
                for (col, d) in y.iter().zip(dnu.iter()) {
                    z.iter_mut().zip(col).for_each(|(zi, ci)| *zi -= d * ci);
                }
                for (a, &v) in pivots.iter().enumerate() {
                    z[v] = sol[a];
                }
                Some((z, dnu.iter().copied().collect()))
            }
            FactorKind::Dense(lu) => {
                let (n, p) = (self.sys.n, self.sys.eqs.len());
                let rhs = DVector::from_iterator(n + p, r1.iter().chain(r2).copied());
                let sol = lu.solve(&rhs)?;
                Some((
                    sol.rows(0, n).iter().copied().collect(),
                    sol.rows(n, p).iter().copied().collect(),
                ))
            }
        }
    }
}

fn finite(dx: Vec<f64>, dnu: Vec<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    (dx.iter().chain(&dnu).all(|v| v.is_finite())).then_some((dx, dnu))
}

/// Dense LU of the full KKT matrix.
#[cfg(test)]
pub(super) fn solve_dense(sys: &System, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    factor_dense(sys)?.solve(r1, r2)
}
