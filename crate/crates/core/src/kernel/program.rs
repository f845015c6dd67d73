use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, f64)>>(pairs: I) -> Self {
        let mut v = Self::new();
        for (i, x) in pairs {
            v.push(i, x);
        }
        v
    }

    pub fn push(&mut self, i: usize, x: f64) {
        self.idx.push(i);
        self.val.push(x);
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }
}

/// Role of a variable; only affects counting and debug output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// Real or imaginary part of a beamformer entry.
    Beam,
    Rate,
    Exponent,
    Aux,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTag {
    Power,
    Linearized,
    /// Sign constraint on a single variable.
    Bound,
    Generic,
}

/// `Σ_j (q_j·x)² + l·x + c ≤ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadConstraint {
    pub tag: ConstraintTag,
    pub squares: Vec<SparseVec>,
    pub linear: SparseVec,
    pub constant: f64,
}

impl QuadConstraint {
    pub fn linear(tag: ConstraintTag, linear: SparseVec, constant: f64) -> Self {
        QuadConstraint {
            tag,
            squares: Vec::new(),
            linear,
            constant,
        }
    }

    /// Adds `(q·x + d)²`, expanding the affine part into the linear and constant terms.
    pub fn add_affine_square(&mut self, q: SparseVec, d: f64) {
        if d != 0.0 {
            for (&i, &v) in q.idx.iter().zip(&q.val) {
                self.linear.push(i, 2.0 * d * v);
            }
            self.constant += d * d;
        }
        self.squares.push(q);
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.squares.iter().map(|q| q.dot(x).powi(2)).sum::<f64>() + self.linear.dot(x) + self.constant
    }
}

/// `2^{x_e / B} − x_u ≤ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpConstraint {
    pub e: usize,
    pub u: usize,
    pub bandwidth: f64,
}

impl ExpConstraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        (x[self.e] / self.bandwidth).exp2() - x[self.u]
    }
}

/// `row·x = rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    pub row: SparseVec,
    pub rhs: f64,
}

/// Minimize `objective·x` subject to the listed constraints.
///
/// `scale` holds a typical magnitude per variable; the solver works in
/// `x / scale`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub kinds: Vec<VarKind>,
    pub scale: Vec<f64>,
    pub objective: Vec<f64>,
    pub quadratic: Vec<QuadConstraint>,
    pub exponential: Vec<ExpConstraint>,
    pub equalities: Vec<LinearEquality>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, kind: VarKind, scale: f64) -> usize {
        self.kinds.push(kind);
        self.scale.push(scale);
        self.objective.push(0.0);
        self.kinds.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.quadratic.len() + self.exponential.len()
    }

    /// Variable count with each complex beam entry counted once.
    pub fn complex_variable_count(&self) -> usize {
        let beams = self.kinds.iter().filter(|k| **k == VarKind::Beam).count();
        self.num_vars() - beams / 2
    }

    /// Constraint count excluding single-variable sign constraints.
    pub fn structural_constraint_count(&self) -> usize {
        self.quadratic.iter().filter(|q| q.tag != ConstraintTag::Bound).count()
            + self.exponential.len()
            + self.equalities.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Inequality values, quadratic rows first, then exponential rows.
    pub fn inequality_values(&self, x: &[f64]) -> Vec<f64> {
        self.quadratic
            .iter()
            .map(|q| q.value(x))
            .chain(self.exponential.iter().map(|e| e.value(x)))
            .collect()
    }

    /// Largest constraint violation at `x` (zero when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ineq = self.inequality_values(x).into_iter().fold(0.0f64, |m, v| m.max(v));
        let eq = self
            .equalities
            .iter()
            .map(|r| (r.row.dot(x) - r.rhs).abs())
            .fold(0.0f64, f64::max);
        ineq.max(eq)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.scale.len() != n || self.objective.len() != n {
            return Err(Error::Dimension("program vectors disagree in length".into()));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Dimension("variable scales must be positive".into()));
        }
        let check = |v: &SparseVec| -> Result<()> {
            if v.idx.len() != v.val.len() || v.idx.iter().any(|&i| i >= n) || v.val.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dimension("sparse row out of range or non-finite".into()));
            }
            Ok(())
        };
        for q in &self.quadratic {
            q.squares.iter().try_for_each(check)?;
            check(&q.linear)?;
        }
        for e in &self.exponential {
            if e.e >= n || e.u >= n || !(e.bandwidth > 0.0) {
                return Err(Error::Dimension("exponential constraint out of range".into()));
            }
        }
        for r in &self.equalities {
            check(&r.row)?;
        }
        Ok(())
    }

    /// Self-describing JSON dump.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ConvexProgram = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_square_expands() {
        let mut q = QuadConstraint::linear(ConstraintTag::Generic, SparseVec::new(), -1.0);
        q.add_affine_square(SparseVec::from_pairs([(0, 2.0), (1, -1.0)]), 3.0);
        let x = [0.5, 4.0];
        let direct = (2.0 * 0.5 - 4.0 + 3.0f64).powi(2) - 1.0;
        assert!((q.value(&x) - direct).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut p = ConvexProgram::new();
        let a = p.add_var(VarKind::Exponent, 3.0);
        let b = p.add_var(VarKind::Aux, 1.0);
        p.objective[a] = -1.0;
        p.exponential.push(ExpConstraint {
            e: a,
            u: b,
            bandwidth: 3.0,
        });
        p.quadratic.push(QuadConstraint::linear(
            ConstraintTag::Generic,
            SparseVec::from_pairs([(b, 1.0)]),
            -2.0,
        ));
        let back = ConvexProgram::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.max_violation(&[3.0, 2.0]), 0.0);
        assert!((p.max_violation(&[6.0, 2.0]) - 2.0).abs() < 1e-12);
    }
}
