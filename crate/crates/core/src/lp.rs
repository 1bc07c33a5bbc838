//! Dense two-phase simplex for the small linear programs of the tree
//! oracle. Bland's rule picks entering and leaving variables, so the method
//! cannot cycle on degenerate vertices; speed is irrelevant at these sizes.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `opt cᵀx` subject to row constraints; each variable is either free or
/// nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<T> {
    sense: Sense,
    objective: Vec<T>,
    free: Vec<bool>,
    rows: Vec<(Vec<T>, Relation, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub value: T,
    pub x: Vec<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<T> {
    Optimal(LpSolution<T>),
    Infeasible,
    Unbounded,
}

impl<T> LpOutcome<T> {
    pub fn optimal(self) -> Result<LpSolution<T>> {
        match self {
            LpOutcome::Optimal(s) => Ok(s),
            LpOutcome::Infeasible => Err(Error::LpFail("infeasible".into())),
            LpOutcome::Unbounded => Err(Error::LpFail("unbounded".into())),
        }
    }
}

impl<T: Real> LinearProgram<T> {
    /// `objective.len()` variables, all nonnegative until marked free.
    pub fn new(sense: Sense, objective: Vec<T>) -> Self {
        let n = objective.len();
        Self { sense, objective, free: vec![false; n], rows: Vec::new() }
    }

    pub fn vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_free(&mut self, var: usize) {
        self.free[var] = true;
    }

    pub fn constrain(&mut self, coeffs: Vec<T>, rel: Relation, rhs: T) -> Result<()> {
        if coeffs.len() != self.vars() {
            return Err(Error::Dimension("constraint length differs from variable count".into()));
        }
        self.rows.push((coeffs, rel, rhs));
        Ok(())
    }

    /// Solves with an iteration cap; exceeding it raises `LpFail`.
    pub fn solve(&self, max_iterations: usize) -> Result<LpOutcome<T>> {
        let n = self.vars();
        // columns: x⁺ (n), x⁻ (one per free variable), slack/surplus, artificial
        let neg: Vec<usize> = (0..n).filter(|&j| self.free[j]).collect();
        let n_struct = n + neg.len();
        let m = self.rows.len();
        let n_slack = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let slack0 = n_struct;
        let art0 = slack0 + n_slack;
        let mut tab: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut n_art = 0;
        let mut slack = 0;
        let mut needs_art = Vec::with_capacity(m);
        for (coeffs, rel, rhs) in &self.rows {
            let flip = *rhs < T::zero();
            let sign = if flip { -T::one() } else { T::one() };
            let rel = match (rel, flip) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => *r,
            };
            let mut row = vec![T::zero(); art0];
            for j in 0..n {
                row[j] = sign * coeffs[j];
            }
            for (q, &j) in neg.iter().enumerate() {
                row[n + q] = -sign * coeffs[j];
            }
            let mut basic = None;
            match rel {
                Relation::Le => {
                    row[slack0 + slack] = T::one();
                    basic = Some(slack0 + slack);
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack0 + slack] = -T::one();
                    slack += 1;
                }
                Relation::Eq => {}
            }
            row.push(sign * *rhs);
            needs_art.push(basic.is_none());
            if basic.is_none() {
                n_art += 1;
            }
            basis.push(basic.unwrap_or(usize::MAX));
            tab.push(row);
        }
        // insert artificial columns before the right-hand side
        let total = art0 + n_art;
        let mut a = 0;
        for (i, row) in tab.iter_mut().enumerate() {
            let rhs = row.pop().unwrap_or_else(T::zero);
            row.resize(total, T::zero());
            if needs_art[i] {
                row[art0 + a] = T::one();
                basis[i] = art0 + a;
                a += 1;
            }
            row.push(rhs);
        }
        let scale = tab.iter().flatten().fold(T::one(), |s, v| s.max(v.abs()));
        let eps = T::epsilon().sqrt() * T::lit(1e-3) * scale;
        let mut simplex = Tableau { tab, basis, eps, iterations: 0, max_iterations };

        if n_art > 0 {
            let mut cost = vec![T::zero(); total];
            for c in cost.iter_mut().skip(art0) {
                *c = T::one();
            }
            match simplex.optimize(&cost, total)? {
                Phase::Unbounded => return Err(Error::LpFail("phase one unbounded".into())),
                Phase::Optimal => {}
            }
            let infeas = simplex.objective_value(&cost);
            if infeas > eps * T::from_count(m.max(1)) {
                return Ok(LpOutcome::Infeasible);
            }
            simplex.drive_out_artificials(art0);
        }
        let mut cost = vec![T::zero(); total];
        let s = if self.sense == Sense::Maximize { -T::one() } else { T::one() };
        for j in 0..n {
            cost[j] = s * self.objective[j];
        }
        for (q, &j) in neg.iter().enumerate() {
            cost[n + q] = -s * self.objective[j];
        }
        match simplex.optimize(&cost, art0)? {
            Phase::Unbounded => return Ok(LpOutcome::Unbounded),
            Phase::Optimal => {}
        }
        let values = simplex.primal(total);
        let mut x: Vec<T> = values[..n].to_vec();
        for (q, &j) in neg.iter().enumerate() {
            x[j] -= values[n + q];
        }
        let value = self.objective.iter().zip(&x).fold(T::zero(), |acc, (&c, &v)| acc + c * v);
        Ok(LpOutcome::Optimal(LpSolution { value, x, iterations: simplex.iterations }))
    }
}

enum Phase {
    Optimal,
    Unbounded,
}

struct Tableau<T> {
    tab: Vec<Vec<T>>,
    basis: Vec<usize>,
    eps: T,
    iterations: usize,
    max_iterations: usize,
}

impl<T: Real> Tableau<T> {
    fn rhs(&self, i: usize) -> T {
        let row = &self.tab[i];
        row[row.len() - 1]
    }

    fn objective_value(&self, cost: &[T]) -> T {
        self.basis.iter().enumerate().fold(T::zero(), |acc, (i, &b)| acc + cost[b] * self.rhs(i))
    }

    fn primal(&self, total: usize) -> Vec<T> {
        let mut x = vec![T::zero(); total];
        for (i, &b) in self.basis.iter().enumerate() {
            x[b] = self.rhs(i);
        }
        x
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.tab[r][c];
        for v in self.tab[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.tab[r].clone();
        for (i, row) in self.tab.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != T::zero() {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = T::zero();
            }
        }
        self.basis[r] = c;
    }

    /// Minimises `cost` over columns `< allowed` with Bland's rule.
    fn optimize(&mut self, cost: &[T], allowed: usize) -> Result<Phase> {
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::LpFail(format!("iteration cap {} reached", self.max_iterations)));
            }
            // reduced costs c_j − c_Bᵀ B⁻¹ a_j
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let z = self.basis.iter().enumerate().fold(T::zero(), |acc, (i, &b)| acc + cost[b] * self.tab[i][j]);
                cost[j] - z < -self.eps
            });
            let Some(c) = entering else { return Ok(Phase::Optimal) };
            let mut best: Option<(usize, T)> = None;
            for i in 0..self.tab.len() {
                let a = self.tab[i][c];
                if a > self.eps {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - self.eps || ((ratio - br).abs() <= self.eps && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else { return Ok(Phase::Unbounded) };
            self.pivot(r, c);
            self.iterations += 1;
        }
    }

    /// After phase one, pivots zero-valued artificials out of the basis and
    /// drops rows that turn out to be redundant.
    fn drive_out_artificials(&mut self, art0: usize) {
        let mut i = 0;
        while i < self.tab.len() {
            if self.basis[i] >= art0 {
                let col = (0..art0).find(|&j| self.tab[i][j].abs() > self.eps);
                match col {
                    Some(c) => self.pivot(i, c),
                    None => {
                        self.tab.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }
}
