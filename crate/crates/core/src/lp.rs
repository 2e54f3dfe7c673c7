//! Dense two-phase simplex for small linear programs
//!
//! ```text
//! min cᵀx  s.t.  A_eq x = b_eq,  A_le x ≤ b_le,  x ≥ 0
//! ```
//!
//! with non-negative right-hand sides. Dantzig pricing, switching to Bland's
//! rule after a run of degenerate pivots.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-1 objective {phase1_objective:e})")]
    Infeasible { phase1_objective: f64 },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// Row `coefs · x (= or ≤) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub eq: Vec<Row>,
    pub le: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    /// `rows × (cols + 1)`, last column is the right-hand side.
    t: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.t[pr * w + pc];
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let factor = self.t[r * w + pc];
            if factor != 0.0 {
                let row = &mut self.t[r * w..(r + 1) * w];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Reduced costs of `cost` for the current basis.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for (c, dc) in d.iter_mut().enumerate() {
                    *dc -= cb * self.at(r, c);
                }
            }
        }
        d
    }

    /// Runs the simplex on `cost` restricted to `allowed` columns.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool], max_iter: usize) -> Result<(), LpError> {
        let scale = 1.0 + cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let opt_tol = 1e-10 * scale;
        let mut d = self.reduced_costs(cost);
        let mut degenerate = 0;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..self.cols).find(|&c| allowed[c] && d[c] < -opt_tol)
            } else {
                (0..self.cols)
                    .filter(|&c| allowed[c] && d[c] < -opt_tol)
                    .min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)))
            };
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - 1e-12 * (1.0 + best)
                                || (ratio <= best + 1e-12 * (1.0 + best) && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Err(LpError::Unbounded);
            };
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            let dc = d[pc];
            self.pivot(pr, pc);
            for (c, dv) in d.iter_mut().enumerate() {
                *dv -= dc * self.at(pr, c);
            }
            d[pc] = 0.0;
        }
        Err(LpError::IterationLimit(max_iter))
    }
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for row in self.eq.iter().chain(&self.le) {
            if row.coefs.len() != n {
                return Err(LpError::Malformed(format!("row has {} coefficients, expected {n}", row.coefs.len())));
            }
            if !(row.rhs >= 0.0) || !row.rhs.is_finite() {
                return Err(LpError::Malformed(format!("right-hand side {} must be finite and non-negative", row.rhs)));
            }
            if row.coefs.iter().any(|c| !c.is_finite()) {
                return Err(LpError::Malformed("non-finite coefficient".into()));
            }
        }
        if self.cost.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite cost".into()));
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.check()?;
        let n = self.num_vars();
        let (n_eq, n_le) = (self.eq.len(), self.le.len());
        let rows = n_eq + n_le;
        // Columns: structural, slacks, artificials.
        let cols = n + n_le + n_eq;
        let w = cols + 1;
        let mut t = vec![0.0; rows * w];
        let mut basis = vec![0; rows];
        for (i, row) in self.le.iter().enumerate() {
            let r = i;
            let norm = row.coefs.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1e-300);
            for (c, v) in row.coefs.iter().enumerate() {
                t[r * w + c] = v / norm;
            }
            t[r * w + n + i] = 1.0;
            t[r * w + cols] = row.rhs / norm;
            basis[r] = n + i;
        }
        for (i, row) in self.eq.iter().enumerate() {
            let r = n_le + i;
            let norm = row.coefs.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1e-300);
            for (c, v) in row.coefs.iter().enumerate() {
                t[r * w + c] = v / norm;
            }
            t[r * w + n + n_le + i] = 1.0;
            t[r * w + cols] = row.rhs / norm;
            basis[r] = n + n_le + i;
        }
        let mut tab = Tableau {
            t,
            rows,
            cols,
            basis,
            pivots: 0,
        };
        let max_iter = 50 * (rows + cols) + 1000;
        if n_eq > 0 {
            let mut phase1 = vec![0.0; cols];
            for c in n + n_le..cols {
                phase1[c] = 1.0;
            }
            let allowed = vec![true; cols];
            tab.optimize(&phase1, &allowed, max_iter)?;
            let infeas: f64 = (0..rows).filter(|&r| tab.basis[r] >= n + n_le).map(|r| tab.rhs(r)).sum();
            if infeas > 1e-9 * (1.0 + rows as f64) {
                return Err(LpError::Infeasible { phase1_objective: infeas });
            }
            // Drive zero-level artificials out where possible.
            for r in 0..rows {
                if tab.basis[r] >= n + n_le {
                    if let Some(c) = (0..n + n_le).find(|&c| tab.at(r, c).abs() > 1e-9) {
                        tab.pivot(r, c);
                    }
                }
            }
        }
        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(&self.cost);
        let allowed: Vec<bool> = (0..cols).map(|c| c < n + n_le).collect();
        tab.optimize(&cost, &allowed, max_iter)?;
        let mut x = vec![0.0; n];
        for r in 0..rows {
            if tab.basis[r] < n {
                x[tab.basis[r]] = tab.rhs(r).max(0.0);
            }
        }
        let objective = x.iter().zip(&self.cost).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: tab.pivots,
        })
    }
}
