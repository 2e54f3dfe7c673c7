//! Replace-one experiments on masked fine-tuning posed as regularized ERM:
//!
//! ```text
//! A(S) = argmin_w (1/k) Σ |w·x_i - y_i| + (1-α) ‖w - w0‖²
//! ```
//!
//! solved through its box-constrained dual by exact coordinate ascent.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc_solver::restart_rng;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("fine-tuned fraction must lie in [0, 1), got {0}")]
    Alpha(f64),
    #[error("invalid task: {0}")]
    Task(String),
    #[error("bound violated: {0}")]
    Violation(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub samples: Vec<Sample>,
    pub w0: Vec<f64>,
    pub alpha: f64,
    pub lipschitz: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn loss(w: &[f64], z: &Sample) -> f64 {
    (dot(w, &z.x) - z.y).abs()
}

impl ToyTask {
    pub fn validate(&self) -> Result<(), LabError> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(LabError::Alpha(self.alpha));
        }
        if self.samples.is_empty() {
            return Err(LabError::Task("at least one sample required".into()));
        }
        let d = self.w0.len();
        for (i, z) in self.samples.iter().enumerate() {
            if z.x.len() != d {
                return Err(LabError::Task(format!("sample {i} has dimension {}, expected {d}", z.x.len())));
            }
            if norm(&z.x) > self.lipschitz * (1.0 + 1e-12) {
                return Err(LabError::Task(format!("sample {i} has ‖x‖ above L = {}", self.lipschitz)));
            }
        }
        Ok(())
    }

    /// `(1/k) Σ |w·x - y| + (1-α) ‖w - w0‖²`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let k = self.samples.len() as f64;
        let fit: f64 = self.samples.iter().map(|z| loss(w, z)).sum::<f64>() / k;
        let reg: f64 = w.iter().zip(&self.w0).map(|(a, b)| (a - b) * (a - b)).sum();
        fit + (1.0 - self.alpha) * reg
    }

    /// One subgradient of [`ToyTask::objective`] (sign(0) taken as 0).
    pub fn subgradient(&self, w: &[f64]) -> Vec<f64> {
        let k = self.samples.len() as f64;
        let c = 1.0 - self.alpha;
        let mut g: Vec<f64> = w.iter().zip(&self.w0).map(|(a, b)| 2.0 * c * (a - b)).collect();
        for z in &self.samples {
            let r = dot(w, &z.x) - z.y;
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (gj, xj) in g.iter_mut().zip(&z.x) {
                *gj += s * xj / k;
            }
        }
        g
    }
}

/// Minimizer of the fine-tuning objective.
///
/// Coordinate ascent on the dual
/// `max_{u ∈ [-1,1]^k} (1/k) Σ u_i (w0·x_i - y_i) - ‖Σ u_i x_i‖² / (4 (1-α) k²)`
/// until the duality gap is negligible, then an exact solve on the active set: samples whose dual variable is strictly
/// inside the box have zero residual at the optimum.
pub fn masked_finetune(task: &ToyTask) -> Result<Vec<f64>, LabError> {
    task.validate()?;
    let k = task.samples.len() as f64;
    let c = 1.0 - task.alpha;
    let d = task.w0.len();
    // w(u) = w0 - scale · v, v = Σ u_i x_i.
    let scale = 1.0 / (2.0 * c * k);
    let mut u = vec![0.0; task.samples.len()];
    let mut v = vec![0.0; d];
    let sq: Vec<f64> = task.samples.iter().map(|z| dot(&z.x, &z.x)).collect();
    let w_of = |v: &[f64]| -> Vec<f64> { task.w0.iter().zip(v).map(|(a, b)| a - scale * b).collect() };
    let dual = |u: &[f64], v: &[f64]| -> f64 {
        let lin: f64 = task.samples.iter().zip(u).map(|(z, ui)| ui * (dot(&task.w0, &z.x) - z.y)).sum();
        lin / k - c * scale * scale * dot(v, v)
    };
    for sweep in 0..100_000 {
        let mut moved = false;
        for (i, z) in task.samples.iter().enumerate() {
            if sq[i] == 0.0 {
                continue;
            }
            let wx: f64 = task.w0.iter().zip(&v).zip(&z.x).map(|((a, b), x)| (a - scale * b) * x).sum();
            let next = (u[i] + (wx - z.y) / (scale * sq[i])).clamp(-1.0, 1.0);
            let delta = next - u[i];
            if delta != 0.0 {
                for (vj, xj) in v.iter_mut().zip(&z.x) {
                    *vj += delta * xj;
                }
                u[i] = next;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        if sweep % 8 == 7 {
            let p = task.objective(&w_of(&v));
            if p - dual(&u, &v) <= 1e-15 * (1.0 + p.abs()) {
                break;
            }
        }
    }
    let w = w_of(&v);
    Ok(match polish(task, &u, &sq, scale) {
        Some(exact) if task.objective(&exact) <= task.objective(&w) => exact,
        _ => w,
    })
}

/// Solves for the interior dual variables with the others held at `±1`.
fn polish(task: &ToyTask, u: &[f64], sq: &[f64], scale: f64) -> Option<Vec<f64>> {
    let d = task.w0.len();
    let free: Vec<usize> = (0..u.len()).filter(|&i| sq[i] > 0.0 && u[i].abs() < 1.0 - 1e-9).collect();
    if free.len() > d {
        return None;
    }
    let mut v_fixed = vec![0.0; d];
    for (i, z) in task.samples.iter().enumerate() {
        if !free.contains(&i) {
            for (vj, xj) in v_fixed.iter_mut().zip(&z.x) {
                *vj += u[i] * xj;
            }
        }
    }
    // scale · Σ_i (x_j·x_i) u_i = x_j·w0 - y_j - scale · x_j·v_fixed for j free.
    let f = free.len();
    let mut a = vec![vec![0.0; f + 1]; f];
    for (r, &j) in free.iter().enumerate() {
        let xj = &task.samples[j].x;
        for (col, &i) in free.iter().enumerate() {
            a[r][col] = scale * dot(xj, &task.samples[i].x);
        }
        a[r][f] = dot(xj, &task.w0) - task.samples[j].y - scale * dot(xj, &v_fixed);
    }
    let sol = gauss(a)?;
    if sol.iter().any(|x| x.abs() > 1.0 + 1e-12) {
        return None;
    }
    let mut v = v_fixed;
    for (&i, &ui) in free.iter().zip(&sol) {
        for (vj, xj) in v.iter_mut().zip(&task.samples[i].x) {
            *vj += ui * xj;
        }
    }
    Some(task.w0.iter().zip(&v).map(|(a, b)| a - scale * b).collect())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            for cc in col..=n {
                a[r][cc] -= factor * a[col][cc];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|cc| a[r][cc] * x[cc]).sum();
        x[r] = (a[r][n] - tail) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `|ℓ(A(S), z_i) - ℓ(A(S^i), z_i)|` where `S^i` swaps sample `i` for `replacement`.
pub fn replace_one_gap(task: &ToyTask, i: usize, replacement: &Sample) -> Result<ReplaceOne, LabError> {
    let w = masked_finetune(task)?;
    let mut swapped = task.clone();
    swapped.samples[i] = replacement.clone();
    let w_i = masked_finetune(&swapped)?;
    let z = &task.samples[i];
    let dist = w.iter().zip(&w_i).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(ReplaceOne {
        gap: (loss(&w, z) - loss(&w_i, z)).abs(),
        param_distance: dist,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaceOne {
    pub gap: f64,
    pub param_distance: f64,
}

/// `2L² / ((1-α) k)`.
pub fn loss_bound(lipschitz: f64, k: usize, alpha: f64) -> f64 {
    2.0 * lipschitz * lipschitz / ((1.0 - alpha) * k as f64)
}

/// `2L / ((1-α) k)`.
pub fn parameter_bound(lipschitz: f64, k: usize, alpha: f64) -> f64 {
    2.0 * lipschitz / ((1.0 - alpha) * k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub trials: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            ks: vec![20, 50, 200],
            alphas: vec![0.0, 0.25, 0.5, 0.9],
            lipschitz: vec![0.5, 1.0, 2.0],
            trials: 200,
            dim: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub k: usize,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub trial: usize,
    pub max_gap: f64,
    pub bound: f64,
    pub ratio: f64,
    #[serde(skip)]
    pub param_distance: f64,
    #[serde(skip)]
    pub param_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub k: usize,
    pub alpha: f64,
    pub lipschitz: f64,
    pub bound: f64,
    pub max_gap: f64,
    pub max_param_distance: f64,
    pub violations: usize,
    pub trials: Vec<TrialRecord>,
}

/// Point uniform in the ball of radius `r`.
fn ball_point(rng: &mut impl Rng, dim: usize, r: f64) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = norm(&p);
        if n <= 1.0 && n > 0.0 {
            return p.into_iter().map(|v| v * r).collect();
        }
    }
}

fn random_sample(rng: &mut impl Rng, dim: usize, lipschitz: f64) -> Sample {
    Sample {
        x: ball_point(rng, dim, lipschitz),
        y: rng.random_range(-2.0..=2.0) * lipschitz,
    }
}

/// Runs `trials` replace-one experiments for every grid cell. Any violation
/// of either bound is a hard error carrying the offending task as JSON.
pub fn verify_as_bound(cfg: &LabConfig) -> Result<Vec<CellReport>, LabError> {
    if cfg.ks.is_empty() || cfg.alphas.is_empty() || cfg.lipschitz.is_empty() || cfg.trials == 0 || cfg.dim == 0 {
        return Err(LabError::Task("grids and trial count must be nonempty".into()));
    }
    let mut cells = Vec::new();
    for &k in &cfg.ks {
        for &alpha in &cfg.alphas {
            for &l in &cfg.lipschitz {
                cells.push((k, alpha, l));
            }
        }
    }
    cells
        .iter()
        .enumerate()
        .map(|(ci, &(k, alpha, l))| run_cell(cfg, ci, k, alpha, l))
        .collect()
}

fn run_cell(cfg: &LabConfig, cell: usize, k: usize, alpha: f64, l: f64) -> Result<CellReport, LabError> {
    let bound = loss_bound(l, k, alpha);
    let pbound = parameter_bound(l, k, alpha);
    let trials: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = restart_rng(cfg.seed.wrapping_add(cell as u64 * 1_000_003), t);
            let task = ToyTask {
                samples: (0..k).map(|_| random_sample(&mut rng, cfg.dim, l)).collect(),
                w0: (0..cfg.dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                alpha,
                lipschitz: l,
            };
            let i = rng.random_range(0..k);
            let z = random_sample(&mut rng, cfg.dim, l);
            let r = replace_one_gap(&task, i, &z)?;
            if r.gap > bound + 1e-8 || r.param_distance > pbound + 1e-8 {
                let dump = serde_json::to_string(&(&task, i, &z)).unwrap_or_default();
                return Err(LabError::Violation(format!(
                    "k={k} alpha={alpha} L={l} trial={t}: gap {} (bound {bound}), distance {} (bound {pbound}); instance {dump}",
                    r.gap, r.param_distance
                )));
            }
            Ok(TrialRecord {
                k,
                alpha,
                lipschitz: l,
                trial: t,
                max_gap: r.gap,
                bound,
                ratio: r.gap / bound,
                param_distance: r.param_distance,
                param_bound: pbound,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(CellReport {
        k,
        alpha,
        lipschitz: l,
        bound,
        max_gap: trials.iter().map(|t| t.max_gap).fold(0.0, f64::max),
        max_param_distance: trials.iter().map(|t| t.param_distance).fold(0.0, f64::max),
        violations: 0,
        trials,
    })
}

/// CSV with columns `k, alpha, L, trial, max_gap, bound, ratio`.
pub fn write_report<W: Write>(out: W, cells: &[CellReport]) -> Result<(), LabError> {
    let mut w = csv::Writer::from_writer(out);
    for cell in cells {
        for t in &cell.trials {
            w.serialize(t)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
