//! Bracketed scalar root finding and the separable single-equality allocator
//! used by the capacity-coupled blocks.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("no sign change on [{a}, {b}]: f(a) = {fa}, f(b) = {fb}")]
    NoBracket { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("non-finite function value at {x}")]
    NonFinite { x: f64 },
}

/// Brent's method on `[a, b]`. `f(a)` and `f(b)` must differ in sign (or one
/// of them be zero). Stops when the bracket is narrower than
/// `xtol + rtol |x|` or after `max_iter` steps.
pub fn brent(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, xtol: f64, rtol: f64, max_iter: usize) -> Result<f64, RootError> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() {
        return Err(RootError::NonFinite { x: a });
    }
    if !fb.is_finite() {
        return Err(RootError::NonFinite { x: b });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoBracket { a, b, fa, fb });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (xtol + rtol * b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(RootError::NonFinite { x: b });
        }
    }
    Ok(b)
}

/// Root of an increasing function on `(0, ∞)`, searched in log-space starting
/// from `guess > 0` and expanding the bracket geometrically.
pub fn increasing_root_positive(mut g: impl FnMut(f64) -> f64, guess: f64, rtol: f64) -> Result<f64, RootError> {
    let mut h = |t: f64| g(t.exp());
    let t0 = guess.ln();
    let f0 = h(t0);
    if f0 == 0.0 {
        return Ok(guess);
    }
    let dir = if f0 > 0.0 { -1.0 } else { 1.0 };
    let (mut lo, mut hi) = (t0, t0);
    let mut step = 0.5;
    let mut f_far = f0;
    for _ in 0..200 {
        let t = t0 + dir * step;
        f_far = h(t);
        if dir > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if f_far.signum() != f0.signum() || f_far == 0.0 {
            break;
        }
        if dir > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        step *= 2.0;
    }
    if f_far.signum() == f0.signum() && f_far != 0.0 {
        return Err(RootError::NoBracket { a: lo.exp(), b: hi.exp(), fa: f0, fb: f_far });
    }
    brent(&mut h, lo, hi, rtol, 0.0, 200).map(f64::exp)
}

/// Solves `min Σ φ_i(x_i)` subject to `Σ w_i x_i = capacity` for convex
/// separable `φ_i`, given the scaled marginals `g_i(x) = φ_i'(x) / w_i`
/// (increasing in `x`) and their inverses. Returns allocations that meet the
/// capacity exactly up to rounding.
pub fn allocate(
    weights: &[f64],
    capacity: f64,
    marginal: impl Fn(usize, f64) -> f64,
    inverse: impl Fn(usize, f64) -> Result<f64, RootError>,
    tol: f64,
) -> Result<Vec<f64>, RootError> {
    let total: f64 = weights.iter().sum();
    let k = weights.len();
    if k == 1 {
        return Ok(vec![capacity / weights[0]]);
    }
    let even = capacity / total;
    let lo = (0..k).map(|i| marginal(i, even)).fold(f64::INFINITY, f64::min);
    let hi = (0..k).map(|i| marginal(i, capacity / weights[i])).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(RootError::NonFinite { x: if lo.is_finite() { hi } else { lo } });
    }
    if hi <= lo {
        return Ok(vec![even; k]);
    }
    let excess = |lam: f64| -> Result<f64, RootError> {
        let mut used = 0.0;
        for (i, w) in weights.iter().enumerate() {
            used += w * inverse(i, lam)?;
        }
        Ok(used / capacity - 1.0)
    };
    let mut failure = None;
    let lam = brent(
        |lam| match excess(lam) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        lo,
        hi,
        0.0,
        tol,
        300,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let lam = match lam {
        Ok(l) => l,
        // Rounding can leave both ends of a razor-thin bracket on one side.
        Err(RootError::NoBracket { fa, fb, a, b, .. }) => {
            if fa.abs() < fb.abs() {
                a
            } else {
                b
            }
        }
        Err(e) => return Err(e),
    };
    let mut x = (0..k).map(|i| inverse(i, lam)).collect::<Result<Vec<_>, _>>()?;
    let used: f64 = weights.iter().zip(&x).map(|(w, v)| w * v).sum();
    let scale = capacity / used;
    for v in &mut x {
        *v *= scale;
    }
    Ok(x)
}
