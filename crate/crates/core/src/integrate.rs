// SPDX-License-Identifier: Apache-2.0
//! Projected backward-Euler integration for the tunneling-gap state.
//!
//! The gap dynamics are integrated with an implicit first-order step. A
//! substep is rejected (and halved) when the Newton iteration fails or when
//! any gap moves more than [`TransientOptions::max_dx`] in one substep; the
//! step grows back towards `max_dt` after every accepted substep.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientOptions {
    /// Upper bound on a single implicit substep (s).
    pub max_dt: f64,
    /// Absolute part of the per-substep gap change bound (m).
    pub max_dx_abs: f64,
    /// Relative part of the per-substep gap change bound (fraction of x).
    pub max_dx_rel: f64,
    /// Floor of the backward-Euler residual tolerance (m); the working
    /// tolerance is 1e-6 of the substep's gap change bound.
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    pub max_halvings: u32,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self {
            max_dt: f64::INFINITY,
            max_dx_abs: 2e-12,
            max_dx_rel: 0.02,
            newton_tol: 1e-18,
            max_newton_iterations: 30,
            max_halvings: 48,
        }
    }
}

impl TransientOptions {
    pub fn with_max_dt(mut self, max_dt: f64) -> Self {
        self.max_dt = max_dt;
        self
    }

    /// Accuracy bound on the change of a gap of size `x` within one substep.
    pub fn max_dx(&self, x: f64) -> f64 {
        self.max_dx_abs + self.max_dx_rel * x
    }
}

/// Bounds applied to every state component after each Newton update.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

/// Advance `x` from `t0` to `t1` with projected backward Euler.
///
/// `rate(t, x)` returns dx/dt. `observe(t, x)` is called after every accepted
/// substep (including the final one at `t1`). Returns the number of accepted
/// substeps.
pub fn advance<const D: usize>(
    x: &mut [f64; D],
    t0: f64,
    t1: f64,
    bounds: Bounds,
    opts: &TransientOptions,
    mut rate: impl FnMut(f64, &[f64; D]) -> Result<[f64; D]>,
    mut observe: impl FnMut(f64, &[f64; D]) -> Result<()>,
) -> Result<usize> {
    if !(t1 >= t0) {
        return Err(Error::Argument(format!(
            "integration interval [{t0}, {t1}] is reversed"
        )));
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(0);
    }
    let mut t = t0;
    let mut h = span.min(opts.max_dt);
    let h_floor = span * 0.5f64.powi(opts.max_halvings as i32);
    let mut accepted = 0;
    while t < t1 {
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        let h_try = if last { remaining } else { h };
        match implicit_substep(x, t + h_try, h_try, bounds, opts, &mut rate) {
            Ok(next) => {
                *x = next;
                t = if last { t1 } else { t + h_try };
                accepted += 1;
                observe(t, x)?;
                h = (h_try * 2.0).min(opts.max_dt);
            }
            Err(err) => {
                h = h_try * 0.5;
                if h < h_floor {
                    return Err(match err {
                        SubstepFailure::Solver(e) => e,
                        SubstepFailure::Newton { residual } => Error::Convergence {
                            iterations: opts.max_newton_iterations,
                            residual,
                        },
                        SubstepFailure::TooLarge { dx } => Error::Convergence {
                            iterations: opts.max_halvings as usize,
                            residual: dx,
                        },
                    });
                }
            }
        }
    }
    Ok(accepted)
}

enum SubstepFailure {
    Solver(Error),
    Newton { residual: f64 },
    TooLarge { dx: f64 },
}

fn implicit_substep<const D: usize>(
    x0: &[f64; D],
    t: f64,
    h: f64,
    bounds: Bounds,
    opts: &TransientOptions,
    rate: &mut impl FnMut(f64, &[f64; D]) -> Result<[f64; D]>,
) -> std::result::Result<[f64; D], SubstepFailure> {
    let mut x = *x0;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_newton_iterations {
        let f = rate(t, &x).map_err(SubstepFailure::Solver)?;
        let mut g = [0.0; D];
        for i in 0..D {
            g[i] = x[i] - x0[i] - h * f[i];
        }
        // A component pinned at a bound is settled when the unconstrained
        // update would push it further out.
        let mut converged = true;
        let mut pinned = [false; D];
        residual = 0.0;
        for i in 0..D {
            pinned[i] = (x[i] <= bounds.lo && g[i] >= 0.0) || (x[i] >= bounds.hi && g[i] <= 0.0);
            if !pinned[i] {
                residual = residual.max(g[i].abs());
                converged &= g[i].abs() <= opts.newton_tol.max(1e-6 * opts.max_dx(x0[i]));
            }
        }
        if converged {
            for i in 0..D {
                let dx = (x[i] - x0[i]).abs();
                if dx > opts.max_dx(x0[i].min(x[i])) {
                    return Err(SubstepFailure::TooLarge { dx });
                }
            }
            return Ok(x);
        }
        // Forward-difference Jacobian of g, perturbing towards the interior.
        let mut jac = [[0.0; D]; D];
        for j in 0..D {
            if pinned[j] {
                continue;
            }
            let scale = x[j].abs().max(bounds.lo);
            let mut delta = 1e-7 * scale;
            if x[j] + delta > bounds.hi {
                delta = -delta;
            }
            let mut xp = x;
            xp[j] += delta;
            let fp = rate(t, &xp).map_err(SubstepFailure::Solver)?;
            for i in 0..D {
                let dfdx = (fp[i] - f[i]) / delta;
                jac[i][j] = if i == j { 1.0 } else { 0.0 } - h * dfdx;
            }
        }
        for i in (0..D).filter(|&i| pinned[i]) {
            jac[i] = [0.0; D];
            jac[i][i] = 1.0;
            g[i] = 0.0;
        }
        // h exceeds the growth time of a self-accelerating mode: the implicit
        // step would jump to a spurious root.
        if (0..D).any(|i| !(jac[i][i] > 0.1)) {
            return Err(SubstepFailure::Newton { residual });
        }
        let step = solve_linear(jac, g).ok_or(SubstepFailure::Newton { residual })?;
        for i in 0..D {
            x[i] = (x[i] - step[i]).clamp(bounds.lo, bounds.hi);
        }
    }
    Err(SubstepFailure::Newton { residual })
}

/// Gaussian elimination with partial pivoting for the (tiny) Newton systems.
#[allow(clippy::needless_range_loop)]
fn solve_linear<const D: usize>(mut a: [[f64; D]; D], mut b: [f64; D]) -> Option<[f64; D]> {
    for col in 0..D {
        let pivot = (col..D).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..D {
            let factor = a[row][col] / a[col][col];
            for k in col..D {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; D];
    for row in (0..D).rev() {
        let mut acc = b[row];
        for k in row + 1..D {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WIDE: Bounds = Bounds { lo: 1e-12, hi: 1.0 };

    #[test]
    fn linear_decay_converges_first_order() {
        let opts = TransientOptions {
            max_dx_abs: 1.0,
            max_dx_rel: 1.0,
            ..Default::default()
        };
        let run = |h: f64| {
            let mut x = [0.5];
            advance(
                &mut x,
                0.0,
                1.0,
                WIDE,
                &opts.with_max_dt(h),
                |_, x| Ok([-x[0]]),
                |_, _| Ok(()),
            )
            .unwrap();
            x[0]
        };
        let exact = 0.5 * (-1.0f64).exp();
        let e1 = (run(0.01) - exact).abs();
        let e2 = (run(0.005) - exact).abs();
        assert!((e1 / e2 - 2.0).abs() < 0.05, "order ratio {}", e1 / e2);
    }

    #[test]
    fn clamps_at_lower_bound() {
        let mut x = [0.5];
        let bounds = Bounds { lo: 0.1, hi: 1.0 };
        advance(
            &mut x,
            0.0,
            10.0,
            bounds,
            &TransientOptions::default(),
            |_, _| Ok([-1.0]),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(x[0], 0.1);
    }

    #[test]
    fn observer_sees_final_time() {
        let mut x = [0.5, 0.5];
        let mut last = 0.0;
        let opts = TransientOptions::default().with_max_dt(0.1);
        advance(
            &mut x,
            0.0,
            1.0,
            WIDE,
            &opts,
            |_, x| Ok([-x[1] * 0.1, x[0] * 0.1]),
            |t, _| {
                last = t;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(last, 1.0);
    }

    #[test]
    fn linear_solver_pivots() {
        let x = solve_linear([[0.0, 1.0], [2.0, 0.0]], [3.0, 4.0]).unwrap();
        assert_eq!(x, [2.0, 3.0]);
        assert!(solve_linear([[0.0, 0.0], [0.0, 0.0]], [1.0, 1.0]).is_none());
    }
}
