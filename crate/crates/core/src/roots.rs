//! Bracketing and bisection for the monotone multiplier equations.

pub const MAX_BISECTION_STEPS: usize = 200;
const MAX_DOUBLINGS: usize = 2048;

/// Doubles `start` until `is_upper(mu)` holds. Returns `None` if the
/// bracket overflows.
pub fn double_until(start: f64, mut is_upper: impl FnMut(f64) -> bool) -> Option<f64> {
    let mut hi = start.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_DOUBLINGS {
        if is_upper(hi) {
            return Some(hi);
        }
        hi *= 2.0;
        if !hi.is_finite() {
            return None;
        }
    }
    None
}

/// Bisection for a root of a function that is positive at `lo` and
/// negative at `hi`. Runs until the bracket stops shrinking in floating
/// point, an exact zero is hit, or the step cap is reached.
///
/// Returns the endpoint with the smaller `|g|` and the number of steps taken.
pub fn bisect(mut g: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, usize) {
    let mut g_lo = g(lo);
    let mut g_hi = g(hi);
    let mut steps = 0;
    while steps < MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        steps += 1;
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return (mid, steps);
        }
        if g_mid > 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    if g_lo.abs() <= g_hi.abs() {
        (lo, steps)
    } else {
        (hi, steps)
    }
}
