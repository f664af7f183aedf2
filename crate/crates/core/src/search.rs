//! One-dimensional maximization of concave functions: bracketing expansion
//! from the origin, golden-section refinement, and a derivative-sign
//! bisection polish when a derivative is available.

const GOLDEN_TOL: f64 = 1e-10;
const EXPAND_CAP: f64 = 1e12;
const MAX_EXPAND: usize = 400;
const MAX_GOLDEN: usize = 400;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub(crate) struct Maximum {
    pub t: f64,
    pub value: f64,
    pub converged: bool,
    pub iterations: u32,
}

/// Maximizes a concave `h` with `h(0) = 0` over the open interval
/// `(lo, hi)` containing 0. Out-of-domain evaluations must return `-inf`.
/// `dh` is an optional derivative used for a final bisection polish.
pub(crate) fn maximize_concave(
    h: &dyn Fn(f64) -> f64,
    dh: Option<&dyn Fn(f64) -> Option<f64>>,
    lo: f64,
    hi: f64,
) -> Maximum {
    debug_assert!(lo < 0.0 && hi > 0.0);
    let mut iterations = 0u32;
    let mut eval = |t: f64| {
        iterations += 1;
        let v = h(t);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    // Probe both sides of the origin to pick the ascent direction.
    let probe_r = first_inside(1e-2, hi);
    let probe_l = first_inside(1e-2, -lo);
    let hr = eval(probe_r);
    let hl = eval(-probe_l);

    let (mut a, mut b, boundary_capped) = if hr <= 0.0 && hl <= 0.0 {
        // Maximizer is between the probes.
        (-probe_l, probe_r, false)
    } else if hr >= hl {
        let (s_lo, s_hi, capped) = expand_dir(&mut eval, 1.0, probe_r, hr, hi);
        (s_lo, s_hi, capped)
    } else {
        let (s_lo, s_hi, capped) = expand_dir(&mut eval, -1.0, probe_l, hl, -lo);
        (-s_hi, -s_lo, capped)
    };
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }

    // Golden-section refinement.
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1);
    let mut f2 = eval(x2);
    let mut rounds = 0;
    while (b - a) > GOLDEN_TOL && rounds < MAX_GOLDEN {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2);
        }
        rounds += 1;
    }
    let mut t = if f1 >= f2 { x1 } else { x2 };
    let mut value = f1.max(f2);

    // Derivative-sign bisection around the golden solution. Comparisons of h
    // near a flat maximum are roundoff-limited; the derivative zero crossing
    // is not.
    if let Some(dh) = dh {
        if !boundary_capped {
            let width = 1e-6_f64.max(2.0 * GOLDEN_TOL);
            let mut pa = t - width;
            let mut pb = t + width;
            if pa <= lo {
                pa = 0.5 * (lo + t);
            }
            if pb >= hi {
                pb = 0.5 * (hi + t);
            }
            if let (Some(ga), Some(gb)) = (dh(pa), dh(pb)) {
                if ga > 0.0 && gb < 0.0 {
                    for _ in 0..80 {
                        let mid = 0.5 * (pa + pb);
                        match dh(mid) {
                            Some(g) if g > 0.0 => pa = mid,
                            Some(_) => pb = mid,
                            None => break,
                        }
                    }
                    // The sign change brackets the true maximizer; h-value
                    // differences at this scale are pure roundoff, so the
                    // root candidate wins.
                    let cand = 0.5 * (pa + pb);
                    let v = eval(cand);
                    t = cand;
                    value = value.max(v);
                }
            }
        }
    }

    // h(0) = 0 always; never report a worse point than the origin.
    if value < 0.0 {
        t = 0.0;
        value = 0.0;
    }

    Maximum {
        t,
        value,
        converged: !boundary_capped,
        iterations,
    }
}

/// First probe step that stays strictly inside (0, limit).
fn first_inside(step: f64, limit: f64) -> f64 {
    if limit.is_finite() {
        step.min(0.25 * limit)
    } else {
        step
    }
}

/// Walks outward along `dir` in step magnitudes, doubling until `h` turns
/// down or the domain/magnitude cap is hit. `limit` is the positive bound on
/// the magnitude. Returns a bracket in magnitudes plus a boundary flag.
fn expand_dir(
    eval: &mut dyn FnMut(f64) -> f64,
    dir: f64,
    probe: f64,
    f_probe: f64,
    limit: f64,
) -> (f64, f64, bool) {
    let mut prev = 0.0;
    let mut cur = probe;
    let mut f_cur = f_probe;
    for _ in 0..MAX_EXPAND {
        let next = if limit.is_finite() {
            let doubled = cur * 2.0;
            if doubled < 0.5 * (cur + limit) {
                doubled
            } else {
                // Approach the finite boundary geometrically.
                0.5 * (cur + limit)
            }
        } else {
            cur * 2.0
        };
        if next > EXPAND_CAP
            || (limit.is_finite() && (limit - next) <= f64::EPSILON * limit.max(1.0))
        {
            return (prev, next.min(limit), true);
        }
        let f_next = eval(dir * next);
        if f_next < f_cur {
            return (prev, next, false);
        }
        prev = cur;
        cur = next;
        f_cur = f_next;
    }
    (prev, cur, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_maximum() {
        // h(t) = t - t^2, max at 0.5.
        let h = |t: f64| t - t * t;
        let m = maximize_concave(&h, None, f64::NEG_INFINITY, f64::INFINITY);
        assert!((m.t - 0.5).abs() < 1e-8, "t {}", m.t);
        assert!((m.value - 0.25).abs() < 1e-12);
        assert!(m.converged);
    }

    #[test]
    fn maximum_left_of_origin() {
        let h = |t: f64| -t - 2.0 * t * t;
        let m = maximize_concave(&h, None, f64::NEG_INFINITY, f64::INFINITY);
        assert!((m.t + 0.25).abs() < 1e-8, "t {}", m.t);
    }

    #[test]
    fn far_maximum_right() {
        let h = |t: f64| 100.0 * t - t * t;
        let m = maximize_concave(&h, None, f64::NEG_INFINITY, f64::INFINITY);
        assert!((m.t - 50.0).abs() < 5e-6, "t {}", m.t);
    }

    #[test]
    fn maximum_at_origin() {
        let h = |t: f64| -t * t;
        let m = maximize_concave(&h, None, f64::NEG_INFINITY, f64::INFINITY);
        assert!(m.t.abs() < 1e-6);
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn derivative_polish_tightens() {
        let h = |t: f64| 3.0 * t - t * t;
        let dh = |t: f64| Some(3.0 - 2.0 * t);
        let m = maximize_concave(&h, Some(&dh), f64::NEG_INFINITY, f64::INFINITY);
        assert!((m.t - 1.5).abs() < 1e-10, "t {}", m.t);
    }

    #[test]
    fn respects_finite_domain() {
        // Steep near the boundary t = 2: max stays interior.
        let h = |t: f64| {
            if t >= 2.0 {
                f64::NEG_INFINITY
            } else {
                4.0 * t + (2.0 - t).ln() - 2.0f64.ln()
            }
        };
        let m = maximize_concave(&h, None, f64::NEG_INFINITY, 2.0);
        // h'(t) = 4 - 1/(2-t) = 0 at t = 1.75.
        assert!((m.t - 1.75).abs() < 1e-7, "t {}", m.t);
        assert!(m.converged);
    }

    #[test]
    fn unbounded_ascent_flags_unconverged() {
        let h = |t: f64| t;
        let m = maximize_concave(&h, None, f64::NEG_INFINITY, f64::INFINITY);
        assert!(!m.converged);
    }
}

