//! Bounded scalar minimization: a uniform coarse scan followed by
//! golden-section refinement of the best bracket.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `tol`. Returns `(x_min, f_min)`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a) > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimizes `f` over `[lo, hi]`.
///
/// The interval is scanned at `step`, then the bracket around the best scan
/// point is refined by golden section down to `tol`. The endpoints are
/// always evaluated, so a minimum on the boundary is returned exactly.
pub fn minimize_bounded(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    step: f64,
    tol: f64,
) -> (f64, f64) {
    if hi - lo <= tol {
        let (flo, fhi) = (f(lo), f(hi));
        return if flo <= fhi { (lo, flo) } else { (hi, fhi) };
    }
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    let grid = |i: usize| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 };

    let mut best_i = 0;
    let mut best_f = f(lo);
    for i in 1..=n {
        let v = f(grid(i));
        if v < best_f {
            best_f = v;
            best_i = i;
        }
    }

    let a = grid(best_i.saturating_sub(1));
    let b = grid((best_i + 1).min(n));
    let (x, fx) = golden_section(&f, a, b, tol);
    if fx < best_f {
        (x, fx)
    } else {
        (grid(best_i), best_f)
    }
}
