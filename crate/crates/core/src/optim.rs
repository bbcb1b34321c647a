//! One-dimensional minimization.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of a unimodal `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `tol` or stops shrinking in
/// floating point. Returns the best interior point seen and its value; the
/// bracket ends themselves are never evaluated.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    if a == b {
        return (a, f(a));
    }
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let width = b - a;
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
        if b - a >= width {
            break;
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola() {
        let (x, fx) = golden_section(|x| (x - 1.25).powi(2) + 3.0, -4.0, 7.0, 1e-10);
        assert!((x - 1.25).abs() < 1e-7);
        assert!((fx - 3.0).abs() < 1e-15);
    }

    #[test]
    fn reversed_and_degenerate_brackets() {
        let (x, _) = golden_section(|x| x.cos(), 4.0, 2.0, 1e-9);
        assert!((x - std::f64::consts::PI).abs() < 1e-7);
        assert_eq!(golden_section(|x| x * x, 0.5, 0.5, 1e-9).0, 0.5);
    }

    #[test]
    fn monotone_goes_to_edge() {
        let (x, _) = golden_section(|x| x, 0.0, 1.0, 1e-9);
        assert!(x < 1e-8);
    }
}
