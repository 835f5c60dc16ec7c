#![allow(dead_code)]

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`, started from 64 panels so narrow peaks are not missed.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            integrate_panel(f, lo, lo + h, tol / panels as f64)
        })
        .sum()
}

fn integrate_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫ θ^k exp(-θ²/2σ² - λθ⁴) dθ` over `[-10, 10]`.
pub fn quartic_moment(k: i32, std: f64, coupling: f64) -> f64 {
    integrate(
        &|t: f64| t.powi(k) * (-t * t / (2.0 * std * std) - coupling * t.powi(4)).exp(),
        -10.0,
        10.0,
        1e-14,
    )
}

/// Every perfect matching of `0..n`, found by trying all permutations and
/// keeping canonical pairings.
pub fn brute_force_matchings(n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    fn permute(k: usize, perm: &mut Vec<usize>, out: &mut Vec<Vec<(usize, usize)>>) {
        if k == perm.len() {
            let mut pairs: Vec<(usize, usize)> = perm
                .chunks(2)
                .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
                .collect();
            pairs.sort();
            if !out.contains(&pairs) {
                out.push(pairs);
            }
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, out);
            perm.swap(k, i);
        }
    }
    permute(0, &mut perm, &mut out);
    out
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
