//! Derivative-free local minimisers on boxes.

/// Options for [`nelder_mead`].
#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 400, f_tol: 1e-10, initial_step: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Nelder–Mead on the box `[lo, hi]`, with every trial point projected into
/// the box. Non-finite objective values are treated as `+inf`. The returned
/// value is never worse than `f(x0)`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n);
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let width = hi[i] - lo[i];
        let mut p = start.clone();
        let step = opts.initial_step * if width.is_finite() && width > 0.0 { width } else { 1.0 };
        // Step away from the nearer bound so the vertex is not collapsed.
        p[i] = if p[i] + step <= hi[i] { p[i] + step } else { p[i] - step };
        project(&mut p, lo, hi);
        let fp = eval(&p);
        simplex.push((p, fp));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        // Stable sort keeps earlier vertices ahead on ties.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let converged = (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) && worst.is_finite();
        if converged || evals.get() >= opts.max_evals || n == 0 {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> =
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p, lo, hi);
            p
        };
        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(rho);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> =
                        x_best.iter().zip(&vertex.0).map(|(b, v)| b + sigma * (v - b)).collect();
                    project(&mut p, lo, hi);
                    let fp = eval(&p);
                    *vertex = (p, fp);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum { x, f: fx, evals: evals.get() }
}

/// Golden-section search for a minimum of a unimodal `f` on `[lo, hi]`.
/// Returns the best point seen, including the interval ends.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, iters: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut best = (lo, f(lo));
    let fh = f(hi);
    if fh < best.1 {
        best = (hi, fh);
    }
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < best.1 {
            best = (c, fc);
        }
        if fd < best.1 {
            best = (d, fd);
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evals: 4000, f_tol: 1e-14, initial_step: 0.1 };
        let m = nelder_mead(rosen, &[-1.2, 1.0], &[-3.0, -3.0], &[3.0, 3.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let m = nelder_mead(|x| x[0] + x[1], &[0.5, 0.5], &[0.0, 0.2], &[1.0, 1.0], &Default::default());
        assert!(m.x[0] >= 0.0 && m.x[1] >= 0.2);
        assert!((m.f - 0.2).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn nelder_mead_never_worse_than_start() {
        let f = |x: &[f64]| if x[0] == 0.25 { -1.0 } else { x[0].sin() };
        let m = nelder_mead(f, &[0.25], &[0.0], &[1.0], &Default::default());
        assert!(m.f <= -1.0);
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2), -2.0, 5.0, 80);
        assert!((x - 0.3).abs() < 1e-8 && fx < 1e-15);
        let (x, _) = golden_section(|x| x, 1.0, 2.0, 40);
        assert_eq!(x, 1.0);
    }
}
