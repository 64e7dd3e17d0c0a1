//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `max|g| <= tolerance * max(1, |f|)` or the step is below
    /// `tolerance * max(1, max|x|)`.
    pub tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iterations: 1000, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Point {
    a: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Problem<'a, F> {
    f: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Problem<'_, F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        (self.f)(x, g)
    }

    fn probe(&mut self, x0: &[f64], d: &[f64], a: f64) -> Point {
        let x: Vec<f64> = x0.iter().zip(d).map(|(x, d)| x + a * d).collect();
        let mut g = vec![0.0; x.len()];
        let f = self.eval(&x, &mut g);
        let slope = dot(&g, d);
        Point { a, f, slope, x, g }
    }
}

/// Minimizes `f`, which returns the objective and writes its gradient.
pub fn minimize<F>(mut f: F, x0: &[f64], options: LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut problem = Problem { f: &mut f, evaluations: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = problem.eval(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let tol = options.tolerance;

    if n == 0 || !fx.is_finite() {
        return Minimum { x, value: fx, iterations: 0, evaluations: problem.evaluations, converged: n == 0 };
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        if max_abs(&g) <= tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut d = direction(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let a0 = if history.is_empty() { (1.0 / max_abs(&g)).min(1.0) } else { 1.0 };
        iterations += 1;
        let Some(next) = line_search(&mut problem, &x, fx, slope, &d, a0) else {
            converged = max_abs(&g) <= tol.sqrt() * fx.abs().max(1.0);
            break;
        };
        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let step = max_abs(&s);
        x = next.x;
        g = next.g;
        fx = next.f;
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == options.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if step <= tol * max_abs(&x).max(1.0) {
            converged = true;
            break;
        }
    }
    Minimum { x, value: fx, iterations, evaluations: problem.evaluations, converged }
}

fn direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q
}

fn line_search<F>(p: &mut Problem<'_, F>, x0: &[f64], f0: f64, slope0: f64, d: &[f64], a1: f64) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut prev = Point { a: 0.0, f: f0, slope: slope0, x: x0.to_vec(), g: Vec::new() };
    let mut a = a1;
    for i in 0..40 {
        let cur = p.probe(x0, d, a);
        if !cur.f.is_finite() {
            a = 0.5 * (prev.a + a);
            continue;
        }
        if cur.f > f0 + C1 * cur.a * slope0 || (i > 0 && cur.f >= prev.f) {
            return zoom(p, x0, f0, slope0, d, prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(p, x0, f0, slope0, d, cur, prev);
        }
        a *= 2.0;
        prev = cur;
    }
    (prev.a > 0.0).then_some(prev)
}

fn zoom<F>(
    p: &mut Problem<'_, F>,
    x0: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    mut lo: Point,
    mut hi: Point,
) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    for _ in 0..60 {
        let width = (hi.a - lo.a).abs();
        if width <= f64::EPSILON * lo.a.abs().max(1e-300) {
            break;
        }
        let (left, right) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
        let a = match cubic_minimizer(&lo, &hi) {
            Some(a) if a > left + 0.1 * width && a < right - 0.1 * width => a,
            _ => 0.5 * (lo.a + hi.a),
        };
        let cur = p.probe(x0, d, a);
        if !cur.f.is_finite() || cur.f > f0 + C1 * a * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    (lo.a > 0.0 && lo.f < f0).then_some(lo)
}

fn cubic_minimizer(p0: &Point, p1: &Point) -> Option<f64> {
    let d1 = p0.slope + p1.slope - 3.0 * (p0.f - p1.f) / (p0.a - p1.a);
    let disc = d1 * d1 - p0.slope * p1.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (p1.a - p0.a).signum() * disc.sqrt();
    let a = p1.a - (p1.a - p0.a) * (p1.slope + d2 - d1) / (p1.slope - p0.slope + 2.0 * d2);
    a.is_finite().then_some(a)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol * (1.0 + c.abs() + d.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
