//! Quadrature and summation helpers shared by the numerical modules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Five-point Gauss-Legendre nodes and weights on [-1, 1].
pub const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
pub const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Kronrod 15-point estimate and the embedded Gauss 7-point error on [a, b].
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// The 15 Kronrod abscissae and weights mapped onto [a, b].
pub fn gk15_rule(a: f64, b: f64) -> [(f64, f64); 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 15];
    for j in 0..7 {
        out[2 * j] = (c - h * XGK[j], h * WGK[j]);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j]);
    }
    out[14] = (c, h * WGK[7]);
    out
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Equal)
    }
}

#[derive(Debug, Clone)]
pub struct Adaptive {
    pub value: f64,
    pub err: f64,
    /// Final partition, sorted.
    pub panels: Vec<(f64, f64)>,
    pub converged: bool,
}

/// Globally adaptive Gauss-Kronrod integration with bisection of the worst panel.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, max_panels: usize) -> Adaptive {
    if a == b {
        return Adaptive { value: 0.0, err: 0.0, panels: vec![], converged: true };
    }
    let (v, e) = gk15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, err: e });
    let mut total_err = e;
    let mut converged = total_err <= abs_tol;
    while !converged && heap.len() < max_panels {
        let worst = heap.pop().expect("non-empty heap");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(f, worst.a, m);
        let (v2, e2) = gk15(f, m, worst.b);
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: m, value: v1, err: e1 });
        heap.push(Panel { a: m, b: worst.b, value: v2, err: e2 });
        if total_err <= abs_tol {
            // the running sum drifts; confirm with a fresh total
            total_err = heap.iter().map(|p| p.err).sum();
            converged = total_err <= abs_tol;
        }
    }
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.sort_by(|p, q| p.a.partial_cmp(&q.a).unwrap_or(Ordering::Equal));
    let value = neumaier(panels.iter().map(|p| p.value));
    let err = panels.iter().map(|p| p.err).sum();
    Adaptive {
        value,
        err,
        panels: panels.iter().map(|p| (p.a, p.b)).collect(),
        converged,
    }
}

/// Compensated (Neumaier) summation.
pub fn neumaier<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Running compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    s: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }
    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Maximize a unimodal-ish function on [a, b] by golden section; returns (x, f(x)).
pub fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Sup of `f` over [a, b]: uniform grid of `n` points, then golden refinement around the best.
pub fn grid_sup<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> (f64, f64) {
    let mut best = (a, f(a));
    let step = (b - a) / n as f64;
    let mut best_j = 0usize;
    for j in 1..=n {
        let x = if j == n { b } else { a + step * j as f64 };
        let v = f(x);
        if v > best.1 {
            best = (x, v);
            best_j = j;
        }
    }
    let lo = a + step * (best_j.saturating_sub(1)) as f64;
    let hi = (a + step * (best_j + 1) as f64).min(b);
    let refined = golden_max(f, lo, hi, 80);
    if refined.1 > best.1 {
        refined
    } else {
        best
    }
}
