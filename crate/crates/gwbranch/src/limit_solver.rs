//! The operator Psi, the backwards integral equation for u(s, t, lam), its
//! Picard and Runge-Kutta solvers, and Gronwall/Lipschitz certificates.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{const_c3, levy_integral_tol, IntegrandKind, LevyMeasure, LevyRule, LimitTriplet, MonotoneMeasure};
use crate::quad::{KahanSum, GL5_W, GL5_X};

/// Something that can be integrated against the triplet: a cadlag function
/// on a closed interval, smooth between consecutive `nodes`.
pub trait MeshFunction {
    fn domain(&self) -> (f64, f64);
    /// Right-continuous value.
    fn value(&self, s: f64) -> f64;
    /// Sorted times between which the function is smooth.
    fn nodes(&self) -> Vec<f64>;
}

/// Constant function on [lo, hi].
#[derive(Debug, Clone, Copy)]
pub struct ConstantFn {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MeshFunction for ConstantFn {
    fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
    fn value(&self, _s: f64) -> f64 {
        self.value
    }
    fn nodes(&self) -> Vec<f64> {
        vec![self.lo, self.hi]
    }
}

/// A closure sampled on a uniform grid plus extra breakpoints.
pub struct SampledFn<F: Fn(f64) -> f64> {
    pub f: F,
    pub lo: f64,
    pub hi: f64,
    pub panels: usize,
    pub breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64> MeshFunction for SampledFn<F> {
    fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
    fn value(&self, s: f64) -> f64 {
        (self.f)(s)
    }
    fn nodes(&self) -> Vec<f64> {
        let h = (self.hi - self.lo) / self.panels as f64;
        let mut v: Vec<f64> = (0..=self.panels).map(|k| self.lo + h * k as f64).collect();
        v.extend(self.breaks.iter().copied().filter(|&b| b > self.lo && b < self.hi));
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Target number of panels on [s0, t]; the step is (t - s0) / panels.
    pub panels: usize,
    /// Picard stopping tolerance on the sup-norm change.
    pub tol: f64,
    pub max_iter: usize,
    /// Collapse floor (scaled by min(1, lam)).
    pub floor: f64,
    /// Run the independent Runge-Kutta sweep.
    pub ode_check: bool,
    /// Compute the residual with Psi in the (beta, h) form.
    pub residual: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { panels: 2048, tol: 1e-10, max_iter: 200, floor: 1e-8, ode_check: true, residual: true }
    }
}

/// Nodes of one constant-rate segment [lo, hi]; values are continuous inside.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl Segment {
    fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    fn time(&self, j: usize) -> f64 {
        if j + 1 == self.values.len() {
            self.hi
        } else {
            self.lo + self.h() * j as f64
        }
    }

    /// Cubic Lagrange interpolation on the four nearest nodes.
    fn interp(&self, s: f64) -> f64 {
        let m = self.values.len() - 1;
        let h = self.h();
        let x = ((s - self.lo) / h).clamp(0.0, m as f64);
        let j = (x.floor() as usize).min(m - 1);
        let k0 = if j == 0 { 0 } else if j + 2 > m { m - 3 } else { j - 1 };
        let xs = [k0 as f64, k0 as f64 + 1.0, k0 as f64 + 2.0, k0 as f64 + 3.0];
        let mut acc = 0.0;
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (x - xs[b]) / (xs[a] - xs[b]);
                }
            }
            acc += w * self.values[k0 + a];
        }
        acc
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceSolution {
    pub t: f64,
    pub lambda: f64,
    /// Left end of the interval on which the solution is reported.
    pub domain_start: f64,
    /// Set when the solution collapsed below the floor at this time.
    pub bottleneck: Option<f64>,
    /// Ascending in time; the last one ends at t.
    pub segments: Vec<Segment>,
    /// sup over the mesh of |u(s) - lam - Psi(u)((s,t])|
    pub residual: f64,
    /// Total Picard sweeps over all sub-intervals.
    pub iterations: usize,
    /// sup |Picard - Runge-Kutta| on the mesh.
    pub ode_discrepancy: Option<f64>,
    /// Gronwall bound R (1 + pi e^pi) with pi = c3 mu~((s0, t]).
    pub error_bound: f64,
    pub warnings: Vec<String>,
}

impl LaplaceSolution {
    fn locate(&self, s: f64, right: bool) -> Option<&Segment> {
        self.segments.iter().find(|g| if right { g.lo <= s && s < g.hi } else { g.lo < s && s <= g.hi })
    }

    fn check(&self, s: f64) -> Result<()> {
        if s > self.t || s.is_nan() {
            return Err(Error::InvalidInput(format!("s = {s} lies after t = {}", self.t)));
        }
        if s < self.domain_start {
            return Err(match self.bottleneck {
                Some(b) => Error::PossibleBottleneck { domain_start: b },
                None => Error::MeshMismatch(format!("s = {s} is left of the solved range [{}, {}]", self.domain_start, self.t)),
            });
        }
        Ok(())
    }

    /// u(s) (right-continuous).
    pub fn value_at(&self, s: f64) -> Result<f64> {
        self.check(s)?;
        if s == self.t {
            return Ok(self.lambda);
        }
        match self.locate(s, true) {
            Some(g) => Ok(g.interp(s)),
            None => Err(Error::MeshMismatch(format!("no segment holds s = {s}"))),
        }
    }

    /// u(s-).
    pub fn value_left(&self, s: f64) -> Result<f64> {
        self.check(s)?;
        if s == self.domain_start {
            return self.value_at(s);
        }
        match self.locate(s, false) {
            Some(g) => Ok(g.interp(s)),
            None => Err(Error::MeshMismatch(format!("no segment holds s- = {s}"))),
        }
    }

    /// Mesh rows (s, u(s-), u(s)) ascending.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        for (k, g) in self.segments.iter().enumerate() {
            let m = g.values.len() - 1;
            for j in 0..m {
                let s = g.time(j);
                let right = g.values[j];
                let left = if j == 0 && k > 0 { *self.segments[k - 1].values.last().unwrap() } else { right };
                out.push((s, left, right));
            }
        }
        if let Some(g) = self.segments.last() {
            out.push((self.t, *g.values.last().unwrap(), self.lambda));
        } else {
            out.push((self.t, self.lambda, self.lambda));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,u_left,u_right\n");
        for (x, l, r) in self.rows() {
            s.push_str(&format!("{x},{l},{r}\n"));
        }
        s
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "t": self.t,
            "lambda": self.lambda,
            "residual": self.residual,
            "iterations": self.iterations,
            "warnings": self.warnings,
            "domain_start": self.domain_start,
            "ode_discrepancy": self.ode_discrepancy,
            "error_bound": self.error_bound,
        })
    }

    pub fn min_value(&self) -> f64 {
        self.segments.iter().flat_map(|g| g.values.iter().copied()).fold(self.lambda, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.segments.iter().flat_map(|g| g.values.iter().copied()).fold(self.lambda, f64::max)
    }
}

impl MeshFunction for LaplaceSolution {
    fn domain(&self) -> (f64, f64) {
        (self.domain_start, self.t)
    }
    fn value(&self, s: f64) -> f64 {
        self.value_at(s).unwrap_or(f64::NAN)
    }
    fn nodes(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.segments.iter().flat_map(|g| (0..g.values.len()).map(move |j| g.time(j))).collect();
        v.push(self.t);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// u_left = u_right + delta_alpha u_right + integral of g(x, u_right) F_atom(dx).
pub fn jump_relation(u_right: f64, delta_alpha: f64, f_atom: Option<&LevyMeasure>) -> Result<f64> {
    if !(u_right >= 0.0) {
        return Err(Error::InvalidInput(format!("u_right = {u_right} must be >= 0")));
    }
    if delta_alpha < -1.0 {
        return Err(Error::InvalidInput(format!("delta_alpha = {delta_alpha} is below -1")));
    }
    let jump = match f_atom {
        Some(f) if !f.is_zero() => levy_integral_tol(f, u_right, IntegrandKind::G, 1e-13)?,
        _ => 0.0,
    };
    Ok(u_right + delta_alpha * u_right + jump)
}

/// Rates of the triplet on one open segment.
struct SegmentLaw {
    a: f64,
    b_tilde: f64,
    f: LevyMeasure,
    rule: LevyRule,
    rule_umax: f64,
}

impl SegmentLaw {
    fn new(trip: &LimitTriplet, y: f64, u_max: f64, tol: f64) -> Self {
        let f = trip.nu.rate_measure_at(y);
        let rule = if f.is_zero() { LevyRule::default() } else { LevyRule::compile(&f, u_max, tol) };
        SegmentLaw { a: trip.alpha.rate_at(y), b_tilde: trip.tilde_beta_rate_at(y), f, rule, rule_umax: u_max }
    }

    fn ensure_range(&mut self, u: f64, tol: f64) {
        if u > self.rule_umax && !self.f.is_zero() {
            self.rule_umax = 4.0 * u;
            self.rule = LevyRule::compile(&self.f, self.rule_umax, tol);
        }
    }

    /// a u - b~ u^2 + integral of g(x, u) F(dx)
    fn rhs(&self, u: f64) -> f64 {
        let levy = if self.rule.is_empty() { 0.0 } else { self.rule.eval(u.max(0.0), IntegrandKind::G) };
        self.a * u - self.b_tilde * u * u + levy
    }

    fn lipschitz_estimate(&self, u: f64) -> f64 {
        let u1 = 0.5 * u;
        let u2 = 2.0 * u + 1e-6;
        let secant = ((self.rhs(u2) - self.rhs(u1)) / (u2 - u1)).abs();
        2.0 * (secant + self.a.abs() + 2.0 * self.b_tilde.abs() * u2) + 1e-12
    }
}

fn panel_integral(f: &[f64], p: usize, h: f64) -> f64 {
    let m = f.len() - 1;
    let c = h / 24.0;
    if p == 0 {
        c * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    } else if p == m - 1 {
        c * (f[m - 3] - 5.0 * f[m - 2] + 19.0 * f[m - 1] + 9.0 * f[m])
    } else {
        c * (-f[p - 1] + 13.0 * f[p] + 13.0 * f[p + 1] - f[p + 2])
    }
}

/// Picard iteration u(y) = u_r + integral_y^hi rhs(u) on m >= 3 uniform panels.
fn picard_chunk(law: &SegmentLaw, lo: f64, hi: f64, m: usize, u_r: f64, tol: f64, max_iter: usize) -> Option<(Vec<f64>, usize)> {
    let h = (hi - lo) / m as f64;
    let mut u = vec![u_r; m + 1];
    let mut fv = vec![0.0; m + 1];
    let mut last_change = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=max_iter {
        for j in 0..=m {
            fv[j] = law.rhs(u[j]);
            if !fv[j].is_finite() {
                return None;
            }
        }
        let mut acc = 0.0;
        let mut change: f64 = 0.0;
        for p in (0..m).rev() {
            acc += panel_integral(&fv, p, h);
            let new = u_r + acc;
            change = change.max((new - u[p]).abs() / new.abs().max(1.0));
            u[p] = new;
        }
        if !change.is_finite() {
            return None;
        }
        if change <= tol {
            return Some((u, it));
        }
        if change > last_change {
            growth += 1;
            if growth >= 5 {
                return None;
            }
        }
        last_change = change;
    }
    None
}

/// Classical RK4 from hi down to lo on m uniform panels; returns node values.
fn rk4_chunk(law: &SegmentLaw, lo: f64, hi: f64, m: usize, u_r: f64) -> Vec<f64> {
    let h = (hi - lo) / m as f64;
    let mut u = vec![0.0; m + 1];
    u[m] = u_r;
    // w(r) = u(hi - r), dw/dr = rhs(w)
    for j in (0..m).rev() {
        let w = u[j + 1];
        let k1 = law.rhs(w);
        let k2 = law.rhs(w + 0.5 * h * k1);
        let k3 = law.rhs(w + 0.5 * h * k2);
        let k4 = law.rhs(w + h * k3);
        u[j] = w + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u
}

struct Cuts {
    /// s0 = c_0 < c_1 < ... < c_K = t
    points: Vec<f64>,
    panels: Vec<usize>,
}

fn build_cuts(trip: &LimitTriplet, s0: f64, t: f64, panels: usize) -> Cuts {
    let mut points = vec![s0];
    points.extend(trip.cut_points(s0, t));
    points.push(t);
    let h = (t - s0) / panels.max(1) as f64;
    let panels = points.windows(2).map(|w| (((w[1] - w[0]) / h - 1e-9).ceil() as usize).max(3)).collect();
    Cuts { points, panels }
}

fn apply_atom(trip: &LimitTriplet, c: f64, u: f64) -> Result<f64> {
    let da = trip.alpha.atom_at(c);
    let g = trip.nu.atom_at(c);
    if da == 0.0 && g.is_none() {
        return Ok(u);
    }
    jump_relation(u, da, g)
}

/// Solve u(s, t, lam) on [0, t].
pub fn solve_u(trip: &LimitTriplet, t: f64, lam: f64, cfg: &SolverConfig) -> Result<LaplaceSolution> {
    solve_u_from(trip, 0.0, t, lam, cfg)
}

/// Solve u(s, t, lam) on [s0, t] by Picard iteration on constant-rate pieces,
/// with atoms applied exactly.
pub fn solve_u_from(trip: &LimitTriplet, s0: f64, t: f64, lam: f64, cfg: &SolverConfig) -> Result<LaplaceSolution> {
    if !(s0 >= 0.0 && t >= s0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 <= s0 <= t, got s0 = {s0}, t = {t}")));
    }
    if !(lam >= 0.0 && lam.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lam}")));
    }
    if !(cfg.tol > 0.0) || cfg.panels == 0 {
        return Err(Error::InvalidInput("tolerance and panel count must be positive".into()));
    }
    let mut sol = LaplaceSolution {
        t,
        lambda: lam,
        domain_start: s0,
        bottleneck: None,
        segments: Vec::new(),
        residual: 0.0,
        iterations: 0,
        ode_discrepancy: None,
        error_bound: 0.0,
        warnings: Vec::new(),
    };
    if t == s0 {
        return Ok(sol);
    }
    let cuts = build_cuts(trip, s0, t, cfg.panels);
    let floor = cfg.floor * lam.min(1.0);
    let levy_tol = (cfg.tol * 1e-2).max(1e-13);
    let mut u_r = lam;
    let mut segs_rev: Vec<Segment> = Vec::new();
    let k_last = cuts.points.len() - 1;
    'outer: for k in (0..k_last).rev() {
        let (lo, hi) = (cuts.points[k], cuts.points[k + 1]);
        u_r = apply_atom(trip, hi, u_r)?;
        if !(u_r >= floor) || lam == 0.0 {
            if lam > 0.0 {
                sol.domain_start = hi;
                sol.bottleneck = Some(hi);
                break 'outer;
            }
        }
        let mut law = SegmentLaw::new(trip, 0.5 * (lo + hi), 4.0 * u_r.max(1.0), levy_tol);
        let m = cuts.panels[k];
        let hseg = (hi - lo) / m as f64;
        let mut values = vec![0.0; m + 1];
        values[m] = u_r;
        let mut right = m;
        let mut chunk = m;
        while right > 0 {
            law.ensure_range(values[right], levy_tol);
            let l_est = law.lipschitz_estimate(values[right].max(1e-12));
            let fit = ((0.5 / l_est) / hseg).floor() as usize;
            chunk = chunk.min(fit.max(3)).min(right);
            if right - chunk > 0 && right - chunk < 3 {
                chunk = right;
            }
            if chunk < 3 {
                chunk = right;
            }
            let left = right - chunk;
            let c_lo = lo + hseg * left as f64;
            let c_hi = if right == m { hi } else { lo + hseg * right as f64 };
            match picard_chunk(&law, c_lo, c_hi, chunk, values[right], cfg.tol, cfg.max_iter) {
                Some((vals, it)) => {
                    sol.iterations += it;
                    values[left..=right].copy_from_slice(&vals);
                    if let Some(j) = (left..right).rev().find(|&j| !(values[j] >= floor)) {
                        let at = lo + hseg * j as f64;
                        sol.domain_start = at;
                        sol.bottleneck = Some(at);
                        segs_rev.push(Segment { lo: at, hi, values: values[j..].to_vec() });
                        break 'outer;
                    }
                    if values[left] > 1e300 {
                        return Err(Error::NoConvergence { iterations: it, change: f64::INFINITY });
                    }
                    right = left;
                    chunk = chunk.max(3);
                }
                None => {
                    if chunk <= 3 {
                        return Err(Error::NoConvergence { iterations: cfg.max_iter, change: f64::NAN });
                    }
                    chunk = (chunk / 2).max(3);
                }
            }
        }
        u_r = values[0];
        segs_rev.push(Segment { lo, hi, values });
    }
    segs_rev.reverse();
    sol.segments = segs_rev;
    if let Some(b) = sol.bottleneck {
        sol.warnings.push(format!("PossibleBottleneck: u fell below the floor at s = {b}; solution reported on [{b}, {t}] only"));
    }
    if cfg.ode_check {
        let ode = rk4_sweep(trip, &cuts, lam, sol.domain_start, levy_tol)?;
        let mut worst: f64 = 0.0;
        for (g, o) in sol.segments.iter().zip(ode.iter().rev().take(sol.segments.len()).rev()) {
            if g.values.len() == o.values.len() {
                for (a, b) in g.values.iter().zip(&o.values) {
                    worst = worst.max((a - b).abs());
                }
            } else {
                // truncated segment: compare on the overlapping right part
                let off = o.values.len() - g.values.len();
                for (a, b) in g.values.iter().zip(&o.values[off..]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        sol.ode_discrepancy = Some(worst);
        if worst > 10.0 * cfg.tol {
            sol.warnings.push(format!("Picard and Runge-Kutta sweeps differ by {worst:e} > 10 tol"));
        }
    }
    if cfg.residual && !sol.segments.is_empty() {
        let r = solution_residual(&sol, trip, levy_tol)?;
        sol.residual = r;
        let eta = sol.min_value();
        let big_t = 2.0 * sol.max_value();
        let pi = if eta > 0.0 && big_t > eta {
            const_c3(eta, big_t) * trip.mu_tilde(sol.domain_start, t)
        } else {
            f64::INFINITY
        };
        sol.error_bound = if r == 0.0 { 0.0 } else { r * (1.0 + pi * pi.exp()) };
        if r > 10.0 * cfg.tol {
            sol.warnings.push(format!("residual {r:e} exceeds 10 tol"));
        }
    }
    Ok(sol)
}

/// Independent RK4 sweep on the same cut points and panels.
fn rk4_sweep(trip: &LimitTriplet, cuts: &Cuts, lam: f64, stop: f64, levy_tol: f64) -> Result<Vec<Segment>> {
    let mut u_r = lam;
    let mut out = Vec::new();
    let k_last = cuts.points.len() - 1;
    for k in (0..k_last).rev() {
        let (lo, hi) = (cuts.points[k], cuts.points[k + 1]);
        if hi <= stop {
            break;
        }
        u_r = apply_atom(trip, hi, u_r)?;
        let mut law = SegmentLaw::new(trip, 0.5 * (lo + hi), 4.0 * u_r.max(1.0), levy_tol);
        law.ensure_range(u_r, levy_tol);
        let values = rk4_chunk(&law, lo, hi, cuts.panels[k], u_r);
        u_r = values[0];
        out.push(Segment { lo, hi, values });
    }
    out.reverse();
    Ok(out)
}

/// Solve with the Runge-Kutta sweep alone (no Picard).
pub fn solve_u_ode(trip: &LimitTriplet, t: f64, lam: f64, cfg: &SolverConfig) -> Result<LaplaceSolution> {
    let cuts = build_cuts(trip, 0.0, t, cfg.panels);
    let levy_tol = (cfg.tol * 1e-2).max(1e-13);
    let segments = if t > 0.0 { rk4_sweep(trip, &cuts, lam, 0.0, levy_tol)? } else { Vec::new() };
    let mut sol = LaplaceSolution {
        t,
        lambda: lam,
        domain_start: 0.0,
        bottleneck: None,
        segments,
        residual: 0.0,
        iterations: 0,
        ode_discrepancy: None,
        error_bound: 0.0,
        warnings: Vec::new(),
    };
    if cfg.residual && !sol.segments.is_empty() {
        sol.residual = solution_residual(&sol, trip, levy_tol)?;
    }
    Ok(sol)
}

/// Psi(f)((p, t]) for every p in `points`, computed in the (beta, h) form.
fn psi_suffix(f: &dyn MeshFunction, trip: &LimitTriplet, s: f64, t: f64, levy_tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d0, d1) = f.domain();
    if s < d0 - 1e-14 || t > d1 + 1e-14 || s > t {
        return Err(Error::MeshMismatch(format!("interval ({s}, {t}] is not inside the mesh domain [{d0}, {d1}]")));
    }
    let mut pts: Vec<f64> = f.nodes().into_iter().filter(|&x| x >= s && x <= t).collect();
    pts.push(s);
    pts.push(t);
    pts.extend(trip.cut_points(s, t));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    // contribution of each panel (pts[k], pts[k+1]) including atoms at pts[k+1]
    let mut contrib = vec![0.0; pts.len()];
    for k in 0..pts.len() - 1 {
        let (a, b) = (pts[k], pts[k + 1]);
        let mid = 0.5 * (a + b);
        let ar = trip.alpha.rate_at(mid);
        let br = trip.beta.rate_at(mid);
        let fmeas = trip.nu.rate_measure_at(mid);
        let half = 0.5 * (b - a);
        let mut acc = KahanSum::default();
        for q in 0..5 {
            let y = mid + half * GL5_X[q];
            let u = f.value(y);
            let levy = if fmeas.is_zero() { 0.0 } else { levy_integral_tol(&fmeas, u.max(0.0), IntegrandKind::H, levy_tol)? };
            acc.add(GL5_W[q] * half * (ar * u - br * u * u + levy));
        }
        let mut c = acc.value();
        let da = trip.alpha.atom_at(b);
        let db = trip.beta.atom_at(b);
        let g = trip.nu.atom_at(b);
        if da != 0.0 || db != 0.0 || g.is_some() {
            let u = f.value(b);
            let levy = match g {
                Some(m) if !m.is_zero() => levy_integral_tol(m, u.max(0.0), IntegrandKind::H, levy_tol)?,
                _ => 0.0,
            };
            c += da * u - db * u * u + levy;
        }
        contrib[k + 1] = c;
    }
    // suffix[k] = Psi((pts[k], t])
    let mut suffix = vec![0.0; pts.len()];
    let mut acc = KahanSum::default();
    for k in (0..pts.len() - 1).rev() {
        acc.add(contrib[k + 1]);
        suffix[k] = acc.value();
    }
    Ok((pts, suffix))
}

/// Psi(f)((s, t]) = int f dalpha - int f^2 dbeta + int h(x, f(y)) nu(dx dy).
pub fn psi_operator(f: &dyn MeshFunction, trip: &LimitTriplet, s: f64, t: f64) -> Result<f64> {
    let (_, suffix) = psi_suffix(f, trip, s, t, 1e-12)?;
    Ok(suffix[0])
}

fn solution_residual(sol: &LaplaceSolution, trip: &LimitTriplet, levy_tol: f64) -> Result<f64> {
    let (pts, suffix) = psi_suffix(sol, trip, sol.domain_start, sol.t, levy_tol)?;
    let mut worst: f64 = 0.0;
    for (p, psi) in pts.iter().zip(&suffix) {
        let u = sol.value_at(*p)?;
        worst = worst.max((u - sol.lambda - psi).abs());
    }
    Ok(worst)
}

/// exp(-x u(s, t_1, lam_1 + u(t_1, t_2, lam_2 + ...))).
pub fn fdd_laplace(trip: &LimitTriplet, s: f64, pairs: &[(f64, f64)], x: f64, cfg: &SolverConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("need at least one (t, lambda) pair".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidInput("initial state x must be >= 0".into()));
    }
    if pairs[0].0 < s || pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidInput("times must satisfy s <= t_1 < ... < t_I".into()));
    }
    if pairs.iter().any(|p| !(p.1 >= 0.0)) {
        return Err(Error::InvalidInput("lambdas must be >= 0".into()));
    }
    let quiet = SolverConfig { ode_check: false, residual: false, ..*cfg };
    let mut v = pairs.last().unwrap().1;
    for k in (0..pairs.len()).rev() {
        let start = if k == 0 { s } else { pairs[k - 1].0 };
        let u = if v == 0.0 {
            0.0
        } else {
            let sol = solve_u_from(trip, start, pairs[k].0, v, &quiet)?;
            sol.value_at(start)?
        };
        v = if k == 0 { u } else { pairs[k - 1].1 + u };
    }
    Ok((-x * v).exp())
}

/// Backwards Gronwall bound R(s) + e^{pi(s,t]} int_{(s,t]} R dpi.
pub fn gronwall_bound(r: &dyn MeshFunction, pi: &MonotoneMeasure, s: f64, t: f64) -> Result<f64> {
    let (d0, d1) = r.domain();
    if s < d0 || t > d1 || s > t {
        return Err(Error::MeshMismatch(format!("({s}, {t}] is outside the domain of R")));
    }
    let mut pts: Vec<f64> = r.nodes().into_iter().filter(|&x| x > s && x < t).collect();
    pts.extend(pi.breakpoints_in(s, t));
    pts.push(s);
    pts.push(t);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut acc = KahanSum::default();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let rate = pi.rate_at(0.5 * (a + b));
        if rate != 0.0 {
            let half = 0.5 * (b - a);
            for q in 0..5 {
                acc.add(GL5_W[q] * half * rate * r.value(0.5 * (a + b) + half * GL5_X[q]));
            }
        }
    }
    for &(tau, m) in pi.atoms_in(s, t) {
        acc.add(m * r.value(tau));
    }
    Ok(r.value(s) + pi.mass(s, t).exp() * acc.value())
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub eta: f64,
    pub big_t: f64,
    pub c3: f64,
    /// c3 int |u1 - u2| dmu~ over (s, t]
    pub bound: f64,
    /// |Psi(u1) - Psi(u2)| over (s, t]
    pub psi_difference: f64,
    pub subintervals_checked: usize,
    pub violations: usize,
    pub max_ratio: f64,
}

fn weighted_abs_diff(u1: &dyn MeshFunction, u2: &dyn MeshFunction, trip: &LimitTriplet, s: f64, t: f64) -> f64 {
    let mut pts: Vec<f64> = u1.nodes().into_iter().chain(u2.nodes()).filter(|&x| x > s && x < t).collect();
    pts.extend(trip.cut_points(s, t));
    pts.push(s);
    pts.push(t);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut acc = KahanSum::default();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let dens = trip.alpha.rate_at(mid).abs() + trip.beta.rate_at(mid) + trip.nu.x2_rate_at(mid);
        if dens != 0.0 {
            let half = 0.5 * (b - a);
            for q in 0..5 {
                let y = mid + half * GL5_X[q];
                acc.add(GL5_W[q] * half * dens * (u1.value(y) - u2.value(y)).abs());
            }
        }
    }
    for tau in trip.atom_times(s, t) {
        let m = trip.alpha.atom_at(tau).abs() + trip.beta.atom_at(tau) + trip.nu.atom_at(tau).map(|g| g.x2_mass()).unwrap_or(0.0);
        acc.add(m * (u1.value(tau) - u2.value(tau)).abs());
    }
    acc.value()
}

fn inf_sup(u: &dyn MeshFunction, s: f64, t: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let pts: Vec<f64> = u.nodes().into_iter().filter(|&x| x >= s && x <= t).chain([s, t]).collect();
    for w in pts.windows(2) {
        for k in 0..=4 {
            let y = w[0] + (w[1] - w[0]) * k as f64 / 4.0;
            let v = u.value(y);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Lipschitz bound on Psi and its check on 20 seeded random subintervals.
pub fn lipschitz_certificate(
    trip: &LimitTriplet,
    u1: &dyn MeshFunction,
    u2: &dyn MeshFunction,
    s: f64,
    t: f64,
) -> Result<LipschitzReport> {
    let (i1, s1) = inf_sup(u1, s, t);
    let (i2, s2) = inf_sup(u2, s, t);
    if !(i1 > 0.0 && i2 > 0.0) {
        return Err(Error::NonPositiveInput(format!("infima {i1} and {i2} must be > 0")));
    }
    let eta = i1.min(i2);
    let big_t = s1 + s2;
    let c3 = const_c3(eta, big_t);
    let bound = c3 * weighted_abs_diff(u1, u2, trip, s, t);
    let psi_difference = (psi_operator(u1, trip, s, t)? - psi_operator(u2, trip, s, t)?).abs();
    let mut rng = StdRng::seed_from_u64(0x11b5);
    let mut violations = 0;
    let mut max_ratio: f64 = if bound > 0.0 { psi_difference / bound } else { 0.0 };
    if psi_difference > bound * (1.0 + 1e-9) + 1e-12 {
        violations += 1;
    }
    let checks = 20;
    for _ in 0..checks {
        let x: f64 = rng.random_range(s..=t);
        let y: f64 = rng.random_range(s..=t);
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        let d = (psi_operator(u1, trip, a, b)? - psi_operator(u2, trip, a, b)?).abs();
        let bd = c3 * weighted_abs_diff(u1, u2, trip, a, b);
        if d > bd * (1.0 + 1e-9) + 1e-12 {
            violations += 1;
        }
        if bd > 0.0 {
            max_ratio = max_ratio.max(d / bd);
        }
    }
    Ok(LipschitzReport { eta, big_t, c3, bound, psi_difference, subintervals_checked: checks + 1, violations, max_ratio })
}
