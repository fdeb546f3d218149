//! Quadrature building blocks: Gauss–Legendre rules, an adaptive
//! Gauss–Kronrod (7, 15) integrator, tanh–sinh rules for endpoint
//! singularities, and maps for half-infinite ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{NonlocalError, Result};

/// Controls the depth of every singular or nested integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureBudget {
    /// Initial number of panels per integration region.
    pub panels: usize,
    /// Maximum bisection depth; the interval cap is `panels * 2^levels`.
    pub levels: u32,
    /// Relative error target.
    pub tolerance: f64,
    /// Absolute error floor, used when the integral is close to zero.
    pub abs_floor: f64,
}

impl Default for QuadratureBudget {
    fn default() -> Self {
        Self {
            panels: 4,
            levels: 12,
            tolerance: 1e-10,
            abs_floor: 1e-13,
        }
    }
}

impl QuadratureBudget {
    pub fn new(panels: usize, levels: u32, tolerance: f64) -> Result<Self> {
        let b = Self {
            panels,
            levels,
            tolerance,
            abs_floor: tolerance * 1e-3,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(NonlocalError::Domain(format!(
                "quadrature tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.panels == 0 || self.levels == 0 {
            return Err(NonlocalError::Domain(
                "quadrature panel and level counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// A budget with the tolerance tightened by `factor`, used for inner
    /// stages of nested integrals.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            tolerance: self.tolerance * factor,
            abs_floor: self.abs_floor * factor,
            ..*self
        }
    }

    /// Budget for a sub-integral whose error only needs to be small next to
    /// `scale`, the magnitude of the enclosing integral.
    pub fn relative_to(&self, scale: f64) -> Self {
        Self {
            abs_floor: self.abs_floor.max(self.tolerance * scale.abs()),
            ..*self
        }
    }

    fn max_intervals(&self) -> usize {
        let cap = self.panels.saturating_mul(1usize << self.levels.min(20));
        cap.clamp(self.panels, 200_000)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = kron.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = hl * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        kron += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = kron * 0.5;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = kron * hl;
    let resasc = asc * hl.abs();
    let mut err = ((kron - gauss) * hl).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (1.0f64).min((200.0 * err / resasc).powf(1.5));
    }
    let resabs = abs_k * hl.abs();
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

#[derive(Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`, starting from
/// `budget.panels` panels split at the optional interior `breaks`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    budget: &QuadratureBudget,
    context: &str,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts: Vec<f64> = vec![lo, hi];
    pts.extend(breaks.iter().copied().filter(|&p| p > lo && p < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in pts.windows(2) {
        let n = budget.panels.max(1);
        let step = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            let sa = w[0] + step * k as f64;
            let sb = if k + 1 == n { w[1] } else { sa + step };
            let (v, e) = gk15(&mut f, sa, sb);
            total += v;
            total_err += e;
            heap.push(Segment {
                a: sa,
                b: sb,
                value: v,
                error: e,
            });
        }
    }
    let cap = budget.max_intervals().max(heap.len() + 1);
    loop {
        let target = budget.abs_floor.max(budget.tolerance * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= cap {
            if !total.is_finite() || total_err > 1e3 * target {
                return Err(NonlocalError::NonConvergence {
                    context: context.to_string(),
                    estimate: total_err,
                    tolerance: target,
                });
            }
            // Close enough: the estimator is pessimistic by construction.
            break;
        }
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval at machine resolution; accept it as is.
            heap.push(Segment { error: 0.0, ..seg });
            total_err -= seg.error;
            continue;
        }
        let (v1, e1) = gk15(&mut f, seg.a, mid);
        let (v2, e2) = gk15(&mut f, mid, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated rounding from the running updates.
    let mut items: Vec<Segment> = heap.into_vec();
    items.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value: f64 = items.iter().map(|s| s.value).sum();
    let error: f64 = items.iter().map(|s| s.error).sum();
    if !value.is_finite() {
        return Err(NonlocalError::NonConvergence {
            context: context.to_string(),
            estimate: f64::INFINITY,
            tolerance: budget.tolerance,
        });
    }
    Ok(Estimate {
        value: sign * value,
        error,
    })
}

/// Integrates `f` over `[a, ∞)` through the map `x = a + scale (1 - t) / t`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    scale: f64,
    budget: &QuadratureBudget,
    context: &str,
) -> Result<Estimate> {
    integrate(
        |t| {
            if t <= 0.0 {
                return 0.0;
            }
            let x = a + scale * (1.0 - t) / t;
            let v = f(x) * scale / (t * t);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        &[],
        budget,
        context,
    )
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A fixed rule mapped onto an interval: `(nodes, weights)`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn gauss(n: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre(n);
        let c = 0.5 * (a + b);
        let hl = 0.5 * (b - a);
        Self {
            nodes: x.iter().map(|t| c + hl * t).collect(),
            weights: w.iter().map(|t| hl * t).collect(),
        }
    }

    /// Tanh–sinh rule with step `step` and `2 * half + 1` nodes; exponentially
    /// convergent for integrands with algebraic endpoint singularities.
    pub fn tanh_sinh(half: usize, step: f64, a: f64, b: f64) -> Self {
        let hl = 0.5 * (b - a);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut nodes = Vec::with_capacity(2 * half + 1);
        let mut weights = Vec::with_capacity(2 * half + 1);
        for k in -(half as i64)..=(half as i64) {
            let t = k as f64 * step;
            let u = half_pi * t.sinh();
            // distance of the node from the nearer endpoint, in [-1, 1] units
            let gap = 2.0 / (1.0 + (2.0 * u.abs()).exp());
            let x = if k < 0 { a + hl * gap } else { b - hl * gap };
            let cu = u.cosh();
            let w = hl * step * half_pi * t.cosh() / (cu * cu);
            if w < 1e-300 || x <= a || x >= b {
                continue;
            }
            nodes.push(x);
            weights.push(w);
        }
        Self { nodes, weights }
    }

    pub fn apply<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}
