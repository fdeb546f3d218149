//! Pointwise nonlocal operators applied to callable fields.
//!
//! Every principal-value integral over `y ∈ ℝ` is folded onto the half line
//! `h = |y - x|` with the `x ± h` contributions paired, so odd singular parts
//! cancel before they are integrated. Nested operators (`𝒟_ω 𝒢_ω`) evaluate
//! the inner integral at every outer node with a tighter budget.
//!
//! The PV operators are one-dimensional; the two-point gradient is not.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{NonlocalError, Result};
use crate::kernelcore::{DiffusionTensorField, KernelSpec};
use crate::quadrature::{integrate, integrate_to_infinity, Estimate, QuadratureBudget};

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Compactly supported scalar field on the line with known non-smooth points.
#[derive(Clone)]
pub struct ScalarField {
    eval: Fn1,
    /// `eval(x) = 0` for `|x - center| > support_radius`.
    pub support_radius: f64,
    pub center: f64,
    /// Points where the field or a low derivative is not smooth.
    pub kinks: Vec<f64>,
    pub name: String,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("center", &self.center)
            .field("support_radius", &self.support_radius)
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl ScalarField {
    pub fn new(
        name: impl Into<String>,
        support_radius: f64,
        kinks: Vec<f64>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(NonlocalError::Domain(format!(
                "support radius must be positive and finite, got {support_radius}"
            )));
        }
        Ok(Self {
            eval: Arc::new(eval),
            support_radius,
            center: 0.0,
            kinks,
            name: name.into(),
        })
    }

    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        if (x - self.center).abs() >= self.support_radius {
            0.0
        } else {
            (self.eval)(x)
        }
    }

    /// `exp(1 - 1/(1 - (x/R)²))` on `|x| < R`, with peak value 1.
    pub fn bump(radius: f64) -> Result<Self> {
        Self::new(format!("bump-{radius}"), radius, vec![-radius, radius], move |x| {
            let t = x / radius;
            let q = 1.0 - t * t;
            if q <= 0.0 {
                0.0
            } else {
                (1.0 - 1.0 / q).exp()
            }
        })
    }

    /// Getoor profile `(1 - x²)₊^s`, whose fractional Laplacian is constant
    /// on the unit interval.
    pub fn getoor(s: f64) -> Result<Self> {
        Self::new(format!("getoor-{s}"), 1.0, vec![-1.0, 1.0], move |x| {
            (1.0 - x * x).max(0.0).powf(s)
        })
    }

    /// `exp(-x²/σ²)` cut to zero outside `|x| < radius`.
    pub fn truncated_gaussian(sigma: f64, radius: f64) -> Result<Self> {
        Self::new(
            format!("gauss-{sigma}-{radius}"),
            radius,
            vec![-radius, radius],
            move |x| (-(x * x) / (sigma * sigma)).exp(),
        )
    }

    /// The field translated by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            eval: Arc::new(move |x| inner(x - c)),
            support_radius: self.support_radius,
            center: self.center + c,
            kinks: self.kinks.iter().map(|k| k + c).collect(),
            name: format!("{}+{c}", self.name),
        }
    }

    /// `a u + b w`.
    pub fn combine(a: f64, u: &ScalarField, b: f64, w: &ScalarField) -> Self {
        let (fu, fw) = (u.clone(), w.clone());
        let lo = (u.center - u.support_radius).min(w.center - w.support_radius);
        let hi = (u.center + u.support_radius).max(w.center + w.support_radius);
        let mut kinks = u.kinks.clone();
        kinks.extend(&w.kinks);
        Self {
            eval: Arc::new(move |x| a * fu.at(x) + b * fw.at(x)),
            support_radius: 0.5 * (hi - lo),
            center: 0.5 * (hi + lo),
            kinks,
            name: format!("{a}*{}+{b}*{}", u.name, w.name),
        }
    }

    /// Samples just outside the support and reports the largest magnitude
    /// found there; the raw callable is used, not the clipped one.
    pub fn check_support(&self, samples: usize) -> Result<()> {
        for k in 0..samples {
            let t = 1.0 + 1e-9 + 3.0 * k as f64 / samples.max(1) as f64;
            for x in [
                self.center + t * self.support_radius,
                self.center - t * self.support_radius,
            ] {
                let v = (self.eval)(x);
                if v != 0.0 {
                    return Err(NonlocalError::Domain(format!(
                        "field {} is {v} at {x}, outside its support radius",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn reach(&self, x: f64) -> f64 {
        (x - self.center).abs() + self.support_radius
    }

    fn break_distances(&self, x: f64) -> Vec<f64> {
        self.kinks.iter().map(|k| (k - x).abs()).filter(|d| *d > 0.0).collect()
    }
}

/// Two-point vector field `v(x, y)` on the line, returned as its single
/// component; `scale` is the length beyond which the field is in its tail.
#[derive(Clone)]
pub struct TwoPointVectorField {
    eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub scale: f64,
}

impl TwoPointVectorField {
    pub fn new(scale: f64, eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            scale,
        }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }

    /// `𝒢u(x, y) = (u(y) - u(x)) α(x, y)`.
    pub fn unweighted_gradient_of(u: &ScalarField, alpha: Arc<dyn RadialKernel>) -> Self {
        let u = u.clone();
        let scale = u.support_radius;
        Self::new(scale, move |x, y| {
            if x == y {
                0.0
            } else {
                (u.at(y) - u.at(x)) * alpha.eval((y - x).abs()) * (y - x).signum()
            }
        })
    }
}

/// Radial profile `k(r)` of a kernel: `γ(x, y) = k(|x - y|)` for scalar
/// kernels, `α(x, y) = k(|x - y|) (y - x)/|y - x|` for vector kernels.
pub trait RadialKernel: Send + Sync {
    fn eval(&self, r: f64) -> f64;
}

/// `γ_FL`: `(C_{n,s}/2) r^{-(n+2s)}`.
#[derive(Debug, Clone, Copy)]
pub struct FractionalKernel(pub KernelSpec);

impl RadialKernel for FractionalKernel {
    fn eval(&self, r: f64) -> f64 {
        self.0.gamma_fl_radial(r)
    }
}

/// Vector kernel with `α · α = γ_FL`: `√(C_{n,s}/2) r^{-(n+2s)/2}`.
#[derive(Debug, Clone, Copy)]
pub struct FractionalAlpha(pub KernelSpec);

impl RadialKernel for FractionalAlpha {
    fn eval(&self, r: f64) -> f64 {
        self.0.gamma_fl_radial(r).sqrt()
    }
}

/// Unit-magnitude vector kernel, `α(x, y) = (y - x)/|y - x|`.
#[derive(Debug, Clone, Copy)]
pub struct UnitAlpha;

impl RadialKernel for UnitAlpha {
    fn eval(&self, _r: f64) -> f64 {
        1.0
    }
}

fn require_1d(spec: &KernelSpec) -> Result<()> {
    if spec.n != 1 {
        return Err(NonlocalError::Unsupported(format!(
            "pointwise principal-value operators are implemented in one dimension (n = {})",
            spec.n
        )));
    }
    Ok(())
}

/// `∫_0^∞ paired(h) dh` for an integrand with an integrable power-law
/// singularity at `h = 0`.
///
/// On `[0, ρ]` the integrand is replaced by the power law `c h^q` fitted at
/// `ρ` and `ρ/2`; there the paired differences are dominated by rounding and
/// cannot be integrated directly. `expected_order` is used when the fit is
/// degenerate (for example a vanishing leading coefficient).
struct HalfLine<'a> {
    rho: f64,
    breaks: Vec<f64>,
    /// Beyond this the integrand is zero (`Some`) or decays (`None`).
    end: Option<f64>,
    far: f64,
    expected_order: f64,
    budget: &'a QuadratureBudget,
    context: &'a str,
}

impl HalfLine<'_> {
    fn run(&self, mut paired: impl FnMut(f64) -> f64) -> Result<Estimate> {
        let rho = self.rho;
        let p1 = paired(rho);
        let p2 = paired(0.5 * rho);
        let mut order = self.expected_order;
        if p1 != 0.0 && p1 * p2 > 0.0 {
            let q = (p1 / p2).log2();
            if q > -0.99 && q < 8.0 {
                order = q;
            }
        }
        let ball = if p1 == 0.0 { 0.0 } else { p1 * rho / (order + 1.0) };
        let stop = self.end.unwrap_or(self.far).max(rho);
        let mid = integrate(&mut paired, rho, stop, &self.breaks, self.budget, self.context)?;
        let mut value = ball + mid.value;
        let mut error = mid.error;
        if self.end.is_none() {
            let tail_budget = self.budget.relative_to(value);
            let tail = integrate_to_infinity(&mut paired, stop, stop, &tail_budget, self.context)?;
            value += tail.value;
            error += tail.error;
        }
        Ok(Estimate { value, error })
    }
}

fn inner_radius(spec: &KernelSpec, scale: f64, x: f64, kinks: &[f64]) -> f64 {
    let mut rho = spec.r_inner * scale;
    for k in kinks {
        let d = (k - x).abs();
        if d > 0.0 {
            rho = rho.min(0.25 * d);
        }
    }
    rho
}

/// `(u(y) - u(x)) α(x, y)`.
pub fn unweighted_gradient(
    u: &dyn Fn(&[f64]) -> f64,
    alpha: &dyn RadialKernel,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let unit = crate::kernelcore::eval_alpha(x, y)?;
    let r: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let diff = u(y) - u(x);
    let mag = alpha.eval(r);
    Ok(unit.into_iter().map(|a| diff * mag * a).collect())
}

/// `PV ∫ (v(x, y) + v(y, x)) · α(x, y) dy`.
pub fn unweighted_divergence(
    v: &TwoPointVectorField,
    alpha: &dyn RadialKernel,
    spec: &KernelSpec,
    x: f64,
    budget: &QuadratureBudget,
) -> Result<Estimate> {
    require_1d(spec)?;
    budget.validate()?;
    let paired = |h: f64| {
        let plus = v.at(x, x + h) + v.at(x + h, x);
        let minus = v.at(x, x - h) + v.at(x - h, x);
        alpha.eval(h) * (plus - minus)
    };
    HalfLine {
        rho: spec.r_inner * v.scale,
        breaks: vec![v.scale, 2.0 * v.scale],
        end: None,
        far: spec.r_outer * v.scale,
        expected_order: 1.0 - 2.0 * spec.s,
        budget,
        context: "unweighted divergence",
    }
    .run(paired)
}

/// `2 ∫ (u(y) - u(x)) γ(x, y) dy` for a radial kernel `γ` with a
/// singularity weaker than `r^{-3}`.
pub fn unweighted_laplacian(
    u: &ScalarField,
    gamma: &dyn RadialKernel,
    spec: &KernelSpec,
    x: f64,
    budget: &QuadratureBudget,
) -> Result<Estimate> {
    require_1d(spec)?;
    budget.validate()?;
    let ux = u.at(x);
    let reach = u.reach(x);
    let rho = inner_radius(spec, u.support_radius, x, &u.kinks);
    let near = HalfLine {
        rho,
        breaks: u.break_distances(x),
        end: Some(reach),
        far: reach,
        expected_order: 2.0 - 1.0 - 2.0 * spec.s,
        budget,
        context: "unweighted laplacian",
    }
    .run(|h| 2.0 * (u.at(x + h) + u.at(x - h) - 2.0 * ux) * gamma.eval(h))?;
    // beyond the support only -u(x) survives
    let tail = if ux == 0.0 {
        0.0
    } else {
        -4.0 * ux * integrate_to_infinity(|h| gamma.eval(h), reach, reach, budget, "unweighted laplacian tail")?.value
    };
    Ok(Estimate {
        value: near.value + tail,
        error: near.error,
    })
}

/// `PV ∫ ω(x, y) (u(y) - u(x)) α(x, y) dy`, the ω-weighted gradient.
pub fn weighted_gradient(u: &ScalarField, spec: &KernelSpec, x: f64, budget: &QuadratureBudget) -> Result<Estimate> {
    require_1d(spec)?;
    budget.validate()?;
    weighted_gradient_1d(u, spec, x, budget)
}

fn weighted_gradient_1d(u: &ScalarField, spec: &KernelSpec, x: f64, budget: &QuadratureBudget) -> Result<Estimate> {
    let s = spec.s;
    let c = spec.c_omega;
    let reach = u.reach(x);
    let rho = inner_radius(spec, u.support_radius, x, &u.kinks);
    if (x - u.center).abs() > u.support_radius + rho {
        // far from the support the integrand is smooth in y; integrate over the support
        let lo = u.center - u.support_radius;
        let hi = u.center + u.support_radius;
        let est = integrate(
            |y: f64| u.at(y) * (y - x).signum() * (y - x).abs().powf(-1.0 - s),
            lo,
            hi,
            &u.kinks,
            budget,
            "weighted gradient (exterior point)",
        )?;
        return Ok(Estimate {
            value: c * est.value,
            error: c * est.error,
        });
    }
    let est = HalfLine {
        rho,
        breaks: u.break_distances(x),
        end: Some(reach),
        far: reach,
        expected_order: -s,
        budget,
        context: "weighted gradient",
    }
    .run(|h| (u.at(x + h) - u.at(x - h)) * h.powf(-1.0 - s))?;
    Ok(Estimate {
        value: c * est.value,
        error: c * est.error,
    })
}

/// `PV ∫ (ω(x, y) v(x) + ω(y, x) v(y)) · α(x, y) dy` for a one-point field.
/// The `v(x)` term vanishes by odd symmetry, which the pairing makes exact.
pub fn weighted_divergence(
    v: &dyn Fn(f64) -> f64,
    scale: f64,
    kinks: &[f64],
    spec: &KernelSpec,
    x: f64,
    budget: &QuadratureBudget,
) -> Result<Estimate> {
    require_1d(spec)?;
    budget.validate()?;
    divergence_1d(v, scale, kinks, spec, x, budget)
}

fn divergence_1d(
    mut v: impl FnMut(f64) -> f64,
    scale: f64,
    kinks: &[f64],
    spec: &KernelSpec,
    x: f64,
    budget: &QuadratureBudget,
) -> Result<Estimate> {
    let s = spec.s;
    let rho = inner_radius(spec, scale, x, kinks);
    let mut breaks: Vec<f64> = kinks.iter().map(|k| (k - x).abs()).filter(|d| *d > 0.0).collect();
    breaks.push(scale);
    let est = HalfLine {
        rho,
        breaks,
        end: None,
        far: spec.r_outer * scale,
        expected_order: -s,
        budget,
        context: "weighted divergence",
    }
    .run(|h| (v(x + h) - v(x - h)) * h.powf(-1.0 - s))?;
    Ok(Estimate {
        value: spec.c_omega * est.value,
        error: spec.c_omega * est.error,
    })
}

/// Runs `outer` over a callable that evaluates the weighted gradient of `u`
/// with the tightened inner budget; the first inner failure is returned.
fn nested<T>(
    u: &ScalarField,
    spec: &KernelSpec,
    budget: &QuadratureBudget,
    outer: impl FnOnce(&mut dyn FnMut(f64) -> f64) -> Result<T>,
) -> Result<T> {
    let inner = budget.tightened(1e-3);
    let failure: RefCell<Option<NonlocalError>> = RefCell::new(None);
    let mut grad = |y: f64| match weighted_gradient_1d(u, spec, y, &inner) {
        Ok(e) => e.value,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let out = outer(&mut grad)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(out)
}

/// `𝒟_ω 𝒢_ω u`, the ω-weighted Laplacian, by nested quadrature. The reported
/// error is the outer estimate plus the inner tolerance share.
pub fn weighted_laplacian(u: &ScalarField, spec: &KernelSpec, x: f64, budget: &QuadratureBudget) -> Result<Estimate> {
    require_1d(spec)?;
    budget.validate()?;
    let est = nested(u, spec, budget, |g| {
        divergence_1d(g, u.support_radius, &u.kinks, spec, x, budget)
    })?;
    Ok(Estimate {
        value: est.value,
        error: est.error + 1e-3 * budget.tolerance * est.value.abs(),
    })
}

/// `𝒟_ω(A 𝒢_ω u)`.
pub fn anisotropic_laplacian(
    u: &ScalarField,
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    x: f64,
    budget: &QuadratureBudget,
) -> Result<Estimate> {
    require_1d(spec)?;
    if field.dim() != 1 {
        return Err(NonlocalError::DimensionMismatch {
            expected: 1,
            got: field.dim(),
        });
    }
    budget.validate()?;
    let est = nested(u, spec, budget, |g| {
        divergence_1d(|y| field.scalar(y) * g(y), u.support_radius, &u.kinks, spec, x, budget)
    })?;
    Ok(Estimate {
        value: est.value,
        error: est.error + 1e-3 * budget.tolerance * est.value.abs(),
    })
}

/// `C_{n,s} PV ∫ (u(x) - u(y)) |x - y|^{-n-2s} dy`. Inside the inner ball `u`
/// is replaced by its second-order expansion; the curvature comes from the
/// second difference at the ball radius.
pub fn riesz_laplacian(u: &ScalarField, spec: &KernelSpec, x: f64, budget: &QuadratureBudget) -> Result<Estimate> {
    require_1d(spec)?;
    budget.validate()?;
    let s = spec.s;
    let ux = u.at(x);
    let reach = u.reach(x);
    let rho = inner_radius(spec, u.support_radius, x, &u.kinks);
    let second = |h: f64| 2.0 * ux - u.at(x + h) - u.at(x - h);
    // ∫_0^ρ (-u'' h²) h^{-1-2s} dh with -u'' ρ² ≈ second(ρ)
    let ball = second(rho) * rho.powf(-2.0 * s) / (2.0 - 2.0 * s);
    let mid = integrate(
        |h: f64| second(h) * h.powf(-1.0 - 2.0 * s),
        rho,
        reach.max(rho),
        &u.break_distances(x),
        budget,
        "riesz laplacian",
    )?;
    // beyond the support the integrand is 2u(x) h^{-1-2s}
    let tail = 2.0 * ux * reach.max(rho).powf(-2.0 * s) / (2.0 * s);
    Ok(Estimate {
        value: spec.c_ns * (ball + mid.value + tail),
        error: spec.c_ns * mid.error,
    })
}
