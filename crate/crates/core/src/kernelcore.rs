//! Kernels, weights and constants of the fractional weighted calculus, the
//! diffusion tensor fields, and the equivalence kernel of the anisotropic
//! weighted Laplacian evaluated by principal-value quadrature.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use statrs::function::gamma::gamma;

use crate::error::{NonlocalError, Result};
use crate::quadrature::{integrate, integrate_to_infinity, QuadratureBudget};

fn check_order(n: usize, s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(NonlocalError::Domain(format!(
            "fractional order s must lie in (0, 1), got {s}"
        )));
    }
    if n != 1 && n != 2 {
        return Err(NonlocalError::Domain(format!(
            "spatial dimension must be 1 or 2, got {n}"
        )));
    }
    Ok(())
}

/// Normalisation constant of the Riesz fractional Laplacian,
/// `4^s Γ(s + n/2) / (π^{n/2} |Γ(-s)|)`.
pub fn riesz_constant(n: usize, s: f64) -> Result<f64> {
    check_order(n, s)?;
    let nh = n as f64 / 2.0;
    Ok(4f64.powf(s) * gamma(s + nh) / (PI.powf(nh) * gamma(-s).abs()))
}

/// `∫_{|θ|=1, θ₁ ≥ 0} |θ₁|^{s+1} dθ`: counting measure on `{+1}` in 1-D and
/// the Beta-function closed form of `∫ cos^{s+1}φ dφ` over a half circle in 2-D.
pub fn hemisphere_moment(n: usize, s: f64) -> Result<f64> {
    check_order(n, s)?;
    Ok(match n {
        1 => 1.0,
        _ => PI.sqrt() * gamma(0.5 * s + 1.0) / gamma(0.5 * s + 1.5),
    })
}

/// The weight constant exactly as the closed form
/// `(2s sin(πs/2) / Γ(1-s)) · ∫_{hemisphere} |θ₁|^{s+1} dθ`.
///
/// This value does not make `𝒟_ω 𝒢_ω` equal to `-(-Δ)^s`; kernels built
/// through [`KernelSpec`] use [`gradient_constant`] instead.
pub fn weight_constant(n: usize, s: f64) -> Result<f64> {
    check_order(n, s)?;
    Ok(2.0 * s * (PI * s / 2.0).sin() / gamma(1.0 - s) * hemisphere_moment(n, s)?)
}

/// Normalisation of the Riesz fractional gradient,
/// `2^s Γ((n+s+1)/2) / (π^{n/2} Γ((1-s)/2))`, for which the composition of
/// weighted divergence and gradient is exactly `-(-Δ)^s`.
pub fn gradient_constant(n: usize, s: f64) -> Result<f64> {
    check_order(n, s)?;
    let nf = n as f64;
    Ok(2f64.powf(s) * gamma(0.5 * (nf + s + 1.0)) / (PI.powf(nf / 2.0) * gamma(0.5 * (1.0 - s))))
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn coincident(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(NonlocalError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let r = distance(x, y);
    if r == 0.0 {
        return Err(NonlocalError::CoincidentPoints(x.to_vec()));
    }
    Ok(r)
}

/// Unit vector `(y - x) / |y - x|`.
pub fn eval_alpha(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let r = coincident(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (b - a) / r).collect())
}

/// Fractional order, dimension and the constants derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub n: usize,
    pub s: f64,
    /// Riesz constant `C_{n,s}`.
    pub c_ns: f64,
    /// Weight constant `C_ω` used by every weighted operator.
    pub c_omega: f64,
    /// Radius of the symmetric principal-value balls, relative to `|x - z|`.
    pub r_inner: f64,
    /// Far-field radius beyond which the half-infinite map takes over,
    /// relative to `|x - z|`.
    pub r_outer: f64,
}

impl KernelSpec {
    pub fn new(n: usize, s: f64) -> Result<Self> {
        Ok(Self {
            n,
            s,
            c_ns: riesz_constant(n, s)?,
            c_omega: gradient_constant(n, s)?,
            r_inner: 1e-3,
            r_outer: 50.0,
        })
    }

    pub fn with_radii(mut self, r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(r_inner > 0.0 && r_inner < r_outer) {
            return Err(NonlocalError::Domain(format!(
                "need 0 < r_inner < r_outer, got {r_inner}, {r_outer}"
            )));
        }
        self.r_inner = r_inner;
        self.r_outer = r_outer;
        Ok(self)
    }

    /// `C_{n,s} / 2`, the factor shared by the fractional kernel and the
    /// coercivity constants.
    pub fn half_c_ns(&self) -> f64 {
        0.5 * self.c_ns
    }

    /// Radial weight profile `C_ω r^{-(n+s)}`.
    #[inline]
    pub fn weight_radial(&self, r: f64) -> f64 {
        self.c_omega * r.powf(-(self.n as f64 + self.s))
    }

    /// Radial fractional-Laplacian kernel `(C_{n,s}/2) r^{-(n+2s)}`.
    #[inline]
    pub fn gamma_fl_radial(&self, r: f64) -> f64 {
        self.half_c_ns() * r.powf(-(self.n as f64 + 2.0 * self.s))
    }

    /// Short identifier used in export headers.
    pub fn tag(&self) -> String {
        format!("n{}-s{}", self.n, self.s)
    }
}

/// `ω(x, y) = C_ω |x - y|^{-(n+s)}`.
pub fn eval_weight(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    let r = coincident(x, y)?;
    Ok(spec.weight_radial(r))
}

/// `γ_FL(x, y) = (C_{n,s}/2) |x - y|^{-(n+2s)}`, positive convention.
pub fn eval_gamma_fl(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    let r = coincident(x, y)?;
    Ok(spec.gamma_fl_radial(r))
}

fn check_dim(spec: &KernelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.n {
        return Err(NonlocalError::DimensionMismatch {
            expected: spec.n,
            got: x.len(),
        });
    }
    Ok(())
}

/// Symmetric `n × n` tensor, `n ≤ 2`, stored in a fixed 2×2 block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor {
    pub n: usize,
    pub m: [[f64; 2]; 2],
}

impl SymTensor {
    pub fn scalar(n: usize, a: f64) -> Self {
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate().take(n) {
            row[i] = a;
        }
        Self { n, m }
    }

    pub fn from_2x2(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self {
            n: 2,
            m: [[a11, a12], [a21, a22]],
        }
    }

    pub fn apply(&self, v: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for i in 0..self.n {
            for j in 0..self.n {
                out[i] += self.m[i][j] * v[j];
            }
        }
        out
    }

    /// `uᵀ A v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let av = self.apply(v);
        (0..self.n).map(|i| u[i] * av[i]).sum()
    }

    pub fn matmul(&self, other: &SymTensor) -> SymTensor {
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    m[i][j] += self.m[i][k] * other.m[k][j];
                }
            }
        }
        SymTensor { n: self.n, m }
    }

    pub fn frobenius(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += self.m[i][j] * self.m[i][j];
            }
        }
        acc.sqrt()
    }

    pub fn asymmetry(&self) -> f64 {
        if self.n == 1 {
            0.0
        } else {
            (self.m[0][1] - self.m[1][0]).abs() * 2f64.sqrt()
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        if self.n == 1 {
            return [self.m[0][0], self.m[0][0]];
        }
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = 0.5 * (self.m[0][1] + self.m[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mean - rad, mean + rad]
    }

    /// Principal square root of an SPD tensor, closed form for 2×2:
    /// `(A + √det I) / √(tr A + 2√det)`.
    pub fn sqrt_spd(&self) -> Result<SymTensor> {
        let ev = self.eigenvalues();
        if !(ev[0] > 0.0) {
            return Err(NonlocalError::Domain(format!(
                "tensor is not positive definite (eigenvalue {})",
                ev[0]
            )));
        }
        if self.n == 1 {
            return Ok(SymTensor::scalar(1, self.m[0][0].sqrt()));
        }
        let det = self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0];
        let sd = det.sqrt();
        let t = (self.m[0][0] + self.m[1][1] + 2.0 * sd).sqrt();
        Ok(SymTensor::from_2x2(
            (self.m[0][0] + sd) / t,
            self.m[0][1] / t,
            self.m[1][0] / t,
            (self.m[1][1] + sd) / t,
        ))
    }
}

/// A bounded, symmetric, uniformly elliptic tensor field `x ↦ A(x)`.
pub trait DiffusionTensorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> SymTensor;
    fn sqrt_eval(&self, x: &[f64]) -> SymTensor {
        self.eval(x)
            .sqrt_spd()
            .expect("tensor field lost positive definiteness")
    }
    fn lambda_min(&self) -> f64;
    fn lambda_max(&self) -> f64;
    fn id(&self) -> String;

    /// Scalar value for 1-D fields (the single entry of `A(x)`).
    fn scalar(&self, x: f64) -> f64 {
        self.eval(&[x]).m[0][0]
    }
}

/// `A(x) = c I` with `c > 0`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantIsotropic {
    pub n: usize,
    pub c: f64,
}

impl ConstantIsotropic {
    pub fn identity(n: usize) -> Self {
        Self { n, c: 1.0 }
    }
}

impl DiffusionTensorField for ConstantIsotropic {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, _x: &[f64]) -> SymTensor {
        SymTensor::scalar(self.n, self.c)
    }
    fn lambda_min(&self) -> f64 {
        self.c
    }
    fn lambda_max(&self) -> f64 {
        self.c
    }
    fn id(&self) -> String {
        if self.c == 1.0 {
            "identity".into()
        } else {
            format!("const-{}", self.c)
        }
    }
}

/// `A(x) = a(x) I` with user-supplied bounds `a_min ≤ a ≤ a_max`.
#[derive(Clone)]
pub struct ScalarModulated {
    pub n: usize,
    a: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub a_min: f64,
    pub a_max: f64,
    name: String,
}

impl fmt::Debug for ScalarModulated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarModulated")
            .field("n", &self.n)
            .field("a_min", &self.a_min)
            .field("a_max", &self.a_max)
            .field("name", &self.name)
            .finish()
    }
}

impl ScalarModulated {
    pub fn new(
        n: usize,
        name: impl Into<String>,
        a_min: f64,
        a_max: f64,
        a: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(a_min > 0.0 && a_min <= a_max) {
            return Err(NonlocalError::Domain(format!(
                "need 0 < a_min <= a_max, got {a_min}, {a_max}"
            )));
        }
        Ok(Self {
            n,
            a: Arc::new(a),
            a_min,
            a_max,
            name: name.into(),
        })
    }

    /// `a(x) = m + amp · sin(x₁)` with bounds `m ± amp`.
    pub fn sinusoidal(n: usize, mean: f64, amplitude: f64) -> Result<Self> {
        Self::new(
            n,
            format!("sin-{mean}-{amplitude}"),
            mean - amplitude.abs(),
            mean + amplitude.abs(),
            move |x| mean + amplitude * x[0].sin(),
        )
    }
}

impl DiffusionTensorField for ScalarModulated {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &[f64]) -> SymTensor {
        SymTensor::scalar(self.n, (self.a)(x))
    }
    fn sqrt_eval(&self, x: &[f64]) -> SymTensor {
        SymTensor::scalar(self.n, (self.a)(x).sqrt())
    }
    fn lambda_min(&self) -> f64 {
        self.a_min
    }
    fn lambda_max(&self) -> f64 {
        self.a_max
    }
    fn id(&self) -> String {
        self.name.clone()
    }
    fn scalar(&self, x: f64) -> f64 {
        (self.a)(&[x])
    }
}

/// Genuinely anisotropic 2-D field `R(θ(x)) diag(λ₁, λ₂) R(θ(x))ᵀ` with a
/// rotating principal frame `θ(x) = k₁ x₁ + k₂ x₂`.
#[derive(Debug, Clone, Copy)]
pub struct RotatingAnisotropic {
    pub lambda1: f64,
    pub lambda2: f64,
    pub k: [f64; 2],
}

impl DiffusionTensorField for RotatingAnisotropic {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64]) -> SymTensor {
        let th = self.k[0] * x[0] + self.k[1] * x[1];
        let (sn, cs) = th.sin_cos();
        let a11 = self.lambda1 * cs * cs + self.lambda2 * sn * sn;
        let a22 = self.lambda1 * sn * sn + self.lambda2 * cs * cs;
        let a12 = (self.lambda1 - self.lambda2) * sn * cs;
        SymTensor::from_2x2(a11, a12, a12, a22)
    }
    fn lambda_min(&self) -> f64 {
        self.lambda1.min(self.lambda2)
    }
    fn lambda_max(&self) -> f64 {
        self.lambda1.max(self.lambda2)
    }
    fn id(&self) -> String {
        format!("rot-{}-{}", self.lambda1, self.lambda2)
    }
}

/// Spot-checks symmetry, the eigenvalue bracket and `A^{1/2} A^{1/2} = A`
/// on a deterministic sample of points and unit directions in `[-r, r]^n`.
pub fn validate_tensor_field(field: &dyn DiffusionTensorField, r: f64, samples: usize) -> Result<()> {
    let n = field.dim();
    let lo = field.lambda_min();
    let hi = field.lambda_max();
    if !(lo > 0.0 && lo <= hi) {
        return Err(NonlocalError::Domain(format!("invalid eigenvalue bounds [{lo}, {hi}]")));
    }
    // low-discrepancy (golden ratio) sequence; reproducible without an RNG
    let g = 0.618_033_988_749_895_f64;
    for k in 0..samples {
        let u1 = (0.5 + k as f64 * g).fract();
        let u2 = (0.5 + k as f64 * g * g).fract();
        let x: Vec<f64> = [u1, u2][..n].iter().map(|u| r * (2.0 * u - 1.0)).collect();
        let a = field.eval(&x);
        let norm = a.frobenius();
        if a.asymmetry() > 1e-14 * norm {
            return Err(NonlocalError::Domain(format!("tensor not symmetric at {x:?}")));
        }
        let th = 2.0 * PI * (0.5 + k as f64 * 0.754_877_666_246_692_7).fract();
        let v = [th.cos(), th.sin()];
        let v = if n == 1 { [1.0, 0.0] } else { v };
        let q = a.bilinear(&v, &v);
        let slack = 1e-12 * hi;
        if q < lo - slack || q > hi + slack {
            return Err(NonlocalError::Domain(format!(
                "v·A v = {q} outside [{lo}, {hi}] at {x:?}"
            )));
        }
        let sq = field.sqrt_eval(&x);
        let back = sq.matmul(&sq);
        let mut diff = back;
        for i in 0..n {
            for j in 0..n {
                diff.m[i][j] -= a.m[i][j];
            }
        }
        if diff.frobenius() > 1e-12 * norm {
            return Err(NonlocalError::Domain(format!("A^(1/2) A^(1/2) != A at {x:?}")));
        }
    }
    Ok(())
}

/// Symmetric equivalence kernel of `𝒟_ω(A 𝒢_ω)` at the pair `(x, z)`.
///
/// The weight `ω̃(p, q) = A^{1/2}(p) ω(p, q)` absorbs the tensor. The
/// returned value is half of `γ_I + γ_{II_A} + γ_{II_B}`, which makes the
/// unweighted Laplacian `2∫(u(y) - u(x)) γ dy` coincide with `𝒟_ω(A 𝒢_ω)`.
/// Each term is a principal-value integral in the auxiliary point `y`,
/// evaluated with nodes paired by reflection about `x` and `z`.
pub fn equivalence_kernel(
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    x: &[f64],
    z: &[f64],
    budget: &QuadratureBudget,
) -> Result<f64> {
    Ok(equivalence_kernel_parts(spec, field, x, z, budget)?.total())
}

/// The three contributions to `2 γ_eq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParts {
    pub gamma_i: f64,
    pub gamma_ii_a: f64,
    pub gamma_ii_b: f64,
}

impl KernelParts {
    pub fn total(&self) -> f64 {
        0.5 * (self.gamma_i + self.gamma_ii_a + self.gamma_ii_b)
    }
}

pub fn equivalence_kernel_parts(
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    x: &[f64],
    z: &[f64],
    budget: &QuadratureBudget,
) -> Result<KernelParts> {
    check_dim(spec, x)?;
    check_dim(spec, z)?;
    if field.dim() != spec.n {
        return Err(NonlocalError::DimensionMismatch {
            expected: spec.n,
            got: field.dim(),
        });
    }
    let d = coincident(x, z)?;
    budget.validate()?;

    // γ_I = ω̃(x,z)α(x,z) · PV∫ ω̃(x,y)α(x,y) dy
    let first_x = pv_weighted_first_moment(spec, field, x, d, budget)?;
    let alpha_xz = eval_alpha(x, z)?;
    let wt_xz = field.sqrt_eval(x).apply(&alpha_xz);
    let gamma_i = spec.weight_radial(d) * dot(&wt_xz[..spec.n], &first_x);

    // γ_{II_B} = ω̃(z,x)α(x,z) · PV∫ ω̃(z,y)α(y,z) dy = -ω̃(z,x)α(x,z) · PV∫ ω̃(z,y)α(z,y) dy
    let first_z = pv_weighted_first_moment(spec, field, z, d, budget)?;
    let wt_zx = field.sqrt_eval(z).apply(&alpha_xz);
    let gamma_ii_b = -spec.weight_radial(d) * dot(&wt_zx[..spec.n], &first_z);

    let gamma_ii_a = match spec.n {
        1 => gamma_ii_a_1d(spec, field, x[0], z[0], budget)?,
        _ => gamma_ii_a_2d(spec, field, [x[0], x[1]], [z[0], z[1]], budget)?,
    };
    Ok(KernelParts {
        gamma_i,
        gamma_ii_a,
        gamma_ii_b,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `PV ∫ ω̃(p, y) α(p, y) dy = A^{1/2}(p) PV ∫ ω(p, y) α(p, y) dy`, with
/// `y = p ± t θ` paired so the odd parts cancel node by node.
fn pv_weighted_first_moment(
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    p: &[f64],
    scale: f64,
    budget: &QuadratureBudget,
) -> Result<Vec<f64>> {
    let n = spec.n;
    let mut acc = vec![0.0; n];
    let directions: Vec<[f64; 2]> = if n == 1 {
        vec![[1.0, 0.0]]
    } else {
        (0..16)
            .map(|k| {
                let th = PI * (k as f64 + 0.5) / 16.0;
                [th.cos(), th.sin()]
            })
            .collect()
    };
    for dir in &directions {
        for (i, a) in acc.iter_mut().enumerate() {
            let radial = |t: f64| {
                let plus = spec.weight_radial(t) * dir[i];
                let minus = spec.weight_radial(t) * (-dir[i]);
                (plus + minus) * t.powi(n as i32 - 1)
            };
            let inner = integrate(radial, 0.0, scale, &[], budget, "first moment")?.value;
            let outer = integrate_to_infinity(radial, scale, scale, budget, "first moment tail")?.value;
            *a += (inner + outer) * if n == 1 { 1.0 } else { PI / directions.len() as f64 };
        }
    }
    let root = field.sqrt_eval(p);
    Ok(root.apply(&acc)[..n].to_vec())
}

fn gamma_ii_a_1d(
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    x: f64,
    z: f64,
    budget: &QuadratureBudget,
) -> Result<f64> {
    let s = spec.s;
    let d = (z - x).abs();
    // ω(y,z) ω(y,x) α(y,z) A(y) α(x,y), with y = c + t given by its offsets so
    // that paired nodes a tiny distance t from a singular point stay exactly
    // mirrored in floating point
    let g = |c: f64, t: f64| -> f64 {
        let dx = (c - x) + t;
        let dz = (c - z) + t;
        if dx == 0.0 || dz == 0.0 {
            return 0.0;
        }
        spec.weight_radial(dz.abs()) * spec.weight_radial(dx.abs()) * (-dz).signum() * field.scalar(c + t) * dx.signum()
    };
    let f = |y: f64| g(y, 0.0);
    let (p, q) = if x < z { (x, z) } else { (z, x) };
    let r = (spec.r_inner * d).min(0.25 * d);
    let far = spec.r_outer * d;
    let exp = 1.0 / (1.0 - s);
    // Paired ball around a singular point c; t = r u^{1/(1-s)} flattens the
    // t^{-s} remainder left after pairing. Below t0 the paired sum is lost to
    // cancellation, so its leading term paired(t0) (t/t0)^{-s} is integrated
    // exactly; the neglected part is O((t0/d)^2).
    let t0 = 1e-6 * d;
    let u0 = (t0 / r).powf(1.0 - s);
    let ball = |c: f64| -> Result<f64> {
        let core = (g(c, t0) + g(c, -t0)) * t0 / (1.0 - s);
        let rest = integrate(
            |u: f64| {
                let t = r * u.powf(exp);
                let dt = r * exp * u.powf(exp - 1.0);
                (g(c, t) + g(c, -t)) * dt
            },
            u0,
            1.0,
            &[],
            budget,
            "equivalence kernel ball",
        )?;
        Ok(core + rest.value)
    };
    let mut total = ball(p)? + ball(q)?;
    total += integrate(f, p + r, q - r, &[], budget, "equivalence kernel gap")?.value;
    total += integrate(
        f,
        q + r,
        q + far,
        &[q + d, q + 4.0 * d],
        budget,
        "equivalence kernel right",
    )?
    .value;
    total += integrate(
        f,
        p - far,
        p - r,
        &[p - d, p - 4.0 * d],
        budget,
        "equivalence kernel left",
    )?
    .value;
    let tail_budget = budget.relative_to(total);
    total += integrate_to_infinity(f, q + far, far, &tail_budget, "equivalence kernel right tail")?.value;
    total += integrate_to_infinity(
        |t| f(2.0 * p - t),
        p + far,
        far,
        &tail_budget,
        "equivalence kernel left tail",
    )?
    .value;
    Ok(total)
}

fn gamma_ii_a_2d(
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    x: [f64; 2],
    z: [f64; 2],
    budget: &QuadratureBudget,
) -> Result<f64> {
    // integrand at y = c + v, where c is one of the two singular points and o
    // the other; offsets are formed from v so that mirrored nodes stay exact
    let f = |c: [f64; 2], o: [f64; 2], v: [f64; 2]| -> f64 {
        let rc = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let w = [c[0] - o[0] + v[0], c[1] - o[1] + v[1]];
        let ro = (w[0] * w[0] + w[1] * w[1]).sqrt();
        if rc == 0.0 || ro == 0.0 {
            return 0.0;
        }
        // partition of unity χ_c = ro⁴ / (rc⁴ + ro⁴) isolating c
        let chi = ro.powi(4) / (rc.powi(4) + ro.powi(4));
        let y = [c[0] + v[0], c[1] + v[1]];
        // α(x,y) and α(y,z) expressed through the offsets from c and o
        let (a_xy, a_yz, rxy, ryz) = if c == x {
            ([v[0] / rc, v[1] / rc], [-w[0] / ro, -w[1] / ro], rc, ro)
        } else {
            ([w[0] / ro, w[1] / ro], [-v[0] / rc, -v[1] / rc], ro, rc)
        };
        chi * spec.weight_radial(ryz) * spec.weight_radial(rxy) * field.eval(&y).bilinear(&a_yz, &a_xy)
    };
    let d = distance(&x, &z);
    let inner = budget.tightened(0.1);
    let around = |c: [f64; 2], o: [f64; 2]| -> Result<f64> {
        let phi_o = (o[1] - c[1]).atan2(o[0] - c[0]).rem_euclid(PI);
        let s = spec.s;
        let r = 0.5 * d;
        let far = spec.r_outer * d;
        let exp = 1.0 / (1.0 - s);
        let mut err: Option<crate::error::NonlocalError> = None;
        let val = integrate(
            |th: f64| {
                let e = [th.cos(), th.sin()];
                let g = |rho: f64| -> f64 {
                    rho * (f(c, o, [rho * e[0], rho * e[1]]) + f(c, o, [-rho * e[0], -rho * e[1]]))
                };
                let res = (|| -> Result<f64> {
                    // same small-radius treatment as in 1-D
                    let t0 = 1e-6 * d;
                    let core = g(t0) * t0 / (1.0 - s);
                    let ball = core
                        + integrate(
                            |u: f64| {
                                let t = r * u.powf(exp);
                                g(t) * r * exp * u.powf(exp - 1.0)
                            },
                            (t0 / r).powf(1.0 - s),
                            1.0,
                            &[],
                            &inner,
                            "2-d kernel ball",
                        )?
                        .value;
                    let mid = integrate(g, r, far, &[d, 2.0 * d], &inner, "2-d kernel radial")?.value;
                    let tail_budget = inner.relative_to(ball + mid);
                    let tail = integrate_to_infinity(g, far, far, &tail_budget, "2-d kernel tail")?.value;
                    Ok(ball + mid + tail)
                })();
                match res {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                }
            },
            0.0,
            PI,
            &[phi_o],
            budget,
            "2-d kernel angular",
        )?
        .value;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(val)
    };
    Ok(around(x, z)? + around(z, x)?)
}
