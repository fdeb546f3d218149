//! Uniform grids with an exterior collar, continuous piecewise-linear
//! elements with homogeneous volume constraints, and dense Galerkin assembly.
//!
//! One dimension carries the full set of forms. Two-dimensional grids
//! support the tensor-product mass matrix and load vector only.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{NonlocalError, Result};
use crate::kernelcore::{DiffusionTensorField, KernelSpec};
use crate::quadrature::{gauss_legendre, QuadratureBudget, Rule};

/// Serial assembly is the reference; parallel assembly reduces in the same
/// order and is bit-identical to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// One coordinate direction of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    /// `Ω` along this axis is the open interval `(a, b)`.
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    /// Node indices strictly inside `(a, b)`, in increasing order.
    pub interior: Vec<usize>,
}

impl Axis {
    fn build(a: f64, b: f64, h: f64, collar: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(NonlocalError::DegenerateDomain(format!("({a}, {b})")));
        }
        let cells_in = (b - a) / h;
        let cells_out = collar / h;
        let round_in = cells_in.round();
        let round_out = cells_out.round();
        if (cells_in - round_in).abs() > 1e-9 * cells_in.max(1.0)
            || (cells_out - round_out).abs() > 1e-9 * cells_out.max(1.0)
        {
            return Err(NonlocalError::InvalidGrid(format!(
                "h = {h} must divide both the domain length {} and the collar width {collar}",
                b - a
            )));
        }
        let (ni, no) = (round_in as usize, round_out as usize);
        let total = ni + 2 * no;
        let start = a - no as f64 * h;
        let nodes: Vec<f64> = (0..=total).map(|k| start + k as f64 * h).collect();
        let interior: Vec<usize> = (no + 1..no + ni).collect();
        Ok(Self { a, b, nodes, interior })
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

/// Uniform grid on `Ω ∪ collar`; nodes in `Ω` are dofs, all others
/// (including `∂Ω`) carry the homogeneous volume constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub h: f64,
    pub collar: f64,
    pub axes: Vec<Axis>,
    pub id: String,
}

impl Grid {
    pub fn dofs(&self) -> usize {
        self.axes.iter().map(|a| a.interior.len()).product()
    }

    /// Coordinates of the interior dofs (1-D) in increasing order.
    pub fn dof_coordinates(&self) -> Vec<Vec<f64>> {
        match self.n {
            1 => self.axes[0]
                .interior
                .iter()
                .map(|&k| vec![self.axes[0].nodes[k]])
                .collect(),
            _ => {
                let (ax, ay) = (&self.axes[0], &self.axes[1]);
                let mut out = Vec::with_capacity(self.dofs());
                for &j in &ay.interior {
                    for &i in &ax.interior {
                        out.push(vec![ax.nodes[i], ay.nodes[j]]);
                    }
                }
                out
            }
        }
    }

    /// Interior dof coordinates of a 1-D grid.
    pub fn dof_points(&self) -> Vec<f64> {
        self.axes[0].interior.iter().map(|&k| self.axes[0].nodes[k]).collect()
    }

    pub(crate) fn require_1d(&self, what: &str) -> Result<()> {
        if self.n != 1 {
            return Err(NonlocalError::Unsupported(format!(
                "{what} is assembled on one-dimensional grids only"
            )));
        }
        Ok(())
    }

    /// Dof index of node `k` of a 1-D grid, if it is a dof.
    fn dof_of_node(&self, k: usize) -> Option<usize> {
        let ax = &self.axes[0];
        let first = ax.interior.first().copied()?;
        if k >= first && k < first + ax.interior.len() {
            Some(k - first)
        } else {
            None
        }
    }
}

/// Builds the uniform grid; `domain` holds one `(a, b)` per dimension.
pub fn build_grid(domain: &[(f64, f64)], h: f64, collar: f64) -> Result<Grid> {
    if domain.is_empty() || domain.len() > 2 {
        return Err(NonlocalError::DegenerateDomain(format!("{} dimensions", domain.len())));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(NonlocalError::InvalidGrid(format!("mesh size h = {h}")));
    }
    if !(collar >= h) {
        return Err(NonlocalError::InvalidGrid(format!(
            "collar width {collar} is smaller than h = {h}"
        )));
    }
    let axes = domain
        .iter()
        .map(|&(a, b)| Axis::build(a, b, h, collar))
        .collect::<Result<Vec<_>>>()?;
    if axes.iter().any(|a| a.interior.is_empty()) {
        return Err(NonlocalError::InvalidGrid("no interior nodes".into()));
    }
    let dom: Vec<String> = domain.iter().map(|(a, b)| format!("{a}:{b}")).collect();
    Ok(Grid {
        n: domain.len(),
        h,
        collar,
        id: format!("grid[{}]-h{h}-w{collar}", dom.join("x")),
        axes,
    })
}

/// Coefficients over the interior dofs of a grid; constrained nodes are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFunction {
    pub grid_id: String,
    pub coeffs: DVector<f64>,
}

impl DiscreteFunction {
    pub fn new(grid: &Grid, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != grid.dofs() {
            return Err(NonlocalError::DimensionMismatch {
                expected: grid.dofs(),
                got: coeffs.len(),
            });
        }
        Ok(Self {
            grid_id: grid.id.clone(),
            coeffs,
        })
    }

    /// Nodal interpolant of `f` at the dofs.
    pub fn interpolate(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        grid.require_1d("interpolation")?;
        Self::new(
            grid,
            DVector::from_iterator(grid.dofs(), grid.dof_points().into_iter().map(f)),
        )
    }

    /// Value of the piecewise-linear function at `x` (1-D).
    pub fn eval(&self, grid: &Grid, x: f64) -> f64 {
        let ax = &grid.axes[0];
        if x <= ax.a || x >= ax.b {
            return 0.0;
        }
        let t = (x - ax.lo()) / grid.h;
        let k = (t.floor() as usize).min(ax.nodes.len() - 2);
        let w = t - k as f64;
        let val = |node: usize| grid.dof_of_node(node).map_or(0.0, |d| self.coeffs[d]);
        (1.0 - w) * val(k) + w * val(k + 1)
    }
}

/// Mass, stiffness, Gram, advection and load of one problem.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub advection: Option<DMatrix<f64>>,
    pub load: DVector<f64>,
    pub spec: KernelSpec,
    pub field_id: String,
    pub grid_id: String,
    /// Ellipticity bounds `(λ_min, λ_max)` of the diffusion tensor.
    pub lambda: (f64, f64),
    /// `max |K - Kᵀ|` of the stiffness before symmetrisation.
    pub asymmetry: f64,
}

/// Assembles every matrix of the problem on `grid`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_system(
    grid: &Grid,
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    velocity: Option<&dyn Fn(f64) -> f64>,
    f: &dyn Fn(f64) -> f64,
    budget: &QuadratureBudget,
    exec: Execution,
) -> Result<DiscreteSystem> {
    let stiff = assemble_stiffness_weighted(grid, spec, field, budget, exec)?;
    Ok(DiscreteSystem {
        mass: assemble_mass(grid)?,
        gram: assemble_gram_isotropic(grid, spec, budget, exec)?,
        advection: velocity.map(|v| assemble_advection(grid, v)).transpose()?,
        load: assemble_load(grid, f)?,
        spec: *spec,
        field_id: field.id(),
        grid_id: grid.id.clone(),
        lambda: (field.lambda_min(), field.lambda_max()),
        stiffness: stiff.matrix,
        asymmetry: stiff.asymmetry,
    })
}

fn mass_1d(axis: &Axis, h: f64) -> DMatrix<f64> {
    let n = axis.interior.len();
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * h / 3.0,
        1 => h / 6.0,
        _ => 0.0,
    })
}

/// Piecewise-linear (1-D) or bilinear (2-D, dofs ordered x-fastest) mass
/// matrix on the interior dofs.
pub fn assemble_mass(grid: &Grid) -> Result<DMatrix<f64>> {
    let mx = mass_1d(&grid.axes[0], grid.h);
    Ok(match grid.n {
        1 => mx,
        _ => mass_1d(&grid.axes[1], grid.h).kronecker(&mx),
    })
}

/// `F_i = ∫_Ω f φ_i`, composite four-point Gauss on each element.
pub fn assemble_load(grid: &Grid, f: &dyn Fn(f64) -> f64) -> Result<DVector<f64>> {
    grid.require_1d("the load vector")?;
    let ax = &grid.axes[0];
    let (gx, gw) = gauss_legendre(4);
    let mut out = DVector::zeros(grid.dofs());
    for (d, &k) in ax.interior.iter().enumerate() {
        let xk = ax.nodes[k];
        let mut acc = 0.0;
        for (lo, hi) in [(ax.nodes[k - 1], xk), (xk, ax.nodes[k + 1])] {
            let c = 0.5 * (lo + hi);
            let hl = 0.5 * (hi - lo);
            for (t, w) in gx.iter().zip(&gw) {
                let x = c + hl * t;
                acc += w * hl * f(x) * (1.0 - (x - xk).abs() / grid.h);
            }
        }
        out[d] = acc;
    }
    Ok(out)
}

/// `C_ij = ∫_Ω v φ_j' φ_i`. A divergence-free field on the line is constant,
/// which is checked on a sample of points.
pub fn assemble_advection(grid: &Grid, velocity: &dyn Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    grid.require_1d("the advection matrix")?;
    let ax = &grid.axes[0];
    let v0 = velocity(0.5 * (ax.a + ax.b));
    let samples = 257;
    for k in 0..samples {
        let x = ax.a + (ax.b - ax.a) * k as f64 / (samples - 1) as f64;
        let v = velocity(x);
        if !v.is_finite() || (v - v0).abs() > 1e-12 * v0.abs().max(1.0) {
            return Err(NonlocalError::NotSolenoidal(format!(
                "velocity varies along the line ({v0} vs {v} at x = {x}); only constant fields are divergence free"
            )));
        }
    }
    let n = grid.dofs();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if j == i + 1 {
            0.5 * v0
        } else if i == j + 1 {
            -0.5 * v0
        } else {
            0.0
        }
    }))
}

/// `Q(t) = sign(t)|t|^{1-s}/(1-s)`, an antiderivative of `|t|^{-s}`.
#[inline]
fn q_antiderivative(t: f64, s: f64) -> f64 {
    t.signum() * t.abs().powf(1.0 - s) / (1.0 - s)
}

/// Closed form of `𝒢_ω φ(x)` for the hat centred at `c` with half-width `h`.
///
/// Integrating by parts, `𝒢_ω u(x) = (C_ω/s) ∫ u'(y) |y - x|^{-s} dy`, and a
/// hat has a piecewise-constant derivative.
#[inline]
pub fn hat_weighted_gradient(spec: &KernelSpec, c: f64, h: f64, x: f64) -> f64 {
    let s = spec.s;
    let t = c - x;
    let scale = spec.c_omega / (s * h);
    if t.abs() > 16.0 * h {
        // far away the second difference of Q cancels catastrophically; use
        // 2Q(t) - Q(t-h) - Q(t+h) = -2 Σ_k Q^{(2k)}(t) h^{2k}/(2k)! with
        // Q^{(2k)}(t) = -sign(t) s(s+1)…(s+2k-2) |t|^{1-s-2k}
        let r = h / t.abs();
        let mut poch = s; // s(s+1)…(s+2k-2)
        let mut fact = 2.0; // (2k)!
        let mut rk = r * r;
        let mut sum = 0.0;
        for k in 1..=5 {
            if k > 1 {
                let m = 2.0 * k as f64;
                poch *= (s + m - 3.0) * (s + m - 2.0);
                fact *= (m - 1.0) * m;
                rk *= r * r;
            }
            sum += poch * rk / fact;
        }
        return scale * 2.0 * t.signum() * t.abs().powf(1.0 - s) * sum;
    }
    let q = |node: f64| q_antiderivative(node - x, s);
    scale * (2.0 * q(c) - q(c - h) - q(c + h))
}

/// Quadrature nodes and weights covering the real line for the weighted
/// form: tanh–sinh on the elements of `Ω` and the first collar elements
/// (where hat gradients have `|t|^{1-s}` behaviour at nodes), Gauss on the
/// rest of the collar, and tanh–sinh in `t` on `x = c ± L(1-t)/t` beyond.
fn real_line_rule(grid: &Grid, budget: &QuadratureBudget) -> (Vec<f64>, Vec<f64>) {
    let ax = &grid.axes[0];
    let (half, step) = if budget.tolerance >= 1e-6 {
        (10, 0.3)
    } else if budget.tolerance >= 1e-9 {
        (14, 0.25)
    } else {
        (28, 0.125)
    };
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    let mut push = |r: Rule| {
        xs.extend(r.nodes);
        ws.extend(r.weights);
    };
    for w in ax.nodes.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let singular = hi > ax.a - 1.5 * grid.h && lo < ax.b + 1.5 * grid.h;
        if singular {
            push(Rule::tanh_sinh(half, step, lo, hi));
        } else {
            push(Rule::gauss(6, lo, hi));
        }
    }
    let len = ax.hi() - ax.lo();
    let tail = Rule::tanh_sinh(2 * half, step, 0.0, 1.0);
    for (sign, start) in [(1.0, ax.hi()), (-1.0, ax.lo())] {
        // nodes with t → 0 sit at |x| → ∞ where the integrand is O(t^{2s})
        for (t, w) in tail.nodes.iter().zip(&tail.weights).filter(|(t, _)| **t > 1e-10) {
            xs.push(start + sign * len * (1.0 - t) / t);
            ws.push(w * len / (t * t));
        }
    }
    (xs, ws)
}

/// Result of a stiffness assembly: the symmetrised matrix and the
/// asymmetry `max |K - Kᵀ|` measured before symmetrisation.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub matrix: DMatrix<f64>,
    pub asymmetry: f64,
}

/// `K_ij = ∫_ℝ 𝒢_ω φ_j · A 𝒢_ω φ_i dx`.
pub fn assemble_stiffness_weighted(
    grid: &Grid,
    spec: &KernelSpec,
    field: &dyn DiffusionTensorField,
    budget: &QuadratureBudget,
    exec: Execution,
) -> Result<Assembled> {
    grid.require_1d("the weighted stiffness")?;
    if spec.n != 1 || field.dim() != 1 {
        return Err(NonlocalError::DimensionMismatch {
            expected: 1,
            got: spec.n.max(field.dim()),
        });
    }
    budget.validate()?;
    let (xs, ws) = real_line_rule(grid, budget);
    let centers = grid.dof_points();
    let h = grid.h;
    let nq = xs.len();
    let weights: Vec<f64> = xs.iter().zip(&ws).map(|(&x, &w)| w * field.scalar(x)).collect();
    // rows of G: 𝒢_ω φ_i at every quadrature node; G_w carries the weights
    let row = |i: usize| -> (Vec<f64>, Vec<f64>) {
        let g: Vec<f64> = xs
            .iter()
            .map(|&x| hat_weighted_gradient(spec, centers[i], h, x))
            .collect();
        let gw: Vec<f64> = g.iter().zip(&weights).map(|(a, b)| a * b).collect();
        (g, gw)
    };
    let rows: Vec<(Vec<f64>, Vec<f64>)> = match exec {
        Execution::Serial => (0..centers.len()).map(row).collect(),
        Execution::Parallel => (0..centers.len()).into_par_iter().map(row).collect(),
    };
    let n = centers.len();
    let g = DMatrix::from_fn(n, nq, |i, q| rows[i].0[q]);
    let gw = DMatrix::from_fn(n, nq, |i, q| rows[i].1[q]);
    let k = &gw * g.transpose();
    finish_symmetric(k, budget)
}

fn finish_symmetric(k: DMatrix<f64>, budget: &QuadratureBudget) -> Result<Assembled> {
    let asymmetry = (&k - k.transpose()).amax();
    let scale = k.amax();
    let limit = 10.0 * budget.tolerance.max(1e-12) * scale;
    if !asymmetry.is_finite() || asymmetry > limit {
        return Err(NonlocalError::Asymmetry { asymmetry, limit });
    }
    Ok(Assembled {
        matrix: 0.5 * (&k + k.transpose()),
        asymmetry,
    })
}

/// `∫∫_{[0,1]²} ξ^p η^q (ξ + η)^{-1-2s}` for `p + q = 2`: with `ξ = ρt`,
/// `η = ρ(1-t)` the triangle `ρ ≤ 1` is a Beta integral and the remaining
/// corner `ρ ∈ [1, 2]` has polynomial inner integrals.
fn touching_moment(p: i32, q: i32, s: f64) -> f64 {
    // ∫ t^p (1-t)^q dt as a polynomial antiderivative, p + q = 2
    let anti = |t: f64| match (p, q) {
        (2, 0) => t * t * t / 3.0,
        (0, 2) => -(1.0 - t).powi(3) / 3.0,
        _ => t * t / 2.0 - t * t * t / 3.0,
    };
    let beta = match (p, q) {
        (1, 1) => 1.0 / 6.0,
        _ => 1.0 / 3.0,
    };
    let triangle = beta / (3.0 - 2.0 * s);
    let corner =
        Rule::gauss(24, 1.0, 2.0).apply(|rho| rho.powf(2.0 - 2.0 * s) * (anti(1.0 / rho) - anti(1.0 - 1.0 / rho)));
    triangle + corner
}

/// `K_ij = (C_{n,s}/2) ∬ (φ_i(x) - φ_i(y))(φ_j(x) - φ_j(y)) |x - y|^{-1-2s}`
/// over `ℝ²`.
///
/// Element pairs of `Ω ∪ collar` are integrated exactly for identical and
/// touching elements and by tensor Gauss otherwise; pairs with one point
/// outside the collar reduce to `2∫ φ_i φ_j E` with the closed-form
/// exterior kernel `E(x) = ((x - L)^{-2s} + (R - x)^{-2s}) / (2s)`.
pub fn assemble_gram_isotropic(
    grid: &Grid,
    spec: &KernelSpec,
    budget: &QuadratureBudget,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    grid.require_1d("the fractional Gram matrix")?;
    budget.validate()?;
    let s = spec.s;
    let ax = &grid.axes[0];
    let h = grid.h;
    let ne = ax.nodes.len() - 1;
    let n = grid.dofs();
    let (near_pts, far_pts) = if budget.tolerance >= 1e-6 { (6, 3) } else { (10, 5) };
    let near_rule = gauss_legendre(near_pts);
    let far_rule = gauss_legendre(far_pts);

    let dofs_of = |e: usize| [grid.dof_of_node(e), grid.dof_of_node(e + 1)];
    let active: Vec<usize> = (0..ne).filter(|&e| dofs_of(e).iter().any(Option::is_some)).collect();

    let self_moment = 2.0 * h.powf(3.0 - 2.0 * s) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
    let j20 = touching_moment(2, 0, s);
    let j11 = touching_moment(1, 1, s);
    let touch_scale = h.powf(1.0 - 2.0 * s);

    // contributions of every pair (e, f) with e active and f > e or f inactive,
    // so each unordered pair is visited once; returned as (i, j, value) lists
    let pairs_of = |e: usize| -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        let de = dofs_of(e);
        // identical element: d_a = φ_a' (x - y)
        let slope = [-1.0 / h, 1.0 / h];
        for a in 0..2 {
            for b in 0..2 {
                if let (Some(i), Some(j)) = (de[a], de[b]) {
                    out.push((i, j, slope[a] * slope[b] * self_moment));
                }
            }
        }
        for f in 0..ne {
            if f == e {
                continue;
            }
            let df = dofs_of(f);
            let f_active = df.iter().any(Option::is_some);
            if f_active && f < e {
                continue;
            }
            let factor = 2.0; // (e, f) and (f, e)
            if f == e + 1 || e == f + 1 {
                // nodes l < m < r of the two touching elements
                let (l, r) = (e.min(f), e.max(f) + 1);
                let ids = [grid.dof_of_node(l), grid.dof_of_node(l + 1), grid.dof_of_node(r)];
                // d_l = ξ, d_m = η - ξ, d_r = -η (unit coordinates)
                let coeff = [
                    [j20, j11 - j20, -j11],
                    [j11 - j20, 2.0 * j20 - 2.0 * j11, j11 - j20],
                    [-j11, j11 - j20, j20],
                ];
                for a in 0..3 {
                    for b in 0..3 {
                        if let (Some(i), Some(j)) = (ids[a], ids[b]) {
                            out.push((i, j, factor * touch_scale * coeff[a][b]));
                        }
                    }
                }
                continue;
            }
            let (gx, gw) = if e.abs_diff(f) <= 4 { &near_rule } else { &far_rule };
            let (xe, xf) = (ax.nodes[e], ax.nodes[f]);
            // local dofs: left/right node of e, left/right node of f
            let mut local = [[0.0f64; 4]; 4];
            for (tx, wx) in gx.iter().zip(gw) {
                let ux = 0.5 * (tx + 1.0);
                let x = xe + h * ux;
                for (ty, wy) in gx.iter().zip(gw) {
                    let uy = 0.5 * (ty + 1.0);
                    let y = xf + h * uy;
                    let k = 0.25 * wx * wy * h * h * (x - y).abs().powf(-1.0 - 2.0 * s);
                    let d = [1.0 - ux, ux, -(1.0 - uy), -uy];
                    for a in 0..4 {
                        for b in 0..4 {
                            local[a][b] += k * d[a] * d[b];
                        }
                    }
                }
            }
            let ids = [de[0], de[1], df[0], df[1]];
            for a in 0..4 {
                for b in 0..4 {
                    if let (Some(i), Some(j)) = (ids[a], ids[b]) {
                        out.push((i, j, factor * local[a][b]));
                    }
                }
            }
        }
        // exterior of Ω ∪ collar: 2 ∫_e φ_a φ_b E
        let (lo_d, hi_d) = (ax.lo(), ax.hi());
        let ext = |x: f64| ((x - lo_d).powf(-2.0 * s) + (hi_d - x).powf(-2.0 * s)) / (2.0 * s);
        let (gx, gw) = &near_rule;
        let xe = ax.nodes[e];
        let mut m = [[0.0f64; 2]; 2];
        for (t, w) in gx.iter().zip(gw) {
            let u = 0.5 * (t + 1.0);
            let val = 0.5 * w * h * ext(xe + h * u);
            let phi = [1.0 - u, u];
            for a in 0..2 {
                for b in 0..2 {
                    m[a][b] += val * phi[a] * phi[b];
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                if let (Some(i), Some(j)) = (de[a], de[b]) {
                    out.push((i, j, 2.0 * m[a][b]));
                }
            }
        }
        out
    };
    let contributions: Vec<Vec<(usize, usize, f64)>> = match exec {
        Execution::Serial => active.iter().map(|&e| pairs_of(e)).collect(),
        Execution::Parallel => active.par_iter().map(|&e| pairs_of(e)).collect(),
    };
    let mut k = DMatrix::zeros(n, n);
    for list in &contributions {
        for &(i, j, v) in list {
            k[(i, j)] += v;
        }
    }
    k *= spec.half_c_ns();
    // the pair loop is symmetric in (i, j) term by term up to summation order
    Ok(0.5 * (&k + k.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelcore::ConstantIsotropic;
    use crate::quadrature::integrate;

    #[test]
    fn grid_counting() {
        let g = build_grid(&[(-1.0, 1.0)], 0.5, 1.0).unwrap();
        assert_eq!(g.axes[0].nodes, vec![-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.dofs(), 3);
        assert_eq!(g.dof_points(), vec![-0.5, 0.0, 0.5]);
        let fine = build_grid(&[(-1.0, 1.0)], 0.25, 1.0).unwrap();
        assert_eq!(fine.dofs(), 2 * g.dofs() + 1);
        assert!(matches!(
            build_grid(&[(-1.0, 1.0)], 0.5, 0.25),
            Err(NonlocalError::InvalidGrid(_))
        ));
        assert!(matches!(
            build_grid(&[(1.0, 1.0)], 0.5, 1.0),
            Err(NonlocalError::DegenerateDomain(_))
        ));
        assert!(build_grid(&[(-1.0, 1.0)], 0.3, 0.9).is_err());
        let g2 = build_grid(&[(0.0, 1.0), (0.0, 2.0)], 0.25, 0.5).unwrap();
        assert_eq!(g2.dofs(), 3 * 7);
    }

    #[test]
    fn mass_matrix_rows_and_sum() {
        let g = build_grid(&[(-1.0, 1.0)], 0.125, 0.25).unwrap();
        let m = assemble_mass(&g).unwrap();
        let h = 0.125;
        assert!((m[(5, 4)] - h / 6.0).abs() < 1e-15);
        assert!((m[(5, 5)] - 2.0 * h / 3.0).abs() < 1e-15);
        assert_eq!(m, m.transpose());
        // ∫ (Σφ_i)²: 1 on interior elements, ∫(x/h)² = h/3 on the two boundary ones
        let total: f64 = m.iter().sum();
        assert!((total - (2.0 - 4.0 * h / 3.0)).abs() < 1e-12);
        let g2 = build_grid(&[(0.0, 1.0), (0.0, 1.0)], 0.25, 0.25).unwrap();
        let m2 = assemble_mass(&g2).unwrap();
        assert_eq!(m2.nrows(), 9);
        assert!((m2[(4, 4)] - (2.0 * 0.25 / 3.0f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn mass_matrix_conditioning() {
        let g = build_grid(&[(0.0, 1.0)], 1.0 / 32.0, 1.0 / 32.0).unwrap();
        let m = assemble_mass(&g).unwrap() / g.h;
        let ev = m.symmetric_eigenvalues();
        assert!(ev.min() >= 1.0 / 3.0 - 1e-12 && ev.max() <= 1.0 + 1e-12);
    }

    #[test]
    fn load_vector_examples() {
        let g = build_grid(&[(-1.0, 1.0)], 0.25, 0.5).unwrap();
        let f = assemble_load(&g, &|_| 1.0).unwrap();
        assert!(f.iter().all(|v| (v - 0.25).abs() < 1e-14));
        assert!(assemble_load(&g, &|_| 0.0).unwrap().iter().all(|v| *v == 0.0));
        // f = φ_k reproduces column k of M
        let m = assemble_mass(&g).unwrap();
        let pts = g.dof_points();
        let k = 3;
        let phi = |x: f64| (1.0 - (x - pts[k]).abs() / g.h).max(0.0);
        let fk = assemble_load(&g, &phi).unwrap();
        assert!((fk - m.column(k)).amax() < 1e-14);
    }

    #[test]
    fn advection_rows_and_skew() {
        let g = build_grid(&[(-1.0, 1.0)], 0.125, 0.25).unwrap();
        let c = assemble_advection(&g, &|_| 1.0).unwrap();
        assert_eq!((c[(5, 4)], c[(5, 5)], c[(5, 6)]), (-0.5, 0.0, 0.5));
        assert!((&c + c.transpose()).amax() <= 1e-12 * c.amax());
        assert_eq!(assemble_advection(&g, &|_| 0.0).unwrap().amax(), 0.0);
        assert!(matches!(
            assemble_advection(&g, &|x| x),
            Err(NonlocalError::NotSolenoidal(_))
        ));
    }

    #[test]
    fn touching_moments_match_adaptive_quadrature() {
        let b = QuadratureBudget::new(4, 14, 1e-11).unwrap();
        for &s in &[0.25, 0.5, 0.75] {
            for (p, q) in [(2, 0), (1, 1)] {
                let inner = |x: f64| {
                    integrate(
                        |y: f64| x.powi(p) * y.powi(q) * (x + y).powf(-1.0 - 2.0 * s),
                        0.0,
                        1.0,
                        &[],
                        &b,
                        "inner",
                    )
                    .unwrap()
                    .value
                };
                let direct = integrate(inner, 0.0, 1.0, &[], &b, "outer").unwrap().value;
                let got = touching_moment(p, q, s);
                assert!((got - direct).abs() < 1e-8 * direct, "s={s} p={p}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn hat_gradient_far_field_series_is_continuous() {
        let spec = KernelSpec::new(1, 0.3).unwrap();
        let h = 0.125;
        for &sign in &[1.0, -1.0] {
            let x = sign * 16.0 * h;
            let inside = hat_weighted_gradient(&spec, 0.0, h, x * (1.0 - 1e-12));
            let outside = hat_weighted_gradient(&spec, 0.0, h, x * (1.0 + 1e-12));
            assert!((inside - outside).abs() < 1e-9 * inside.abs(), "{inside} vs {outside}");
        }
    }

    #[test]
    fn hat_gradient_is_odd_about_its_node() {
        let spec = KernelSpec::new(1, 0.5).unwrap();
        for &t in &[0.01, 0.3, 0.7, 2.0, 40.0] {
            let a = hat_weighted_gradient(&spec, 0.0, 0.25, t);
            let b = hat_weighted_gradient(&spec, 0.0, 0.25, -t);
            assert!((a + b).abs() < 1e-13 * a.abs().max(1e-300));
        }
    }

    /// `B(φ_i, φ_j) = (1/2π) ∫ |k|^{2s} |φ̂|² cos(k d) dk` for hats at distance
    /// `d`, with `|φ̂|² = h² sinc⁴(kh/2)`. Writing `sin⁴` as a cosine sum turns it
    /// into a finite combination of `∫ k^{μ-1} cos(ak) dk = Γ(μ) cos(πμ/2) a^{-μ}`,
    /// `μ = 2s - 3`; at `s = 1/2` the pole cancels and a logarithmic limit remains.
    fn hat_fourier_entry(s: f64, h: f64, d: f64) -> f64 {
        use statrs::function::gamma::gamma;
        let terms = [
            (3.0, d),
            (-2.0, h + d),
            (-2.0, h - d),
            (0.5, 2.0 * h + d),
            (0.5, 2.0 * h - d),
        ];
        if (s - 0.5).abs() < 1e-12 {
            let sum: f64 = terms
                .iter()
                .filter(|(_, a)| *a != 0.0)
                .map(|(c, a)| c * a * a * a.abs().ln())
                .sum();
            return sum / (std::f64::consts::PI * h * h);
        }
        let mu = 2.0 * s - 3.0;
        let sum: f64 = terms.iter().map(|(c, a)| c * a.abs().powf(-mu)).sum();
        2.0 / (std::f64::consts::PI * h * h) * gamma(mu) * (std::f64::consts::PI * mu / 2.0).cos() * sum
    }

    #[test]
    fn gram_and_stiffness_match_fourier_oracle() {
        // B(φ_i, φ_j) = (1/2π) ∫ |k|^{2s} φ̂_i conj(φ̂_j) dk with φ̂ = h sinc²(kh/2) e^{-ik x_i}
        let g = build_grid(&[(-1.0, 1.0)], 0.5, 2.0).unwrap();
        let b = QuadratureBudget::new(4, 12, 1e-9).unwrap();
        for &s in &[0.25, 0.5, 0.75] {
            let spec = KernelSpec::new(1, s).unwrap();
            let kiso = assemble_gram_isotropic(&g, &spec, &b, Execution::Serial).unwrap();
            let ka = assemble_stiffness_weighted(&g, &spec, &ConstantIsotropic::identity(1), &b, Execution::Serial)
                .unwrap()
                .matrix;
            for (i, j) in [(1, 1), (0, 1), (0, 2)] {
                let oracle = hat_fourier_entry(s, 0.5, 0.5 * (j - i) as f64);
                let rel = oracle.abs().max(1e-3 * kiso[(1, 1)]);
                assert!(
                    (kiso[(i, j)] - oracle).abs() < 1e-6 * rel,
                    "iso s={s} ({i},{j}): {} vs {oracle}",
                    kiso[(i, j)]
                );
                assert!(
                    (ka[(i, j)] - oracle).abs() < 1e-6 * rel,
                    "A s={s} ({i},{j}): {} vs {oracle}",
                    ka[(i, j)]
                );
            }
        }
    }

    #[test]
    fn serial_and_parallel_assembly_are_identical() {
        let g = build_grid(&[(-1.0, 1.0)], 0.125, 2.0).unwrap();
        let spec = KernelSpec::new(1, 0.4).unwrap();
        let b = QuadratureBudget::new(4, 12, 1e-8).unwrap();
        let a = assemble_gram_isotropic(&g, &spec, &b, Execution::Serial).unwrap();
        let p = assemble_gram_isotropic(&g, &spec, &b, Execution::Parallel).unwrap();
        assert_eq!(a, p);
        let id = ConstantIsotropic::identity(1);
        let a = assemble_stiffness_weighted(&g, &spec, &id, &b, Execution::Serial).unwrap();
        let p = assemble_stiffness_weighted(&g, &spec, &id, &b, Execution::Parallel).unwrap();
        assert_eq!(a.matrix, p.matrix);
    }

    #[test]
    fn stiffness_is_linear_in_the_tensor() {
        let g = build_grid(&[(-1.0, 1.0)], 0.25, 2.0).unwrap();
        let spec = KernelSpec::new(1, 0.6).unwrap();
        let b = QuadratureBudget::new(4, 12, 1e-8).unwrap();
        let k1 =
            assemble_stiffness_weighted(&g, &spec, &ConstantIsotropic::identity(1), &b, Execution::Serial).unwrap();
        let k2 =
            assemble_stiffness_weighted(&g, &spec, &ConstantIsotropic { n: 1, c: 2.0 }, &b, Execution::Serial).unwrap();
        let scale = k2.matrix.amax();
        assert!((k2.matrix - 2.0 * k1.matrix).amax() < 1e-13 * scale);
    }

    #[test]
    fn discrete_function_interpolates() {
        let g = build_grid(&[(-1.0, 1.0)], 0.25, 0.5).unwrap();
        let u = DiscreteFunction::interpolate(&g, |x| 1.0 - x * x).unwrap();
        assert!((u.eval(&g, 0.0) - 1.0).abs() < 1e-15);
        assert!((u.eval(&g, 0.125) - 0.5 * (1.0 + (1.0 - 0.0625))).abs() < 1e-15);
        assert_eq!(u.eval(&g, 1.2), 0.0);
        assert!(DiscreteFunction::new(&g, DVector::zeros(3)).is_err());
    }
}
