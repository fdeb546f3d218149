//! Direct solves, θ-scheme time stepping and the energy ledger that tracks
//! the a-priori estimate along a trajectory.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::discretization::{DiscreteFunction, DiscreteSystem, Grid};
use crate::error::{NonlocalError, Result};

/// Dense lower-triangular Cholesky factor. Unlike the nalgebra one, failure
/// names the row whose pivot went non-positive.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(NonlocalError::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(NonlocalError::Factorization { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / d;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = self.forward(b);
        let n = y.len();
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in i + 1..n {
                v -= self.l[(k, i)] * y[k];
            }
            y[i] = v / self.l[(i, i)];
        }
        y
    }

    /// `L⁻¹ b`.
    pub fn forward(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = b.len();
        let mut y = b.clone();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= self.l[(i, k)] * y[k];
            }
            y[i] = v / self.l[(i, i)];
        }
        y
    }

    pub fn factor_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }
}

/// Eigenvalues of the symmetric pencil `A v = μ B v`, `B` SPD, ascending.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = Cholesky::factor(b)?;
    let n = a.nrows();
    // C = L⁻¹ A L⁻ᵀ, built column by column then symmetrised
    let mut half = DMatrix::zeros(n, n);
    for j in 0..n {
        half.set_column(j, &chol.forward(&a.column(j).into_owned()));
    }
    let mut c = DMatrix::zeros(n, n);
    let ht = half.transpose();
    for j in 0..n {
        c.set_column(j, &chol.forward(&ht.column(j).into_owned()));
    }
    let c = 0.5 * (&c + c.transpose());
    if c.iter().any(|v| !v.is_finite()) {
        return Err(NonlocalError::Eigen("non-finite reduced matrix".into()));
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn solve_with_refinement(k: &DMatrix<f64>, chol: &Cholesky, f: &DVector<f64>) -> Result<DVector<f64>> {
    let mut u = chol.solve(f);
    let target = 1e-10 * f.norm();
    for _ in 0..3 {
        let r = f - k * &u;
        if r.norm() <= target {
            return Ok(u);
        }
        u += chol.solve(&r);
    }
    let res = (f - k * &u).norm();
    if res <= target {
        Ok(u)
    } else {
        Err(NonlocalError::NonConvergence {
            context: "elliptic solve residual".into(),
            estimate: res,
            tolerance: target,
        })
    }
}

/// Solves `K_A u = F` by Cholesky with residual-checked refinement.
pub fn solve_elliptic(system: &DiscreteSystem) -> Result<DiscreteFunction> {
    let chol = Cholesky::factor(&system.stiffness)?;
    let u = solve_with_refinement(&system.stiffness, &chol, &system.load)?;
    Ok(DiscreteFunction {
        grid_id: system.grid_id.clone(),
        coeffs: u,
    })
}

/// Poincaré constant of the discrete space: `‖u‖ ≤ C_p |||u|||` with
/// `|||u|||² = uᵀ K_iso u / (C_{n,s}/2)`.
pub fn estimate_poincare(system: &DiscreteSystem) -> Result<f64> {
    let energy = &system.gram / system.spec.half_c_ns();
    let mu = generalized_eigenvalues(&energy, &system.mass)?[0];
    if !(mu > 0.0) {
        return Err(NonlocalError::Eigen(format!(
            "smallest eigenvalue {mu:e} is not positive"
        )));
    }
    Ok(1.0 / mu.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSteppingConfig {
    pub t_end: f64,
    pub dt: f64,
    pub theta: f64,
    /// Record every `stride`-th step (the initial state is always recorded).
    pub stride: usize,
}

impl TimeSteppingConfig {
    pub fn new(t_end: f64, dt: f64, theta: f64, stride: usize) -> Result<Self> {
        let cfg = Self {
            t_end,
            dt,
            theta,
            stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn backward_euler(t_end: f64, dt: f64) -> Result<Self> {
        Self::new(t_end, dt, 1.0, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() || !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(NonlocalError::Domain(format!(
                "need 0 < dt <= T, got dt = {} and T = {}",
                self.dt, self.t_end
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(NonlocalError::Domain(format!("theta = {} outside [0, 1]", self.theta)));
        }
        if self.stride == 0 {
            return Err(NonlocalError::Domain("output stride must be positive".into()));
        }
        Ok(())
    }

    /// Uniform steps; the last one lands on `steps()·dt ≥ T`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub t: f64,
    /// `uᵀ M u`.
    pub l2_sq: f64,
    /// `C_coer ∫ |||u|||²`, trapezoid over recorded states.
    pub energy: f64,
    /// `‖u₀‖² + C_p²/(2 C_coer) ∫ FᵀK_iso⁻¹F`, the printed right-hand side.
    pub rhs: f64,
    /// `‖u₀‖² + (1/C_coer) ∫ ‖f‖²_{V'}` with the operator dual norm of
    /// `|||·|||`; the bound the energy argument actually delivers.
    pub rhs_energy: f64,
}

impl LedgerEntry {
    pub fn lhs(&self) -> f64 {
        self.l2_sq + self.energy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub c_coer: f64,
    pub c_cont: f64,
    pub c_p: f64,
    pub entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    /// First entry violating `lhs ≤ rhs·(1 + tol)`.
    pub fn first_violation(&self, tol: f64) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| !(e.lhs() <= e.rhs * (1.0 + tol)))
    }

    pub fn first_violation_energy(&self, tol: f64) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| !(e.lhs() <= e.rhs_energy * (1.0 + tol)))
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| {
            e.t.is_finite()
                && e.l2_sq.is_finite()
                && e.energy.is_finite()
                && e.rhs.is_finite()
                && e.rhs_energy.is_finite()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid_id: String,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `uᵀ M u` after every step, not only recorded ones.
    pub l2_sq_per_step: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> DiscreteFunction {
        DiscreteFunction {
            grid_id: self.grid_id.clone(),
            coeffs: self.states.last().expect("trajectory holds the initial state").clone(),
        }
    }
}

enum Factor {
    Symmetric(Cholesky),
    General(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(a: DMatrix<f64>) -> Result<Self> {
        if a == a.transpose() {
            return Ok(Factor::Symmetric(Cholesky::factor(&a)?));
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(NonlocalError::Factorization { pivot: 0, value: 0.0 });
        }
        Ok(Factor::General(lu))
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Symmetric(c) => c.solve(b),
            Factor::General(lu) => lu.solve(b).expect("invertibility checked at factorization"),
        }
    }
}

/// Largest eigenvalue of `M⁻¹ K_sym`.
fn spectral_radius(op: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<f64> {
    let sym = 0.5 * (op + op.transpose());
    Ok(*generalized_eigenvalues(&sym, mass)?.last().unwrap_or(&0.0))
}

fn theta_scheme(
    system: &DiscreteSystem,
    op: &DMatrix<f64>,
    u0: &DiscreteFunction,
    load: &dyn Fn(f64) -> DVector<f64>,
    cfg: &TimeSteppingConfig,
) -> Result<(Trajectory, EnergyLedger)> {
    cfg.validate()?;
    let n = system.mass.nrows();
    if u0.coeffs.len() != n {
        return Err(NonlocalError::DimensionMismatch {
            expected: n,
            got: u0.coeffs.len(),
        });
    }
    if u0.grid_id != system.grid_id {
        return Err(NonlocalError::InvalidGrid(format!(
            "initial state lives on {} but the system on {}",
            u0.grid_id, system.grid_id
        )));
    }
    let (theta, dt) = (cfg.theta, cfg.dt);
    if theta < 0.5 {
        let bound = 2.0 / ((1.0 - 2.0 * theta) * spectral_radius(op, &system.mass)?);
        if dt > bound {
            return Err(NonlocalError::StabilityBound { dt, bound });
        }
    }

    let m = &system.mass;
    let lhs = Factor::new(m + op * (theta * dt))?;
    let explicit = m - op * ((1.0 - theta) * dt);

    let half_c = system.spec.half_c_ns();
    let (lmin, lmax) = system.lambda;
    let c_coer = half_c * lmin;
    let c_p = estimate_poincare(system)?;
    let gram_chol = Cholesky::factor(&system.gram)?;
    let dual_sq = |t: f64| {
        let y = gram_chol.forward(&load(t));
        y.dot(&y)
    };
    let triple_sq = |u: &DVector<f64>| u.dot(&(&system.gram * u)) / half_c;

    let u_start = u0.coeffs.clone();
    let l2_0 = u_start.dot(&(m * &u_start));
    let mut ledger = EnergyLedger {
        c_coer,
        c_cont: half_c * lmax,
        c_p,
        entries: vec![LedgerEntry {
            t: 0.0,
            l2_sq: l2_0,
            energy: 0.0,
            rhs: l2_0,
            rhs_energy: l2_0,
        }],
    };
    let mut traj = Trajectory {
        grid_id: system.grid_id.clone(),
        times: vec![0.0],
        states: vec![u_start.clone()],
        l2_sq_per_step: vec![l2_0],
    };

    let rhs_scale = c_p * c_p / (2.0 * c_coer);
    let mut last = (0.0, triple_sq(&u_start), dual_sq(0.0));
    let (mut energy, mut forcing) = (0.0, 0.0);
    let mut u = u_start;
    for k in 0..cfg.steps() {
        let t = k as f64 * dt;
        let rhs = &explicit * &u + load(t + theta * dt) * dt;
        u = lhs.solve(&rhs);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(NonlocalError::NonConvergence {
                context: format!("time step {k}"),
                estimate: f64::INFINITY,
                tolerance: 0.0,
            });
        }
        let l2 = u.dot(&(m * &u));
        traj.l2_sq_per_step.push(l2);
        if (k + 1) % cfg.stride == 0 || k + 1 == cfg.steps() {
            let t1 = (k + 1) as f64 * dt;
            let now = (t1, triple_sq(&u), dual_sq(t1));
            let span = now.0 - last.0;
            energy += 0.5 * span * (last.1 + now.1);
            forcing += 0.5 * span * (last.2 + now.2);
            last = now;
            ledger.entries.push(LedgerEntry {
                t: t1,
                l2_sq: l2,
                energy: c_coer * energy,
                rhs: l2_0 + rhs_scale * forcing,
                // ‖f‖²_{V'} = (C/2)·FᵀK_iso⁻¹F for the |||·||| normalisation
                rhs_energy: l2_0 + half_c * forcing / c_coer,
            });
            traj.times.push(t1);
            traj.states.push(u.clone());
        }
    }
    Ok((traj, ledger))
}

/// θ-scheme for `(∂ₜu, v) + B_{ω;A}(u, v) = F(v)`.
pub fn solve_parabolic(
    system: &DiscreteSystem,
    u0: &DiscreteFunction,
    load: &dyn Fn(f64) -> DVector<f64>,
    cfg: &TimeSteppingConfig,
) -> Result<(Trajectory, EnergyLedger)> {
    theta_scheme(system, &system.stiffness, u0, load, cfg)
}

/// θ-scheme for the advection–diffusion problem with operator `K_A + C`.
/// Orders below one half are rejected.
pub fn solve_transport(
    system: &DiscreteSystem,
    u0: &DiscreteFunction,
    load: &dyn Fn(f64) -> DVector<f64>,
    cfg: &TimeSteppingConfig,
) -> Result<(Trajectory, EnergyLedger)> {
    let s = system.spec.s;
    if !(0.5..1.0).contains(&s) {
        return Err(NonlocalError::OrderOutOfRange(s));
    }
    let c = system
        .advection
        .as_ref()
        .ok_or_else(|| NonlocalError::NotSolenoidal("system carries no advection matrix".into()))?;
    let skew = skew_defect(c);
    if skew > 1e-12 {
        return Err(NonlocalError::NotSolenoidal(format!(
            "advection matrix symmetric part {skew:e} relative"
        )));
    }
    theta_scheme(system, &(&system.stiffness + c), u0, load, cfg)
}

/// `max|C + Cᵀ| / max|C|`, zero for an exactly skew matrix.
pub fn skew_defect(c: &DMatrix<f64>) -> f64 {
    let scale = c.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (c + c.transpose()).amax() / scale
}

/// `(∫u, ∫x u)` of a piecewise-linear function on a 1-D grid.
pub fn mass_and_first_moment(grid: &Grid, u: &DVector<f64>) -> (f64, f64) {
    let xs = grid.dof_points();
    let h = grid.h;
    let mass = u.iter().sum::<f64>() * h;
    let first = xs.iter().zip(u.iter()).map(|(x, v)| x * v).sum::<f64>() * h;
    (mass, first)
}
