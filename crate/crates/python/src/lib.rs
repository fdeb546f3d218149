//! Python bindings: thin wrappers returning plain lists, tuples and dicts.

use nalgebra::DVector;
use nonlocal_core::discretization::{assemble_system, build_grid, DiscreteFunction, DiscreteSystem, Execution, Grid};
use nonlocal_core::error::NonlocalError;
use nonlocal_core::kernelcore::{self, ConstantIsotropic, DiffusionTensorField, KernelSpec, ScalarModulated};
use nonlocal_core::operators::ScalarField;
use nonlocal_core::quadrature::QuadratureBudget;
use nonlocal_core::solvers::{self, TimeSteppingConfig};
use nonlocal_core::verify::{self, Problem, SuiteConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: NonlocalError) -> PyErr {
    match e {
        NonlocalError::Domain(_)
        | NonlocalError::DegenerateDomain(_)
        | NonlocalError::InvalidGrid(_)
        | NonlocalError::OrderOutOfRange(_)
        | NonlocalError::CoincidentPoints(_)
        | NonlocalError::DimensionMismatch { .. }
        | NonlocalError::Unsupported(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn budget() -> QuadratureBudget {
    QuadratureBudget::new(4, 12, 1e-9).expect("valid default budget")
}

fn exec(serial: bool) -> Execution {
    if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

/// `"identity"`, `"constant:<c>"` or `"sinusoidal:<mean>:<amplitude>"`.
fn tensor(id: &str) -> PyResult<Box<dyn DiffusionTensorField>> {
    let parts: Vec<&str> = id.split(':').collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| PyValueError::new_err(format!("bad number {s:?} in tensor {id:?}")))
    };
    match parts.as_slice() {
        ["identity"] => Ok(Box::new(ConstantIsotropic::identity(1))),
        ["constant", c] => {
            let c = num(c)?;
            if !(c > 0.0) {
                return Err(PyValueError::new_err("constant tensor needs c > 0"));
            }
            Ok(Box::new(ConstantIsotropic { n: 1, c }))
        }
        ["sinusoidal", m, a] => Ok(Box::new(
            ScalarModulated::sinusoidal(1, num(m)?, num(a)?).map_err(to_py)?,
        )),
        _ => Err(PyValueError::new_err(format!("unknown tensor {id:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn system(
    s: f64,
    h: f64,
    a: f64,
    b: f64,
    collar: f64,
    tensor_id: &str,
    forcing: f64,
    speed: Option<f64>,
    serial: bool,
) -> PyResult<(Grid, DiscreteSystem)> {
    let grid = build_grid(&[(a, b)], h, collar).map_err(to_py)?;
    let spec = KernelSpec::new(1, s).map_err(to_py)?;
    let field = tensor(tensor_id)?;
    let drift = move |_: f64| speed.unwrap_or(0.0);
    let velocity = speed.map(|_| &drift as &dyn Fn(f64) -> f64);
    let sys = assemble_system(
        &grid,
        &spec,
        field.as_ref(),
        velocity,
        &|_| forcing,
        &budget(),
        exec(serial),
    )
    .map_err(to_py)?;
    Ok((grid, sys))
}

fn with_boundary(grid: &Grid, u: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let ax = &grid.axes[0];
    let mut x = vec![ax.a];
    x.extend(grid.dof_points());
    x.push(ax.b);
    let mut v = vec![0.0];
    v.extend(u.iter());
    v.push(0.0);
    (x, v)
}

#[pyfunction]
fn riesz_constant(n: usize, s: f64) -> PyResult<f64> {
    kernelcore::riesz_constant(n, s).map_err(to_py)
}

#[pyfunction]
fn weight_constant(n: usize, s: f64) -> PyResult<f64> {
    kernelcore::weight_constant(n, s).map_err(to_py)
}

/// Equivalence kernel and fractional kernel at the 1-D pair `(x, z)`.
#[pyfunction]
#[pyo3(signature = (s, x, z, tensor="identity"))]
fn equivalence_kernel(s: f64, x: f64, z: f64, tensor: &str) -> PyResult<(f64, f64)> {
    let spec = KernelSpec::new(1, s).map_err(to_py)?;
    let field = self::tensor(tensor)?;
    let eq = kernelcore::equivalence_kernel(&spec, field.as_ref(), &[x], &[z], &budget()).map_err(to_py)?;
    Ok((eq, spec.gamma_fl_radial((x - z).abs())))
}

/// Solves the stationary problem; returns `(x, u)` including boundary zeros.
#[pyfunction]
#[pyo3(signature = (s, h, forcing=1.0, tensor="identity", a=-1.0, b=1.0, collar=0.25, serial=true))]
#[allow(clippy::too_many_arguments)]
fn solve_elliptic(
    s: f64,
    h: f64,
    forcing: f64,
    tensor: &str,
    a: f64,
    b: f64,
    collar: f64,
    serial: bool,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let (grid, sys) = system(s, h, a, b, collar, tensor, forcing, None, serial)?;
    let u = solvers::solve_elliptic(&sys).map_err(to_py)?;
    Ok(with_boundary(&grid, &u.coeffs))
}

/// θ-scheme from a bump (or, with `speed`, a plume at -0.5 under constant
/// drift). Returns `(times, x, states, ledger_ok)`.
#[pyfunction]
#[pyo3(signature = (s, h, t_end, dt, theta=1.0, stride=1, speed=None, forcing=0.0, tensor="identity", serial=true))]
#[allow(clippy::too_many_arguments)]
fn solve_evolution(
    s: f64,
    h: f64,
    t_end: f64,
    dt: f64,
    theta: f64,
    stride: usize,
    speed: Option<f64>,
    forcing: f64,
    tensor: &str,
    serial: bool,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>, bool)> {
    let (grid, sys) = system(s, h, -1.0, 1.0, 0.25, tensor, forcing, speed, serial)?;
    let u0 = match speed {
        None => ScalarField::bump(1.0).map_err(to_py)?,
        Some(_) => ScalarField::truncated_gaussian(0.15, 0.45)
            .map_err(to_py)?
            .shifted(-0.5),
    };
    let u0 = DiscreteFunction::interpolate(&grid, |x| u0.at(x)).map_err(to_py)?;
    let cfg = TimeSteppingConfig::new(t_end, dt, theta, stride).map_err(to_py)?;
    let load = sys.load.clone();
    let (traj, ledger) = match speed {
        None => solvers::solve_parabolic(&sys, &u0, &|_| load.clone(), &cfg),
        Some(_) => solvers::solve_transport(&sys, &u0, &|_| load.clone(), &cfg),
    }
    .map_err(to_py)?;
    let x = with_boundary(&grid, &traj.states[0]).0;
    let states = traj.states.iter().map(|u| with_boundary(&grid, u).1).collect();
    Ok((traj.times, x, states, ledger.first_violation_energy(0.0).is_none()))
}

/// Getoor convergence study on `(-1, 1)`: list of `(h, l2_error, order, u(0))`.
#[pyfunction]
#[pyo3(signature = (s, hs, serial=true))]
fn convergence(s: f64, hs: Vec<f64>, serial: bool) -> PyResult<Vec<(f64, f64, Option<f64>, f64)>> {
    let rows = verify::run_convergence_study(Problem::Getoor { s }, &hs, &budget(), exec(serial)).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.h, r.l2_error, r.order, r.u_center))
        .collect())
}

/// Runs the identity suite; one dict per check.
#[pyfunction]
#[pyo3(signature = (h=0.03125, seed=7, serial=true))]
fn verify_suite(py: Python<'_>, h: f64, seed: u64, serial: bool) -> PyResult<Vec<Py<PyDict>>> {
    let cfg = SuiteConfig {
        h,
        seed,
        exec: exec(serial),
        ..SuiteConfig::default()
    };
    let reports = py.detach(|| verify::run_suite(&cfg)).map_err(to_py)?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("anchor", r.anchor.label())?;
            d.set_item("ids", r.ids)?;
            d.set_item("error", r.error)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("pass", r.pass)?;
            d.set_item("gating", r.gating)?;
            Ok(d.unbind())
        })
        .collect()
}

#[pymodule]
fn nonlocal_diffusion(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(riesz_constant, m)?)?;
    m.add_function(wrap_pyfunction!(weight_constant, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(solve_elliptic, m)?)?;
    m.add_function(wrap_pyfunction!(solve_evolution, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    Ok(())
}
