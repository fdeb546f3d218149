use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use nonlocal_core::discretization::{assemble_system, build_grid, DiscreteFunction, DiscreteSystem, Execution, Grid};
use nonlocal_core::error::NonlocalError;
use nonlocal_core::export::{convergence_csv, csv_string, ledger_csv, profile_rows, report_csv, PROFILE_HEADER};
use nonlocal_core::kernelcore::{
    equivalence_kernel, ConstantIsotropic, DiffusionTensorField, KernelSpec, ScalarModulated,
};
use nonlocal_core::operators::ScalarField;
use nonlocal_core::quadrature::QuadratureBudget;
use nonlocal_core::solvers::{
    mass_and_first_moment, solve_elliptic, solve_parabolic, solve_transport, TimeSteppingConfig, Trajectory,
};
use nonlocal_core::verify::{run_convergence_study, run_suite, Problem, SuiteConfig, Tolerances};
use thiserror::Error;

use crate::config::{Command, ConfigError, ForcingKind, InitialKind, ProblemKind, RunConfig, TensorKind};
use crate::svg::{render, Chart, Series};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] NonlocalError),
    #[error("{failed} identity check(s) failed")]
    ChecksFailed { failed: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// 0 ok, 1 i/o, 2 configuration, 3 numerical failure, 4 identity-check failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Io(_) => 1,
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::ChecksFailed { .. } => 4,
        }
    }
}

/// What a run produced: files relative to the output directory and a short
/// human-readable summary.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<String>,
    pub lines: Vec<String>,
}

struct Output<'a> {
    dir: &'a Path,
    summary: RunSummary,
}

impl Output<'_> {
    fn write(&mut self, name: &str, text: &str) -> io::Result<()> {
        fs::write(self.dir.join(name), text)?;
        self.summary.files.push(name.to_string());
        Ok(())
    }
}

fn exec(cfg: &RunConfig) -> Execution {
    if cfg.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

fn budget(cfg: &RunConfig) -> Result<QuadratureBudget, RunError> {
    let q = &cfg.quadrature;
    Ok(QuadratureBudget::new(q.panels, q.levels, q.tolerance)?)
}

fn tensor(cfg: &RunConfig) -> Result<Box<dyn DiffusionTensorField>, RunError> {
    let n = cfg.kernel.n;
    let t = &cfg.tensor;
    Ok(match t.kind {
        TensorKind::Identity => Box::new(ConstantIsotropic::identity(n)),
        TensorKind::Constant => Box::new(ConstantIsotropic { n, c: t.value }),
        TensorKind::Sinusoidal => Box::new(ScalarModulated::sinusoidal(n, t.mean, t.amplitude)?),
    })
}

fn forcing(cfg: &RunConfig) -> f64 {
    match cfg.forcing.kind {
        ForcingKind::Zero => 0.0,
        ForcingKind::Constant => cfg.forcing.value,
    }
}

fn system(cfg: &RunConfig, velocity: Option<&dyn Fn(f64) -> f64>) -> Result<(Grid, DiscreteSystem), RunError> {
    let d = &cfg.domain;
    let grid = build_grid(&[(d.a, d.b)], d.h, d.collar)?;
    let spec = KernelSpec::new(1, cfg.s())?;
    let f = forcing(cfg);
    let field = tensor(cfg)?;
    let sys = assemble_system(&grid, &spec, field.as_ref(), velocity, &|_| f, &budget(cfg)?, exec(cfg))?;
    Ok((grid, sys))
}

fn initial(cfg: &RunConfig, grid: &Grid) -> Result<DiscreteFunction, RunError> {
    let i = &cfg.initial;
    let field = match i.kind.expect("validated") {
        InitialKind::Bump => ScalarField::bump(i.radius)?,
        InitialKind::Plume => ScalarField::truncated_gaussian(i.sigma, i.radius)?,
    }
    .shifted(i.center);
    Ok(DiscreteFunction::interpolate(grid, |x| field.at(x))?)
}

fn profile_points(grid: &Grid, u: &DVector<f64>) -> Vec<(f64, f64)> {
    profile_rows(grid, u.as_slice()).iter().map(|r| (r[0], r[1])).collect()
}

/// Runs the configured command, writing artifacts into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let mut out = Output {
        dir: &cfg.out,
        summary: RunSummary::default(),
    };
    match cfg.command {
        Command::Verify => verify(cfg, &mut out)?,
        Command::SolveElliptic => elliptic(cfg, &mut out)?,
        Command::SolveParabolic | Command::SolveTransport => evolve(cfg, &mut out)?,
        Command::KernelTable => kernel_table(cfg, &mut out)?,
        Command::Convergence => convergence(cfg, &mut out)?,
    }
    Ok(out.summary)
}

fn verify(cfg: &RunConfig, out: &mut Output) -> Result<(), RunError> {
    let o = &cfg.tolerances;
    let d = Tolerances::default();
    let tol = Tolerances {
        operator_equivalence: o.operator_equivalence.unwrap_or(d.operator_equivalence),
        kernel_ratio: o.kernel_ratio.unwrap_or(d.kernel_ratio),
        kernel_symmetry: o.kernel_symmetry.unwrap_or(d.kernel_symmetry),
        rayleigh_slack: o.rayleigh_slack.unwrap_or(d.rayleigh_slack),
        rayleigh_agreement: o.rayleigh_agreement.unwrap_or(d.rayleigh_agreement),
        ledger_slack: o.ledger_slack.unwrap_or(d.ledger_slack),
        green: o.green.unwrap_or(d.green),
        weight_transformation: o.weight_transformation.unwrap_or(d.weight_transformation),
        transport_skew: o.transport_skew.unwrap_or(d.transport_skew),
        matrix_factor: o.matrix_factor.unwrap_or(d.matrix_factor),
    };
    let b = budget(cfg)?;
    let suite = SuiteConfig {
        h: cfg.domain.h,
        seed: cfg.seed,
        budget: b,
        kernel_budget: b,
        exec: exec(cfg),
        tol,
    };
    let reports = run_suite(&suite)?;
    out.write("report.csv", &report_csv(&reports))?;

    let mut text = String::new();
    for r in &reports {
        let tag = match (r.pass, r.gating) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "info",
        };
        text.push_str(&format!(
            "{tag:<4}  {:<28} {:<48} error {:.3e}  tol {:.1e}\n",
            r.anchor.label(),
            r.name,
            r.error,
            r.tolerance
        ));
    }
    let failed = reports.iter().filter(|r| r.gating && !r.pass).count();
    let info = reports.iter().filter(|r| !r.gating && !r.pass).count();
    let last = format!(
        "{} checks, {} gating failure(s), {} informational check(s) outside tolerance",
        reports.len(),
        failed,
        info
    );
    text.push_str(&last);
    text.push('\n');
    out.write("summary.txt", &text)?;
    out.summary.lines.push(last);
    if failed > 0 {
        return Err(RunError::ChecksFailed { failed });
    }
    Ok(())
}

fn elliptic(cfg: &RunConfig, out: &mut Output) -> Result<(), RunError> {
    let (grid, sys) = system(cfg, None)?;
    let u = solve_elliptic(&sys)?;
    out.write(
        "solution.csv",
        &csv_string(&PROFILE_HEADER, &profile_rows(&grid, u.coeffs.as_slice())),
    )?;
    let svg = render(&Chart {
        title: &format!("elliptic solution, s = {}, {}", cfg.s(), sys.field_id),
        x_label: "x",
        y_label: "u",
        series: vec![Series {
            label: "u_h",
            points: profile_points(&grid, &u.coeffs),
        }],
        y_range: None,
    });
    out.write("solution.svg", &svg)?;
    out.summary
        .lines
        .push(format!("max u_h = {:.6e} on {} dofs", u.coeffs.max(), grid.dofs()));
    Ok(())
}

fn evolve(cfg: &RunConfig, out: &mut Output) -> Result<(), RunError> {
    let transport = cfg.command == Command::SolveTransport;
    let speed = cfg.advection.speed.unwrap_or(0.0);
    let drift = move |_: f64| speed;
    let (grid, sys) = system(cfg, transport.then_some(&drift as &dyn Fn(f64) -> f64))?;
    let u0 = initial(cfg, &grid)?;
    let t = &cfg.time;
    let steps = TimeSteppingConfig::new(t.t_end.expect("validated"), t.dt.expect("validated"), t.theta, t.stride)?;
    let load = sys.load.clone();
    let (traj, ledger) = if transport {
        solve_transport(&sys, &u0, &|_| load.clone(), &steps)?
    } else {
        solve_parabolic(&sys, &u0, &|_| load.clone(), &steps)?
    };
    write_snapshots(cfg, out, &grid, &traj)?;
    out.write("ledger.csv", &ledger_csv(&ledger))?;

    if transport {
        let rows: Vec<Vec<f64>> = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, u)| {
                let (m, first) = mass_and_first_moment(&grid, u);
                vec![t, m, first / m]
            })
            .collect();
        out.write(
            "moments.csv",
            &csv_string(&["t [time]", "mass [u length]", "centre_of_mass [length]"], &rows),
        )?;
        let (first, last) = (&rows[0], &rows[rows.len() - 1]);
        out.summary.lines.push(format!(
            "centre of mass {:.4} -> {:.4}, mass {:.4e} -> {:.4e}",
            first[2], last[2], first[1], last[1]
        ));
    }
    let violations = ledger.first_violation_energy(0.0);
    out.summary.lines.push(format!(
        "{} snapshots, final L2^2 {:.4e}, energy bound {}",
        traj.states.len(),
        traj.l2_sq_per_step.last().copied().unwrap_or(f64::NAN),
        match violations {
            None => "holds at every step".to_string(),
            Some(e) => format!("first exceeded at t = {}", e.t),
        }
    ));
    Ok(())
}

fn write_snapshots(cfg: &RunConfig, out: &mut Output, grid: &Grid, traj: &Trajectory) -> Result<(), RunError> {
    let hi = traj.states.iter().map(|u| u.amax()).fold(0.0, f64::max);
    let y_range = Some((-0.05 * hi.max(1e-300), 1.05 * hi.max(1e-300)));
    for (k, (t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut text = format!("# t = {t:e}\n");
        text.push_str(&csv_string(&PROFILE_HEADER, &profile_rows(grid, u.as_slice())));
        out.write(&format!("snapshot_{k:04}.csv"), &text)?;
        let svg = render(&Chart {
            title: &format!("{} t = {:.4}", cfg.command, t),
            x_label: "x",
            y_label: "u",
            series: vec![Series {
                label: "u_h",
                points: profile_points(grid, u),
            }],
            y_range,
        });
        out.write(&format!("snapshot_{k:04}.svg"), &svg)?;
    }
    Ok(())
}

fn kernel_table(cfg: &RunConfig, out: &mut Output) -> Result<(), RunError> {
    let n = cfg.kernel.n;
    let spec = KernelSpec::new(n, cfg.s())?;
    let field = tensor(cfg)?;
    let b = budget(cfg)?;
    let k = &cfg.kernel_table;
    let mut rows = Vec::with_capacity(k.points);
    for i in 0..k.points {
        let r = if k.points == 1 {
            k.r_min
        } else {
            k.r_min + (k.r_max - k.r_min) * i as f64 / (k.points - 1) as f64
        };
        let x = vec![0.0; n];
        let mut z = vec![0.0; n];
        z[0] = r;
        let eq = equivalence_kernel(&spec, field.as_ref(), &x, &z, &b)?;
        let fl = spec.gamma_fl_radial(r);
        rows.push(vec![r, eq, fl, eq / fl]);
    }
    out.write(
        "kernel_table.csv",
        &csv_string(
            &[
                "r [length]",
                "gamma_eq [length^-(n+2s)]",
                "gamma_fl [length^-(n+2s)]",
                "ratio [-]",
            ],
            &rows,
        ),
    )?;
    let svg = render(&Chart {
        title: &format!("equivalence kernel / fractional kernel, {}", field.id()),
        x_label: "|x - z|",
        y_label: "gamma_eq / gamma_fl",
        series: vec![Series {
            label: "ratio",
            points: rows.iter().map(|r| (r[0], r[3])).collect(),
        }],
        y_range: None,
    });
    out.write("kernel_table.svg", &svg)?;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r[3]), hi.max(r[3]))
    });
    out.summary
        .lines
        .push(format!("{} separations, ratio in [{lo:.6}, {hi:.6}]", rows.len()));
    Ok(())
}

fn convergence(cfg: &RunConfig, out: &mut Output) -> Result<(), RunError> {
    let c = &cfg.convergence;
    let s = cfg.s();
    let problem = match c.problem {
        ProblemKind::Getoor => Problem::Getoor { s },
        ProblemKind::ZeroLoad => Problem::ZeroLoad { s },
    };
    let hs: Vec<f64> = (0..c.levels).map(|k| c.h_max / 2f64.powi(k as i32)).collect();
    let rows = run_convergence_study(problem, &hs, &budget(cfg)?, exec(cfg))?;
    out.write("convergence.csv", &convergence_csv(&rows))?;
    let svg = render(&Chart {
        title: &format!("L2 error, s = {s}"),
        x_label: "log10 h",
        y_label: "log10 error",
        series: vec![Series {
            label: "L2 error",
            points: rows.iter().map(|r| (r.h.log10(), r.l2_error.log10())).collect(),
        }],
        y_range: None,
    });
    out.write("convergence.svg", &svg)?;
    if let Some(last) = rows.last() {
        out.summary.lines.push(format!(
            "h = {:.4e}: L2 error {:.4e}, observed order {}",
            last.h,
            last.l2_error,
            last.order.map_or("-".to_string(), |o| format!("{o:.3}"))
        ));
    }
    Ok(())
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
    crate::config::parse_config(&text)
}

/// Applies command-line overrides on top of a parsed configuration.
pub fn with_overrides(mut cfg: RunConfig, out: Option<PathBuf>, serial: bool, seed: Option<u64>) -> RunConfig {
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.serial |= serial;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}
