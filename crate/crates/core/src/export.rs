//! Plain-text outputs: comma-separated, '.' decimal, one header row naming
//! columns and units. Numbers use the shortest round-trip representation,
//! so identical runs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;

use crate::discretization::Grid;
use crate::solvers::{EnergyLedger, Trajectory};
use crate::verify::{ConvergenceRow, IdentityReport};

pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    fs::write(path, csv_string(header, rows))
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(reports: &[IdentityReport]) -> String {
    let mut out = String::from("name,anchor,ids,error [-],tolerance [-],pass,gating\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{:e},{:e},{},{}",
            quote(&r.name),
            r.anchor.label(),
            quote(&r.ids),
            r.error,
            r.tolerance,
            r.pass,
            r.gating
        );
    }
    out
}

/// `(x, u)` rows with the zero boundary values of Ω included.
pub fn profile_rows(grid: &Grid, coeffs: &[f64]) -> Vec<Vec<f64>> {
    let ax = &grid.axes[0];
    let mut rows = vec![vec![ax.a, 0.0]];
    rows.extend(grid.dof_points().into_iter().zip(coeffs).map(|(x, &u)| vec![x, u]));
    rows.push(vec![ax.b, 0.0]);
    rows
}

pub const PROFILE_HEADER: [&str; 2] = ["x [length]", "u [solution units]"];

/// One `snapshot_NNNN.csv` per recorded state; returns the file names.
pub fn write_trajectory(dir: &Path, grid: &Grid, traj: &Trajectory) -> io::Result<Vec<String>> {
    let mut names = Vec::new();
    for (k, (t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        let name = format!("snapshot_{k:04}.csv");
        let mut text = format!("# t = {t:e}\n");
        text.push_str(&csv_string(&PROFILE_HEADER, &profile_rows(grid, u.as_slice())));
        fs::write(dir.join(&name), text)?;
        names.push(name);
    }
    Ok(names)
}

pub fn ledger_csv(ledger: &EnergyLedger) -> String {
    let rows: Vec<Vec<f64>> = ledger
        .entries
        .iter()
        .map(|e| vec![e.t, e.l2_sq, e.energy, e.lhs(), e.rhs, e.rhs_energy])
        .collect();
    let mut out = format!(
        "# c_coer = {:e}, c_cont = {:e}, c_p = {:e}\n",
        ledger.c_coer, ledger.c_cont, ledger.c_p
    );
    out.push_str(&csv_string(
        &[
            "t [time]",
            "l2_sq [u^2 length]",
            "energy [u^2 length]",
            "lhs [u^2 length]",
            "rhs [u^2 length]",
            "rhs_dual_norm [u^2 length]",
        ],
        &rows,
    ));
    out
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let data: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.h, r.l2_error, r.order.unwrap_or(f64::NAN), r.u_center])
        .collect();
    csv_string(
        &["h [length]", "l2_error [u length^0.5]", "order [-]", "u_at_0 [u]"],
        &data,
    )
}

/// Dense matrix, one row per line, with a one-line header.
pub fn matrix_text(name: &str, m: &DMatrix<f64>) -> String {
    let mut out = format!("# {name} {}x{}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::Anchor;

    #[test]
    fn csv_has_header_and_round_trips() {
        let text = csv_string(&["a [-]", "b [-]"], &[vec![0.1, -2.5e-17], vec![1.0 / 3.0, 0.0]]);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("a [-],b [-]"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(row, vec![0.1, -2.5e-17]);
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(row[0], 1.0 / 3.0);
    }

    #[test]
    fn report_quotes_commas() {
        let r = IdentityReport::new("a, b", Anchor::OperatorEquivalence, "x", 1e-3, 1e-2);
        let text = report_csv(&[r]);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("\"a, b\",operator-equivalence,x,"));
    }

    #[test]
    fn matrix_header_line() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matrix_text("K", &m), "# K 2x2\n1e0 2e0\n3e0 4e0\n");
    }
}
