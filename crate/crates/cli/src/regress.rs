//! `deskrl regress`: fits score = a·log2(x) + b·log2(y) + c (standardized
//! axes) over a CSV of points and prints the recovered coefficients.

use std::path::PathBuf;

use clap::Args;
use deskrl_core::evalkit::fit_scaling;

use crate::util::{resolve_out, write_json, CliError};
use std::fs;

#[derive(Args)]
pub struct RegressArgs {
    /// CSV with header `x,y,z`: the two scale axes and the score.
    #[arg(long)]
    points: PathBuf,
    /// Output directory (falls back to DESKRL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_points(path: &PathBuf) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "x,y,z" => {}
        Some((_, header)) => {
            return Err(CliError::Input(format!(
                "{}:1: expected header \"x,y,z\", found {header:?}",
                path.display()
            )))
        }
        None => return Err(CliError::Input(format!("{}: empty file", path.display()))),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{}: expected 3 comma-separated values, found {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 3];
        for (j, field) in fields.iter().enumerate() {
            vals[j] = field.trim().parse().map_err(|e| {
                CliError::Input(format!("{}:{}: {field:?}: {e}", path.display(), i + 1))
            })?;
        }
        points.push((vals[0], vals[1], vals[2]));
    }
    Ok(points)
}

pub fn run(args: RegressArgs) -> Result<(), CliError> {
    let out = resolve_out(args.out)?;
    let points = parse_points(&args.points)?;
    let fit = fit_scaling(&points)?;
    write_json(&out.join("fit.json"), &fit)?;
    println!("a={:.3}, b={:.3}, R²={:.3}", fit.a, fit.b, fit.r_squared);
    Ok(())
}
