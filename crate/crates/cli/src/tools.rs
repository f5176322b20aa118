//! `fit` and `plotdata`: post-processing of CSVs written by the experiments.

use nvsim_core::analysis::{fit_double_exponential, fit_exponential, fit_gaussian_peak, fit_scaling_model, ScalingPoint};
use serde_json::json;

use crate::data::{CliError, CliResult};
use crate::experiments::pretty;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Trace,
    SweepTau,
    SweepT,
    Pump,
    Scaling,
    Ionization,
    InitFidelity,
}

impl Schema {
    pub fn detect(header: &str) -> CliResult<Self> {
        let h = header.trim();
        let schema = match h {
            "n,xy_len,xy_err,z,survival" => Schema::Trace,
            "tau_us,xy_len,xy_err,z,survival" => Schema::SweepTau,
            "t_us,xy_len,xy_err,z,survival" => Schema::SweepT,
            "t_ns,p_0,p_m1,p_p1,p_ex,p_singlet" => Schema::Pump,
            "subspace,delta_omega_khz,n_1e,err,model_n_1e" => Schema::Scaling,
            "n,survival_mc,survival_model" => Schema::Ionization,
            "spin_id,f_ir,err" => Schema::InitFidelity,
            _ => return Err(CliError::Config(format!("unrecognised CSV header `{h}`"))),
        };
        Ok(schema)
    }
}

pub struct Table {
    pub schema: Schema,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| CliError::Config("empty CSV".into()))?;
        let schema = Schema::detect(header)?;
        let columns: Vec<String> = header.trim().split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.trim().split(',').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(CliError::Config(format!(
                    "row {}: expected {} fields, found {}",
                    i + 1,
                    columns.len(),
                    row.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { schema, columns, rows })
    }

    fn col(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("column of a detected schema")
    }

    /// Numeric column; `nan` entries are kept.
    pub fn numbers(&self, name: &str) -> CliResult<Vec<f64>> {
        let j = self.col(name);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("row {}, column {name}: not a number: `{}`", i + 1, r[j])))
            })
            .collect()
    }

    fn triples(&self, x: &str, y: &str, err: Option<&str>) -> CliResult<Vec<(f64, f64, f64)>> {
        let xs = self.numbers(x)?;
        let ys = self.numbers(y)?;
        let es = match err {
            Some(e) => self.numbers(e)?,
            None => vec![0.0; xs.len()],
        };
        Ok(xs
            .into_iter()
            .zip(ys)
            .zip(es)
            .map(|((x, y), e)| (x, y, e))
            .filter(|p| p.0.is_finite() && p.1.is_finite() && p.2.is_finite())
            .collect())
    }
}

fn fit_error(model: &str, e: nvsim_core::Error) -> CliError {
    CliError::Runtime(format!("{model} fit: {e}"))
}

/// Picks the model that belongs to the schema and returns the result as JSON.
pub fn fit(text: &str) -> CliResult<String> {
    let t = Table::parse(text)?;
    let v = match t.schema {
        Schema::Trace | Schema::Ionization => {
            let pts = match t.schema {
                Schema::Trace => t.triples("n", "xy_len", Some("xy_err"))?,
                _ => t.triples("n", "survival_mc", None)?,
            };
            let f = fit_exponential(&pts).map_err(|e| fit_error("exponential", e))?;
            json!({
                "model": "exponential",
                "params": {"amplitude": f.amplitude, "n_1e": f.n_1e},
                "errs": {"amplitude": f.amplitude_err, "n_1e": f.n_1e_err},
                "residual_norm": f.residual_norm,
                "flags": {"no_decay": f.no_decay},
            })
        }
        Schema::SweepTau | Schema::SweepT => {
            let x = if t.schema == Schema::SweepTau { "tau_us" } else { "t_us" };
            let f = fit_gaussian_peak(&t.triples(x, "xy_len", Some("xy_err"))?).map_err(|e| fit_error("gaussian", e))?;
            json!({
                "model": "gaussian",
                "params": {"center": f.center, "width": f.width, "amplitude": f.amplitude, "offset": f.offset},
                "errs": {"center": f.center_err, "width": f.width_err, "amplitude": f.amplitude_err, "offset": f.offset_err},
                "residual_norm": f.residual_norm,
                "flags": {"flat": f.flat},
            })
        }
        Schema::Pump => {
            let pts: Vec<_> = t.triples("t_ns", "p_0", None)?.into_iter().map(|(x, y, e)| (x, 1.0 - y, e)).collect();
            let f = fit_double_exponential(&pts).map_err(|e| fit_error("double exponential", e))?;
            json!({
                "model": "double_exponential",
                "params": {"weight": f.weight, "t_fast_ns": f.t_fast, "t_slow_ns": f.t_slow},
                "errs": {"weight": f.weight_err, "t_fast_ns": f.t_fast_err, "t_slow_ns": f.t_slow_err},
                "residual_norm": f.residual_norm,
                "flags": {"degenerate": f.degenerate},
            })
        }
        Schema::Scaling => {
            let pts: Vec<ScalingPoint> = t
                .triples("delta_omega_khz", "n_1e", Some("err"))?
                .into_iter()
                .filter(|p| p.0 > 0.0 && p.1 > 0.0)
                .map(|(dw, n, e)| ScalingPoint {
                    delta_omega_khz: dw,
                    n_1e: n,
                    err: if e > 0.0 { e } else { 1.0 },
                })
                .collect();
            let f = fit_scaling_model(&pts).map_err(|e| fit_error("scaling", e))?;
            json!({
                "model": "scaling",
                "params": {"tau_us": f.tau_us, "c_khz": f.c_khz},
                "errs": {"tau_us": f.tau_err, "c_khz": f.c_err},
                "residual_norm": f.residual_norm,
                "flags": {"condition_number": f.condition_number},
            })
        }
        Schema::InitFidelity => {
            return Err(CliError::Config("init-fidelity CSV has no model to fit".into()));
        }
    };
    Ok(pretty(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Line,
    ScatterLogy,
}

/// Whitespace-separated columns with a `#` header naming axes and units.
pub fn plotdata(text: &str, kind: PlotKind) -> CliResult<String> {
    let t = Table::parse(text)?;
    let (cols, labels): (&[&str], &[&str]) = match t.schema {
        Schema::Trace => (&["n", "xy_len", "xy_err"], &["N (repetitions)", "xy_len", "xy_err"]),
        Schema::SweepTau => (&["tau_us", "xy_len", "xy_err"], &["tau (us)", "xy_len", "xy_err"]),
        Schema::SweepT => (&["t_us", "xy_len", "xy_err"], &["t (us)", "xy_len", "xy_err"]),
        Schema::Pump => (&["t_ns", "p_0"], &["t (ns)", "p_0"]),
        Schema::Scaling => (&["delta_omega_khz", "n_1e", "err"], &["delta_omega (kHz)", "N_1/e (repetitions)", "err"]),
        Schema::Ionization => (&["n", "survival_mc", "survival_model"], &["N (resets)", "survival_mc", "survival_model"]),
        Schema::InitFidelity => (&["spin_id", "f_ir", "err"], &["spin_id", "F_ir", "err"]),
    };
    let hint = match kind {
        PlotKind::Line => "line",
        PlotKind::ScatterLogy => "scatter, log-y",
    };
    let mut out = format!("# {}\n# plot: {hint}\n", labels.join(" | "));
    let idx: Vec<usize> = cols.iter().map(|c| t.col(c)).collect();
    for row in &t.rows {
        let fields: Vec<&str> = idx.iter().map(|&j| row[j].trim()).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_header_is_rejected() {
        assert!(matches!(Table::parse("a,b\n1,2\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn ragged_row_is_rejected() {
        assert!(Table::parse("n,survival_mc,survival_model\n1,2\n").is_err());
    }

    #[test]
    fn trace_fit_recovers_decay_constant() {
        let mut csv = String::from("n,xy_len,xy_err,z,survival\n");
        for n in (0..=400).step_by(40) {
            csv.push_str(&format!("{n},{},0.01,0,1\n", 0.9 * (-(n as f64) / 250.0).exp()));
        }
        let v: serde_json::Value = serde_json::from_str(&fit(&csv).unwrap()).unwrap();
        assert_eq!(v["model"], "exponential");
        assert!((v["params"]["n_1e"].as_f64().unwrap() - 250.0).abs() < 1e-6);
    }

    #[test]
    fn pump_plot_has_two_columns() {
        let csv = "t_ns,p_0,p_m1,p_p1,p_ex,p_singlet\n0,0,1,0,0,0\n1,0.5,0.5,0,0,0\n";
        let out = plotdata(csv, PlotKind::Line).unwrap();
        let body: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, ["0 0", "1 0.5"]);
        assert!(out.starts_with("# t (ns) | p_0"));
    }
}
