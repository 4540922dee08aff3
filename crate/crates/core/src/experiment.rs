//! Benchmark runner sweeping mass-spring-damper plant sizes and controller
//! orders.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::lti::PlantEvaluator;
use crate::msd::{msd_plant, MSDConfig};
use crate::synthesis::{sobsyn, SynthesisConfig, ValidationMethod};

/// Outcome of one `(n, k)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentCell {
    /// Plant state dimension.
    pub n: usize,
    /// Controller order.
    pub k: usize,
    pub hinf: Option<f64>,
    pub validation: Option<ValidationMethod>,
    pub runtime_seconds: Option<f64>,
    pub factorizations: Option<usize>,
    pub error: Option<String>,
}

/// Runs synthesis for every combination of state dimension and controller
/// order. Sizes are state dimensions and must be even. A failing cell is
/// recorded and the sweep continues.
pub fn run_table1_experiment(
    orders: &[usize],
    sizes: &[usize],
    base: &MSDConfig,
    cfg: &SynthesisConfig,
) -> Vec<ExperimentCell> {
    let mut cells = Vec::with_capacity(orders.len() * sizes.len());
    for &n in sizes {
        for &k in orders {
            let outcome = run_cell(n, k, base, cfg);
            let cell = match outcome {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("cell n={n}, k={k} failed: {e}");
                    ExperimentCell {
                        n,
                        k,
                        hinf: None,
                        validation: None,
                        runtime_seconds: None,
                        factorizations: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            cells.push(cell);
        }
    }
    cells
}

fn run_cell(n: usize, k: usize, base: &MSDConfig, cfg: &SynthesisConfig) -> Result<ExperimentCell> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(crate::Error::Dimension(format!("state dimension {n} is not a positive even number")));
    }
    let msd = MSDConfig {
        n_masses: n / 2,
        io_masses: base.io_masses.iter().copied().filter(|&i| i <= n / 2).collect(),
        ..base.clone()
    };
    let plant = msd_plant(&msd)?;
    let evaluator = PlantEvaluator::new(&plant);
    let report = sobsyn(&evaluator, &SynthesisConfig { order: k, ..cfg.clone() })?;
    log::info!(
        "n={n}, k={k}: hinf {:.4e} in {:.2} s",
        report.validation.hinf.norm,
        report.runtime_seconds
    );
    Ok(ExperimentCell {
        n,
        k,
        hinf: Some(report.validation.hinf.norm),
        validation: Some(report.validation.method),
        runtime_seconds: Some(report.runtime_seconds),
        factorizations: Some(report.synthesis_factorizations),
        error: None,
    })
}

/// Writes the results as a table with two rows per state dimension
/// (`hinf-norm` and `runtime`) and one column per controller order. Failed
/// cells are left empty.
pub fn write_table_csv<W: Write>(writer: W, cells: &[ExperimentCell]) -> Result<()> {
    let mut orders: Vec<usize> = cells.iter().map(|c| c.k).collect();
    orders.sort_unstable();
    orders.dedup();
    let mut sizes: Vec<usize> = cells.iter().map(|c| c.n).collect();
    sizes.sort_unstable();
    sizes.dedup();

    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["n".to_string(), "metric".to_string()];
    header.extend(orders.iter().map(|k| format!("k={k}")));
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_default();
    for &n in &sizes {
        let find = |k: usize| cells.iter().find(|c| c.n == n && c.k == k);
        for (metric, pick) in [
            ("hinf-norm", (|c: &ExperimentCell| c.hinf) as fn(&ExperimentCell) -> Option<f64>),
            ("runtime", |c: &ExperimentCell| c.runtime_seconds),
        ] {
            let mut rec = vec![n.to_string(), metric.to_string()];
            rec.extend(orders.iter().map(|&k| fmt(find(k).and_then(pick))));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_size_is_recorded_as_failure() {
        let cells = run_table1_experiment(&[1], &[3], &MSDConfig::new(1), &SynthesisConfig::default());
        assert_eq!(cells.len(), 1);
        assert!(cells[0].error.is_some());
        assert!(cells[0].hinf.is_none());
    }

    #[test]
    fn table_layout() {
        let cell = |n, k, h: Option<f64>| ExperimentCell {
            n,
            k,
            hinf: h,
            validation: None,
            runtime_seconds: h.map(|_| 1.5),
            factorizations: None,
            error: None,
        };
        let cells = [cell(10, 1, Some(0.49)), cell(10, 5, None), cell(20, 1, Some(0.4)), cell(20, 5, Some(0.3))];
        let mut out = Vec::new();
        write_table_csv(&mut out, &cells).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,metric,k=1,k=5");
        assert_eq!(lines[1], "10,hinf-norm,4.900e-1,");
        assert_eq!(lines[2], "10,runtime,1.500e0,");
        assert_eq!(lines.len(), 5);
    }
}
