//! Deterministic CSV output.
//!
//! Column order is fixed and floats use Rust's shortest round-trip decimal
//! formatting, so identical runs produce identical bytes. Undefined metrics
//! are written as empty fields.

use std::io::Write;

use crate::bench::{VarianceEstimate, VariantResult};
use crate::Result;

pub const EVALMATRIX_HEADER: &str = "variant,trial_seed,eval_index,env_seed,total_cost";
pub const VARIANCE_HEADER: &str = "form,variance,batch_size,n_batches";

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// One row per `(variant, trial, evaluation)` with a `cost_seed_<s>` column
/// per evaluation seed.
pub fn write_curves(
    w: &mut impl Write,
    results: &[VariantResult],
    trial_seeds: &[u64],
    eval_seeds: &[u64],
) -> Result<()> {
    let rows: Vec<(String, &VariantResult)> = results.iter().map(|r| (r.variant.to_string(), r)).collect();
    write_curve_rows(w, "variant", &rows, trial_seeds, eval_seeds)
}

/// [`write_curves`] keyed by schedule name instead of variant.
pub fn write_sweep_curves(
    w: &mut impl Write,
    rows: &[(String, &VariantResult)],
    trial_seeds: &[u64],
    eval_seeds: &[u64],
) -> Result<()> {
    write_curve_rows(w, "schedule", rows, trial_seeds, eval_seeds)
}

fn write_curve_rows(
    w: &mut impl Write,
    key: &str,
    rows: &[(String, &VariantResult)],
    trial_seeds: &[u64],
    eval_seeds: &[u64],
) -> Result<()> {
    write!(w, "step,{key},trial_seed,mean_eval_cost")?;
    for s in eval_seeds {
        write!(w, ",cost_seed_{s}")?;
    }
    writeln!(w)?;
    for (label, r) in rows {
        for (log, seed) in r.logs.iter().zip(trial_seeds) {
            for e in &log.evals {
                write!(w, "{},{label},{seed},{}", e.step, fmt_f64(e.mean()))?;
                for c in &e.costs {
                    write!(w, ",{}", fmt_f64(*c))?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

/// The trailing-window evaluation matrices that feed the metrics.
pub fn write_evalmatrix(
    w: &mut impl Write,
    results: &[VariantResult],
    trial_seeds: &[u64],
    eval_seeds: &[u64],
) -> Result<()> {
    writeln!(w, "{EVALMATRIX_HEADER}")?;
    for r in results {
        let Some(m) = &r.matrix else { continue };
        for (t, trial_seed) in trial_seeds.iter().enumerate().take(m.n_trials) {
            for e in 0..m.n_evals {
                for (s, env_seed) in eval_seeds.iter().enumerate().take(m.n_env_seeds) {
                    writeln!(w, "{},{trial_seed},{e},{env_seed},{}", r.variant, fmt_f64(m.get(t, e, s)))?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_metrics(w: &mut impl Write, results: &[VariantResult]) -> Result<()> {
    let rows: Vec<(String, &VariantResult)> = results.iter().map(|r| (r.variant.to_string(), r)).collect();
    write_metric_rows(w, "variant", &rows)
}

/// Metrics per schedule: `schedule,total_cost,...`.
pub fn write_sweep(w: &mut impl Write, rows: &[(String, &VariantResult)]) -> Result<()> {
    write_metric_rows(w, "schedule", rows)
}

fn write_metric_rows(w: &mut impl Write, key: &str, rows: &[(String, &VariantResult)]) -> Result<()> {
    writeln!(w, "{key},total_cost,learning_variance,robustness,auc,success_rate")?;
    for (label, r) in rows {
        match &r.metrics {
            Ok(m) => writeln!(
                w,
                "{label},{},{},{},{},{}",
                fmt_f64(m.total_cost),
                fmt_f64(m.learning_variance),
                fmt_f64(m.robustness),
                fmt_f64(m.auc),
                fmt_f64(m.success_rate)
            )?,
            Err(_) => writeln!(w, "{label},,,,,")?,
        }
    }
    Ok(())
}

pub fn write_variance(w: &mut impl Write, v: &VarianceEstimate) -> Result<()> {
    writeln!(w, "{VARIANCE_HEADER}")?;
    for (form, var) in [("q", v.var_q), ("td_linear", v.var_td_linear), ("td_squared", v.var_td_squared)] {
        writeln!(w, "{form},{},{},{}", fmt_f64(var), v.batch_size, v.n_batches)?;
    }
    Ok(())
}
