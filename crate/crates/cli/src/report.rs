//! Report generation: plots and metrics from a history-match result
//! directory. A pure function of that directory's contents.

use std::path::Path;

use resgrad_core::error::{Error, Result};
use resgrad_core::metrics;
use resgrad_core::rates::RateTable;

use crate::svg::{line_chart, scatter_chart, Series};

pub fn report(hm_dir: &Path, out: &Path) -> Result<()> {
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(hm_dir.join("summary.json"))
            .map_err(|e| Error::Io(format!("cannot read summary.json: {e}")))?,
    )?;
    let window = summary["window_steps"]
        .as_u64()
        .ok_or_else(|| Error::Io("summary.json missing window_steps".into()))? as usize;
    let window_days = summary["window_days"].as_f64().unwrap_or(0.0);

    let corrected = RateTable::from_csv(
        &std::fs::read_to_string(hm_dir.join("corrected-rates.csv"))
            .map_err(|e| Error::Io(format!("cannot read corrected-rates.csv: {e}")))?,
    )?;
    let history = RateTable::from_csv(
        &std::fs::read_to_string(hm_dir.join("historical-rates.csv"))
            .map_err(|e| Error::Io(format!("cannot read historical-rates.csv: {e}")))?,
    )?;
    let loss_text = std::fs::read_to_string(hm_dir.join("loss_curve.csv"))
        .map_err(|e| Error::Io(format!("cannot read loss_curve.csv: {e}")))?;

    std::fs::create_dir_all(out)?;

    // producers = wells with non-negative historical water at the first
    // report step (injectors carry negative water by convention)
    let producers: Vec<String> = history
        .wells
        .iter()
        .filter(|w| {
            history
                .rates_of(w)
                .map(|s| s.iter().all(|r| r.water >= 0.0))
                .unwrap_or(false)
        })
        .cloned()
        .collect();

    // loss curve
    let loss_points: Vec<(f64, f64)> = loss_text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.split(',');
            Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
        })
        .collect();
    std::fs::write(
        out.join("loss.svg"),
        line_chart(
            "Adaptation loss",
            "iteration",
            "total loss",
            &[Series {
                label: "loss",
                color: "#1f77b4",
                points: loss_points,
            }],
            &[],
        ),
    )?;

    // cumulative rates aggregated over producers, per phase
    let aggregate = |table: &RateTable, phase_oil: bool| -> Vec<(f64, f64)> {
        let mut total: Vec<f64> = vec![0.0; table.times_days.len()];
        for w in &producers {
            if let Some(series) = table.rates_of(w) {
                let cum = metrics::cumulative_volumes(&table.times_days, series);
                for (i, c) in cum.iter().enumerate() {
                    total[i] += if phase_oil { c.1 } else { c.0 };
                }
            }
        }
        table.times_days.iter().copied().zip(total).collect()
    };
    std::fs::write(
        out.join("cumulative_rates.svg"),
        line_chart(
            "Cumulative production (all wells)",
            "time, days",
            "volume, m3",
            &[
                Series {
                    label: "historical water",
                    color: "#1f77b4",
                    points: aggregate(&history, false),
                },
                Series {
                    label: "model water",
                    color: "#ff7f0e",
                    points: aggregate(&corrected, false),
                },
                Series {
                    label: "historical oil",
                    color: "#2ca02c",
                    points: aggregate(&history, true),
                },
                Series {
                    label: "model oil",
                    color: "#d62728",
                    points: aggregate(&corrected, true),
                },
            ],
            &[window_days],
        ),
    )?;

    // per-well scatter of adaptation-window total volumes
    let (r_water, r_oil) =
        metrics::across_well_correlation(&corrected, &history, &producers, 0, window);
    let mut water_pts = Vec::new();
    let mut oil_pts = Vec::new();
    for w in &producers {
        let (Some(p), Some(h)) = (corrected.rates_of(w), history.rates_of(w)) else {
            continue;
        };
        let cp = metrics::cumulative_volumes(&corrected.times_days, p);
        let ch = metrics::cumulative_volumes(&history.times_days, h);
        let to = window.min(cp.len() - 1).min(ch.len() - 1);
        water_pts.push((ch[to].0, cp[to].0));
        oil_pts.push((ch[to].1, cp[to].1));
    }
    std::fs::write(
        out.join("correlation.svg"),
        scatter_chart(
            &format!("Per-well cumulative volumes (R water {r_water:.3}, R oil {r_oil:.3})"),
            "historical, m3",
            "predicted, m3",
            &[
                Series {
                    label: "water",
                    color: "#1f77b4",
                    points: water_pts,
                },
                Series {
                    label: "oil",
                    color: "#2ca02c",
                    points: oil_pts,
                },
            ],
        ),
    )?;

    // metrics.json
    let last_step = corrected.times_days.len() - 1;
    let (adapt_err_w, adapt_err_o) =
        metrics::windowed_cumulative_error(&corrected, &history, &producers, 0, window);
    let (fc_err_w, fc_err_o) = if last_step > window {
        metrics::windowed_cumulative_error(&corrected, &history, &producers, window, last_step)
    } else {
        (f64::NAN, f64::NAN)
    };
    let per_well =
        metrics::per_well_cumulative_correlation(&corrected, &history, &producers, 0, window);
    let metrics_json = serde_json::json!({
        "schema_version": 1,
        "window_steps": window,
        "window_days": window_days,
        "correlation": { "water": r_water, "oil": r_oil },
        "per_well_correlation": per_well
            .iter()
            .map(|(w, rw, ro)| serde_json::json!({"well": w, "r_water": rw, "r_oil": ro}))
            .collect::<Vec<_>>(),
        "cumulative_rate_error": {
            "adaptation": { "water": adapt_err_w, "oil": adapt_err_o },
            "forecast": {
                "water": if fc_err_w.is_nan() { serde_json::Value::Null } else { fc_err_w.into() },
                "oil": if fc_err_o.is_nan() { serde_json::Value::Null } else { fc_err_o.into() },
            },
        },
    });
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics_json).expect("json"),
    )?;
    Ok(())
}
