//! Rate-series metrics: cumulative volumes, correlation coefficients,
//! windowed cumulative errors.

use crate::rates::{RateTable, WellRates};
use crate::units;

/// Cumulative produced volumes (m^3) at each timestamp, starting at 0,
/// treating rates as piecewise-constant on `[t_i, t_{i+1})`. Negative
/// rates (injection) accumulate negatively.
pub fn cumulative_volumes(times_days: &[f64], rates: &[WellRates]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(times_days.len());
    let mut water = 0.0;
    let mut oil = 0.0;
    out.push((0.0, 0.0));
    for i in 1..times_days.len() {
        let dt_s = (times_days[i] - times_days[i - 1]) * units::DAY_TO_S;
        water += rates[i - 1].water * dt_s;
        oil += rates[i - 1].oil * dt_s;
        out.push((water, oil));
    }
    out
}

/// Pearson correlation coefficient; NaN-free: degenerate series give 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Per-well correlation between predicted and historical cumulative
/// volume series over a step window `[from, to]` (inclusive indices
/// into the shared timestamps). Returns (well, R_water, R_oil).
pub fn per_well_cumulative_correlation(
    predicted: &RateTable,
    historical: &RateTable,
    wells: &[String],
    from: usize,
    to: usize,
) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for well in wells {
        let (Some(p), Some(h)) = (predicted.rates_of(well), historical.rates_of(well)) else {
            continue;
        };
        let cp = cumulative_volumes(&predicted.times_days, p);
        let ch = cumulative_volumes(&historical.times_days, h);
        let to = to.min(cp.len() - 1).min(ch.len() - 1);
        let pw: Vec<f64> = cp[from..=to].iter().map(|v| v.0).collect();
        let hw: Vec<f64> = ch[from..=to].iter().map(|v| v.0).collect();
        let po: Vec<f64> = cp[from..=to].iter().map(|v| v.1).collect();
        let ho: Vec<f64> = ch[from..=to].iter().map(|v| v.1).collect();
        out.push((well.clone(), pearson(&pw, &hw), pearson(&po, &ho)));
    }
    out
}

/// Across-well correlation of window-total produced volumes per phase:
/// one point per well, as in a per-well scatter plot.
pub fn across_well_correlation(
    predicted: &RateTable,
    historical: &RateTable,
    wells: &[String],
    from: usize,
    to: usize,
) -> (f64, f64) {
    let mut pw = Vec::new();
    let mut hw = Vec::new();
    let mut po = Vec::new();
    let mut ho = Vec::new();
    for well in wells {
        let (Some(p), Some(h)) = (predicted.rates_of(well), historical.rates_of(well)) else {
            continue;
        };
        let cp = cumulative_volumes(&predicted.times_days, p);
        let ch = cumulative_volumes(&historical.times_days, h);
        let to = to.min(cp.len() - 1).min(ch.len() - 1);
        pw.push(cp[to].0 - cp[from].0);
        hw.push(ch[to].0 - ch[from].0);
        po.push(cp[to].1 - cp[from].1);
        ho.push(ch[to].1 - ch[from].1);
    }
    (pearson(&pw, &hw), pearson(&po, &ho))
}

/// Relative cumulative-volume error per phase over a step window:
/// sum over wells of |predicted - historical| window increments,
/// normalized by the historical total.
pub fn windowed_cumulative_error(
    predicted: &RateTable,
    historical: &RateTable,
    wells: &[String],
    from: usize,
    to: usize,
) -> (f64, f64) {
    let mut num_w = 0.0;
    let mut den_w = 0.0;
    let mut num_o = 0.0;
    let mut den_o = 0.0;
    for well in wells {
        let (Some(p), Some(h)) = (predicted.rates_of(well), historical.rates_of(well)) else {
            continue;
        };
        let cp = cumulative_volumes(&predicted.times_days, p);
        let ch = cumulative_volumes(&historical.times_days, h);
        let to = to.min(cp.len() - 1).min(ch.len() - 1);
        num_w += ((cp[to].0 - cp[from].0) - (ch[to].0 - ch[from].0)).abs();
        den_w += (ch[to].0 - ch[from].0).abs();
        num_o += ((cp[to].1 - cp[from].1) - (ch[to].1 - ch[from].1)).abs();
        den_o += (ch[to].1 - ch[from].1).abs();
    }
    (
        num_w / den_w.max(f64::MIN_POSITIVE),
        num_o / den_o.max(f64::MIN_POSITIVE),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cumulative_is_piecewise_constant_integral() {
        let times = [0.0, 10.0, 30.0];
        let rates = [
            WellRates { water: 2.0 / units::DAY_TO_S, oil: 0.0 },
            WellRates { water: 1.0 / units::DAY_TO_S, oil: 3.0 / units::DAY_TO_S },
            WellRates { water: 9.0, oil: 9.0 }, // last entry unused
        ];
        let c = cumulative_volumes(&times, &rates);
        assert_abs_diff_eq!(c[0].0, 0.0);
        assert_abs_diff_eq!(c[1].0, 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c[2].0, 40.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c[2].1, 60.0, epsilon = 1e-9);
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(pearson(&a, &b), 1.0, epsilon = 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert_abs_diff_eq!(pearson(&a, &c), -1.0, epsilon = 1e-12);
        let flat = [5.0, 5.0, 5.0, 5.0];
        assert_abs_diff_eq!(pearson(&a, &flat), 0.0);
    }
}
