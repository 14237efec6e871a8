//! Unit conversion constants.
//!
//! On-disk and CLI-facing values use oilfield units (millidarcy, bar,
//! m^3/day). All internal computation is SI (m^2, Pa, m^3/s).

/// One millidarcy in m^2.
pub const MILLIDARCY_TO_M2: f64 = 9.869_233e-16;

/// One bar in Pa.
pub const BAR_TO_PA: f64 = 1.0e5;

/// Seconds in a day.
pub const DAY_TO_S: f64 = 86_400.0;

pub fn md_to_m2(md: f64) -> f64 {
    md * MILLIDARCY_TO_M2
}

pub fn m2_to_md(m2: f64) -> f64 {
    m2 / MILLIDARCY_TO_M2
}

pub fn bar_to_pa(bar: f64) -> f64 {
    bar * BAR_TO_PA
}

pub fn pa_to_bar(pa: f64) -> f64 {
    pa / BAR_TO_PA
}

/// m^3/day to m^3/s.
pub fn m3day_to_m3s(r: f64) -> f64 {
    r / DAY_TO_S
}

/// m^3/s to m^3/day. Exact factor 86400, so the round trip is lossless
/// up to one floating point rounding.
pub fn m3s_to_m3day(r: f64) -> f64 {
    r * DAY_TO_S
}
