//! Reservoir data model: grid geometry, rock properties, dynamic state,
//! wells with piecewise-linear trajectories, and control schedules.
//!
//! Values are SI internally (m^2, Pa, m^3/s); the on-disk format uses
//! oilfield units (mD, bar, m^3/day) and converts at the I/O boundary.

mod connections;
mod io;
#[cfg(test)]
pub(crate) mod tests;

pub use connections::compute_connections;
pub use io::{load_model, quantize_io, quantize_model, save_model};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular Cartesian grid. Cells are indexed (i, j, k) along (x, y, z)
/// with flat index `(k*ny + j)*nx + i` (x fastest), matching the
/// row-major array files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Active mask, one entry per cell.
    #[serde(skip)]
    pub active: Vec<bool>,
}

impl GridGeometry {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn is_active(&self, i: usize, j: usize, k: usize) -> bool {
        self.active[self.flat(i, j, k)]
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 || self.nz < 1 {
            return Err(Error::Validation("grid extents must be >= 1".into()));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return Err(Error::Validation("cell sizes must be positive".into()));
        }
        if self.active.len() != self.n_cells() {
            return Err(Error::Validation(format!(
                "active mask has {} entries, grid has {} cells",
                self.active.len(),
                self.n_cells()
            )));
        }
        if self.n_active() == 0 {
            return Err(Error::Validation("no active cells".into()));
        }
        Ok(())
    }
}

/// Static rock fields. Permeabilities are m^2 internally.
#[derive(Debug, Clone)]
pub struct RockProperties {
    pub porosity: Vec<f64>,
    pub perm_x: Vec<f64>,
    pub perm_y: Vec<f64>,
    pub perm_z: Vec<f64>,
}

impl RockProperties {
    pub fn validate(&self, grid: &GridGeometry) -> Result<()> {
        let n = grid.n_cells();
        for (name, f) in [
            ("porosity", &self.porosity),
            ("perm_x", &self.perm_x),
            ("perm_y", &self.perm_y),
            ("perm_z", &self.perm_z),
        ] {
            if f.len() != n {
                return Err(Error::Validation(format!(
                    "{name} has {} entries, grid has {n} cells",
                    f.len()
                )));
            }
        }
        for c in 0..n {
            if !grid.active[c] {
                continue;
            }
            let p = self.porosity[c];
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Validation(format!(
                    "porosity out of [0,1] at cell {c}: {p}"
                )));
            }
            for (name, f) in [
                ("perm_x", &self.perm_x),
                ("perm_y", &self.perm_y),
                ("perm_z", &self.perm_z),
            ] {
                let v = f[c];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "{name} negative or non-finite at cell {c}: {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dynamic per-cell fields. Pressure in Pa.
#[derive(Debug, Clone)]
pub struct ReservoirState {
    pub pressure: Vec<f64>,
    pub sat_water: Vec<f64>,
    pub sat_oil: Vec<f64>,
}

impl ReservoirState {
    pub fn validate(&self, grid: &GridGeometry) -> Result<()> {
        let n = grid.n_cells();
        if self.pressure.len() != n || self.sat_water.len() != n || self.sat_oil.len() != n {
            return Err(Error::Validation("state field length mismatch".into()));
        }
        for c in 0..n {
            if !grid.active[c] {
                continue;
            }
            if !(self.pressure[c] > 0.0) || !self.pressure[c].is_finite() {
                return Err(Error::Validation(format!(
                    "pressure must be positive on active cell {c}"
                )));
            }
            let (sw, so) = (self.sat_water[c], self.sat_oil[c]);
            if !(0.0..=1.0).contains(&sw) || !(0.0..=1.0).contains(&so) {
                return Err(Error::Validation(format!(
                    "saturation out of [0,1] at cell {c}: sw={sw} so={so}"
                )));
            }
            if (sw + so - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "saturations do not sum to 1 at cell {c}: {}",
                    sw + so
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellKind {
    Producer,
    Injector,
}

/// A well with a piecewise-linear trajectory in grid coordinates
/// (meters from the grid origin corner).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Well {
    pub name: String,
    pub kind: WellKind,
    /// Wellbore radius, m.
    pub radius: f64,
    /// Ordered 3-D points, m.
    pub trajectory: Vec<[f64; 3]>,
}

impl Well {
    pub fn validate(&self, grid: &GridGeometry) -> Result<()> {
        if self.trajectory.len() < 2 {
            return Err(Error::Validation(format!(
                "well {} needs at least 2 trajectory points",
                self.name
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Validation(format!(
                "well {} radius must be positive",
                self.name
            )));
        }
        let bbox = [
            grid.nx as f64 * grid.dx,
            grid.ny as f64 * grid.dy,
            grid.nz as f64 * grid.dz,
        ];
        for p in &self.trajectory {
            for a in 0..3 {
                if p[a] < 0.0 || p[a] > bbox[a] {
                    return Err(Error::Validation(format!(
                        "well {} trajectory point {:?} outside grid bounding box",
                        self.name, p
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One perforated cell of a well: per-axis projected lengths of the
/// trajectory inside the cell, plus the connection productivity index
/// attached from the rock properties.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub well: String,
    pub cell: [usize; 3],
    /// Projections of the in-cell trajectory onto (x, y, z), m.
    pub h: [f64; 3],
    /// Connection productivity index, m^3 (zero until attached).
    pub index_m3: f64,
}

/// Piecewise-constant control series on the schedule timestamps:
/// interval `[t_i, t_{i+1})` uses entry `i`.
#[derive(Debug, Clone, Default)]
pub struct ControlSchedule {
    /// Strictly increasing, days.
    pub times_days: Vec<f64>,
    /// Producer bottomhole pressure series, Pa (same length as times).
    pub producer_bhp: Vec<(String, Vec<f64>)>,
    /// Injector total rate series, m^3/s (same length as times).
    pub injector_rate: Vec<(String, Vec<f64>)>,
}

impl ControlSchedule {
    pub fn n_steps(&self) -> usize {
        self.times_days.len()
    }

    /// Index of the control interval active at time t (days).
    pub fn interval_at(&self, t_days: f64) -> usize {
        match self
            .times_days
            .iter()
            .rposition(|&ts| ts <= t_days + 1e-12)
        {
            Some(i) => i,
            None => 0,
        }
    }

    pub fn bhp_of(&self, well: &str) -> Option<&[f64]> {
        self.producer_bhp
            .iter()
            .find(|(n, _)| n == well)
            .map(|(_, s)| s.as_slice())
    }

    pub fn rate_of(&self, well: &str) -> Option<&[f64]> {
        self.injector_rate
            .iter()
            .find(|(n, _)| n == well)
            .map(|(_, s)| s.as_slice())
    }

    pub fn validate(&self, wells: &[Well]) -> Result<()> {
        if self.times_days.len() < 2 {
            return Err(Error::Validation(
                "schedule needs at least 2 timestamps".into(),
            ));
        }
        for w in self.times_days.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(
                    "schedule timestamps must be strictly increasing".into(),
                ));
            }
        }
        for wl in wells {
            match wl.kind {
                WellKind::Producer => {
                    let s = self.bhp_of(&wl.name).ok_or_else(|| {
                        Error::Validation(format!("producer {} has no BHP series", wl.name))
                    })?;
                    if s.len() != self.times_days.len() {
                        return Err(Error::Validation(format!(
                            "BHP series for {} has wrong length",
                            wl.name
                        )));
                    }
                    if s.iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::Validation(format!(
                            "BHP for {} must be positive",
                            wl.name
                        )));
                    }
                }
                WellKind::Injector => {
                    let s = self.rate_of(&wl.name).ok_or_else(|| {
                        Error::Validation(format!("injector {} has no rate series", wl.name))
                    })?;
                    if s.len() != self.times_days.len() {
                        return Err(Error::Validation(format!(
                            "rate series for {} has wrong length",
                            wl.name
                        )));
                    }
                    if s.iter().any(|&v| !(v >= 0.0)) {
                        return Err(Error::Validation(format!(
                            "injection rate for {} must be >= 0",
                            wl.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Complete reservoir description: the static inputs and the initial
/// state of a simulation run.
#[derive(Debug, Clone)]
pub struct ReservoirModel {
    pub grid: GridGeometry,
    pub rock: RockProperties,
    pub initial: ReservoirState,
    pub wells: Vec<Well>,
    pub schedule: ControlSchedule,
}

impl ReservoirModel {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.rock.validate(&self.grid)?;
        self.initial.validate(&self.grid)?;
        for w in &self.wells {
            w.validate(&self.grid)?;
        }
        self.schedule.validate(&self.wells)?;
        Ok(())
    }

    /// Connections of every well in well order, with productivity
    /// indices attached from the rock properties.
    pub fn connections(&self) -> Result<Vec<Connection>> {
        let mut out = Vec::new();
        for w in &self.wells {
            let mut conns = compute_connections(w, &self.grid);
            for c in &mut conns {
                c.index_m3 = crate::rates::connection_index_for_cell(
                    &self.grid, &self.rock, c, w.radius,
                )?;
            }
            out.extend(conns);
        }
        Ok(out)
    }
}
