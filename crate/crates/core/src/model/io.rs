//! Model directory format.
//!
//! A model directory holds `manifest.json` plus one raw array file per
//! property: little-endian f64, row-major `[k][j][i]` with x fastest,
//! and `active.u8` for the mask. Array files and manifest scalars use
//! oilfield units (mD, bar, m^3/day); in-memory values are SI.
//!
//! Saving converts SI back to the file unit by searching the exact
//! preimage of the load conversion, so `load(save(m)) == m` bit-exactly
//! for any model whose values came through [`quantize_io`] or a file.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ControlSchedule, GridGeometry, ReservoirModel, ReservoirState, RockProperties, Well,
};
use crate::error::{Error, Result};
use crate::units;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    grid: GridManifest,
    units: UnitsManifest,
    arrays: ArraysManifest,
    wells: Vec<Well>,
    schedule: ScheduleManifest,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridManifest {
    nx: usize,
    ny: usize,
    nz: usize,
    dx_m: f64,
    dy_m: f64,
    dz_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct UnitsManifest {
    permeability: String,
    pressure: String,
    rate: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArraysManifest {
    porosity: String,
    perm_x: String,
    perm_y: String,
    perm_z: String,
    pressure: String,
    sat_water: String,
    active: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleManifest {
    timestamps_days: Vec<f64>,
    /// Producer name -> BHP series in bar.
    bhp_bar: Vec<(String, Vec<f64>)>,
    /// Injector name -> rate series in m^3/day.
    injection_m3_per_day: Vec<(String, Vec<f64>)>,
}

/// Largest I/O-unit file value `io` with `io * c == si` exactly, found
/// by nudging the rounded quotient a few ulps. Falls back to the
/// rounded quotient when no exact preimage exists (values produced via
/// [`quantize_io`] always have one).
fn to_io_exact(si: f64, c: f64) -> f64 {
    let io = si / c;
    if io * c == si {
        return io;
    }
    let mut up = io;
    let mut down = io;
    for _ in 0..4 {
        up = next_up(up);
        if up * c == si {
            return up;
        }
        down = next_down(down);
        if down * c == si {
            return down;
        }
    }
    log::warn!("value {si} has no exact file representation with factor {c}");
    io
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Snap an SI value onto the grid representable through the file unit:
/// `fl(fl(si/c) * c)`. Fields passed through this before persisting
/// round-trip bit-exactly.
pub fn quantize_io(si: f64, c: f64) -> f64 {
    (si / c) * c
}

/// Snap every unit-converted field of a model onto the file-representable
/// grid. Model generators call this before persisting so that
/// `load(save(m)) == m` holds bit-exactly.
pub fn quantize_model(model: &mut ReservoirModel) {
    let md = units::MILLIDARCY_TO_M2;
    for f in [
        &mut model.rock.perm_x,
        &mut model.rock.perm_y,
        &mut model.rock.perm_z,
    ] {
        for v in f.iter_mut() {
            *v = quantize_io(*v, md);
        }
    }
    for v in model.initial.pressure.iter_mut() {
        *v = quantize_io(*v, units::BAR_TO_PA);
    }
    for (_, s) in model.schedule.producer_bhp.iter_mut() {
        for v in s.iter_mut() {
            *v = quantize_io(*v, units::BAR_TO_PA);
        }
    }
    for (_, s) in model.schedule.injector_rate.iter_mut() {
        for v in s.iter_mut() {
            *v = quantize_io(*v, 1.0 / units::DAY_TO_S);
        }
    }
}

fn write_f64_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_f64_file(path: &Path, expect: usize, name: &str) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Io(format!("missing array file for {name}: {e}")))?
        .read_to_end(&mut buf)?;
    if buf.len() != expect * 8 {
        return Err(Error::Io(format!(
            "array {name}: expected {expect} f64 values, file has {} bytes",
            buf.len()
        )));
    }
    let mut out = Vec::with_capacity(expect);
    for chunk in buf.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::Validation(format!(
                "array {name} contains a non-finite value"
            )));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn save_model(model: &ReservoirModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir)?;
    let g = &model.grid;
    let manifest = Manifest {
        schema_version: 1,
        grid: GridManifest {
            nx: g.nx,
            ny: g.ny,
            nz: g.nz,
            dx_m: g.dx,
            dy_m: g.dy,
            dz_m: g.dz,
        },
        units: UnitsManifest {
            permeability: "mD".into(),
            pressure: "bar".into(),
            rate: "m3_per_day".into(),
        },
        arrays: ArraysManifest {
            porosity: "porosity.f64".into(),
            perm_x: "perm_x.f64".into(),
            perm_y: "perm_y.f64".into(),
            perm_z: "perm_z.f64".into(),
            pressure: "pressure.f64".into(),
            sat_water: "sat_water.f64".into(),
            active: "active.u8".into(),
        },
        wells: model.wells.clone(),
        schedule: ScheduleManifest {
            timestamps_days: model.schedule.times_days.clone(),
            bhp_bar: model
                .schedule
                .producer_bhp
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        s.iter()
                            .map(|&v| to_io_exact(v, units::BAR_TO_PA))
                            .collect(),
                    )
                })
                .collect(),
            injection_m3_per_day: model
                .schedule
                .injector_rate
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        s.iter()
                            .map(|&v| to_io_exact(v, 1.0 / units::DAY_TO_S))
                            .collect(),
                    )
                })
                .collect(),
        },
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json)?;

    let md = units::MILLIDARCY_TO_M2;
    let to_md = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| to_io_exact(x, md)).collect() };
    write_f64_file(&dir.join("porosity.f64"), &model.rock.porosity)?;
    write_f64_file(&dir.join("perm_x.f64"), &to_md(&model.rock.perm_x))?;
    write_f64_file(&dir.join("perm_y.f64"), &to_md(&model.rock.perm_y))?;
    write_f64_file(&dir.join("perm_z.f64"), &to_md(&model.rock.perm_z))?;
    let p_bar: Vec<f64> = model
        .initial
        .pressure
        .iter()
        .map(|&x| to_io_exact(x, units::BAR_TO_PA))
        .collect();
    write_f64_file(&dir.join("pressure.f64"), &p_bar)?;
    write_f64_file(&dir.join("sat_water.f64"), &model.initial.sat_water)?;

    let mask: Vec<u8> = model.grid.active.iter().map(|&a| a as u8).collect();
    fs::write(dir.join("active.u8"), mask)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<ReservoirModel> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let json = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    if manifest.units.permeability != "mD"
        || manifest.units.pressure != "bar"
        || manifest.units.rate != "m3_per_day"
    {
        return Err(Error::Validation(
            "unsupported unit declaration in manifest".into(),
        ));
    }
    let gm = &manifest.grid;
    let n = gm.nx * gm.ny * gm.nz;

    let mask_path = dir.join(&manifest.arrays.active);
    let mask_bytes =
        fs::read(&mask_path).map_err(|e| Error::Io(format!("missing array file active: {e}")))?;
    if mask_bytes.len() != n {
        return Err(Error::Io(format!(
            "array active: expected {n} bytes, file has {}",
            mask_bytes.len()
        )));
    }
    let active: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();

    let grid = GridGeometry {
        nx: gm.nx,
        ny: gm.ny,
        nz: gm.nz,
        dx: gm.dx_m,
        dy: gm.dy_m,
        dz: gm.dz_m,
        active,
    };

    let md = units::MILLIDARCY_TO_M2;
    let from_md = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x * md).collect() };
    let rock = RockProperties {
        porosity: read_f64_file(&dir.join(&manifest.arrays.porosity), n, "porosity")?,
        perm_x: from_md(read_f64_file(&dir.join(&manifest.arrays.perm_x), n, "perm_x")?),
        perm_y: from_md(read_f64_file(&dir.join(&manifest.arrays.perm_y), n, "perm_y")?),
        perm_z: from_md(read_f64_file(&dir.join(&manifest.arrays.perm_z), n, "perm_z")?),
    };

    let pressure: Vec<f64> = read_f64_file(&dir.join(&manifest.arrays.pressure), n, "pressure")?
        .into_iter()
        .map(|x| x * units::BAR_TO_PA)
        .collect();
    let sat_water = read_f64_file(&dir.join(&manifest.arrays.sat_water), n, "sat_water")?;
    let sat_oil: Vec<f64> = sat_water.iter().map(|&sw| 1.0 - sw).collect();
    let initial = ReservoirState {
        pressure,
        sat_water,
        sat_oil,
    };

    let schedule = ControlSchedule {
        times_days: manifest.schedule.timestamps_days.clone(),
        producer_bhp: manifest
            .schedule
            .bhp_bar
            .iter()
            .map(|(n, s)| (n.clone(), s.iter().map(|&v| v * units::BAR_TO_PA).collect()))
            .collect(),
        injector_rate: manifest
            .schedule
            .injection_m3_per_day
            .iter()
            .map(|(n, s)| {
                (
                    n.clone(),
                    s.iter().map(|&v| v * (1.0 / units::DAY_TO_S)).collect(),
                )
            })
            .collect(),
    };

    let model = ReservoirModel {
        grid,
        rock,
        initial,
        wells: manifest.wells,
        schedule,
    };
    model.validate()?;
    Ok(model)
}
