//! Scenario randomization and supervised dataset assembly.
//!
//! Scenarios perturb a base model with correlated zero-mean Gaussian
//! noise (statics and initial state) and draw fresh producer BHP
//! schedules from a damped-sine generator; the finite-difference
//! simulator then produces the target dynamics.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{load_model, quantize_model, save_model, ReservoirModel, ReservoirState, WellKind};
use crate::oracle::{FluidProperties, SimOptions, Simulator};
use crate::rates::RateTable;
use crate::rng;
use crate::units;

/// Correlated zero-mean Gaussian field: white noise smoothed by an
/// isotropic Gaussian kernel of standard deviation `corr_len` (cells),
/// mean-removed and rescaled to empirical standard deviation `sigma`.
/// `shape` is `[nz, ny, nx]`.
pub fn correlated_field(shape: [usize; 3], sigma: f64, corr_len: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    let n = shape[0] * shape[1] * shape[2];
    let mut field: Vec<f64> = (0..n).map(|_| rng::normal(r)).collect();
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    if corr_len > 0.0 {
        let radius = (3.0 * corr_len).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|d| (-0.5 * (d as f64 / corr_len).powi(2)).exp())
            .collect();
        // separable zero-padded blur along each axis
        for axis in 0..3 {
            field = blur_axis(&field, shape, axis, &kernel, radius);
        }
    }
    let mean: f64 = field.iter().sum::<f64>() / n as f64;
    for v in field.iter_mut() {
        *v -= mean;
    }
    let std: f64 = (field.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if std > 0.0 {
        let s = sigma / std;
        for v in field.iter_mut() {
            *v *= s;
        }
    }
    field
}

/// Seeded wrapper over [`correlated_field`].
pub fn correlated_noise(shape: [usize; 3], sigma: f64, corr_len: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    correlated_field(shape, sigma, corr_len, &mut r)
}

fn blur_axis(field: &[f64], shape: [usize; 3], axis: usize, kernel: &[f64], radius: isize) -> Vec<f64> {
    let [nz, ny, nx] = shape;
    let idx = |z: usize, y: usize, x: usize| (z * ny + y) * nx + x;
    let mut out = vec![0.0; field.len()];
    let extent = [nz, ny, nx][axis] as isize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [z as isize, y as isize, x as isize];
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let off = ki as isize - radius;
                    let q = pos[axis] + off;
                    if q < 0 || q >= extent {
                        continue; // zero padding
                    }
                    let mut p = pos;
                    p[axis] = q;
                    acc += kv * field[idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                    wsum += kv;
                }
                // wsum only normalizes the kernel mass; boundary truncation
                // is absorbed by the final empirical rescale
                out[idx(z, y, x)] = acc / wsum.max(f64::MIN_POSITIVE);
            }
        }
    }
    out
}

/// Noise amplitudes for static/initial randomization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub porosity_std: f64,
    /// Std of the additive perturbation of ln(permeability).
    pub log_perm_std: f64,
    /// Pa.
    pub pressure_std: f64,
    pub saturation_std: f64,
    /// Correlation length in cells.
    pub corr_len_cells: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            porosity_std: 0.015,
            log_perm_std: 0.25,
            pressure_std: units::bar_to_pa(2.0),
            saturation_std: 0.02,
            corr_len_cells: 2.5,
        }
    }
}

/// Perturb statics and initial state with correlated noise. Porosity is
/// clamped to [0.01, 0.99]; permeability is perturbed in log space (one
/// shared field for the three axes, preserving anisotropy ratios);
/// saturations are renormalized to sum to one. The active mask is
/// untouched and the result is quantized for exact file round trips.
pub fn randomize_static(
    model: &ReservoirModel,
    noise: &NoiseConfig,
    r: &mut ChaCha8Rng,
) -> ReservoirModel {
    let mut out = model.clone();
    let g = &model.grid;
    let shape = [g.nz, g.ny, g.nx];

    let poro = correlated_field(shape, noise.porosity_std, noise.corr_len_cells, r);
    let perm = correlated_field(shape, noise.log_perm_std, noise.corr_len_cells, r);
    let pres = correlated_field(shape, noise.pressure_std, noise.corr_len_cells, r);
    let sat = correlated_field(shape, noise.saturation_std, noise.corr_len_cells, r);

    for c in 0..g.n_cells() {
        out.rock.porosity[c] = (out.rock.porosity[c] + poro[c]).clamp(0.01, 0.99);
        let f = perm[c].exp();
        out.rock.perm_x[c] *= f;
        out.rock.perm_y[c] *= f;
        out.rock.perm_z[c] *= f;
        out.initial.pressure[c] = (out.initial.pressure[c] + pres[c]).max(units::bar_to_pa(1.0));
        let sw = (out.initial.sat_water[c] + sat[c]).clamp(0.01, 0.99);
        out.initial.sat_water[c] = sw;
        out.initial.sat_oil[c] = 1.0 - sw;
    }
    quantize_model(&mut out);
    out
}

/// Parameters of the damped-sine BHP generator
/// `u(t) = e0*(1 - sin(e1*t + e2))/2 * exp(-e3*t) + e4 + e5(t)`.
/// All pressure-like entries in Pa, `e1`/`e3` in 1/day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleGenParams {
    pub eps0_pa: (f64, f64),
    pub eps1_per_day: (f64, f64),
    pub eps2_phase: (f64, f64),
    pub eps3_per_day: (f64, f64),
    pub eps4_pa: (f64, f64),
    /// Per-step resampled noise, Pa.
    pub eps5_pa: (f64, f64),
    pub horizon_days: f64,
    pub step_days: f64,
}

impl ScheduleGenParams {
    /// Defaults scaled to an initial reservoir pressure: generated BHP
    /// stays within roughly [0.45, 0.9] of it.
    pub fn for_initial_pressure(p0: f64, horizon_days: f64, step_days: f64) -> Self {
        ScheduleGenParams {
            eps0_pa: (0.05 * p0, 0.20 * p0),
            eps1_per_day: (0.01, 0.06),
            eps2_phase: (0.0, std::f64::consts::TAU),
            eps3_per_day: (0.0, 0.004),
            eps4_pa: (0.50 * p0, 0.65 * p0),
            eps5_pa: (-0.005 * p0, 0.005 * p0),
            horizon_days,
            step_days,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("eps0", self.eps0_pa),
            ("eps1", self.eps1_per_day),
            ("eps2", self.eps2_phase),
            ("eps3", self.eps3_per_day),
            ("eps4", self.eps4_pa),
            ("eps5", self.eps5_pa),
        ] {
            if lo > hi {
                return Err(Error::Validation(format!("{name} range inverted")));
            }
        }
        if !(self.horizon_days > 0.0 && self.step_days > 0.0) {
            return Err(Error::Validation("horizon and step must be positive".into()));
        }
        Ok(())
    }

    pub fn times_days(&self) -> Vec<f64> {
        let n = (self.horizon_days / self.step_days).round() as usize;
        (0..=n).map(|i| i as f64 * self.step_days).collect()
    }
}

/// Draw one BHP series on the generator's timestamps. The amplitude
/// coefficients are drawn once per call; the additive noise term is
/// resampled at every step.
pub fn bhp_schedule(params: &ScheduleGenParams, r: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    params.validate()?;
    let e0 = rng::uniform(r, params.eps0_pa.0, params.eps0_pa.1);
    let e1 = rng::uniform(r, params.eps1_per_day.0, params.eps1_per_day.1);
    let e2 = rng::uniform(r, params.eps2_phase.0, params.eps2_phase.1);
    let e3 = rng::uniform(r, params.eps3_per_day.0, params.eps3_per_day.1);
    let e4 = rng::uniform(r, params.eps4_pa.0, params.eps4_pa.1);
    let series: Vec<f64> = params
        .times_days()
        .iter()
        .map(|&t| {
            let e5 = rng::uniform(r, params.eps5_pa.0, params.eps5_pa.1);
            e0 * (1.0 - (e1 * t + e2).sin()) / 2.0 * (-e3 * t).exp() + e4 + e5
        })
        .collect();
    if series.iter().any(|&u| !(u > 0.0)) {
        return Err(Error::Validation(
            "generated BHP not positive; schedule ranges misconfigured".into(),
        ));
    }
    Ok(series)
}

/// Dataset generation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_scenarios: usize,
    pub master_seed: u64,
    pub noise: NoiseConfig,
    pub schedule: ScheduleGenParams,
}

/// Top-level dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub rng: String,
    pub master_seed: u64,
    pub state_channels: Vec<String>,
    pub report_times_days: Vec<f64>,
    pub fluid: FluidProperties,
    pub noise: NoiseConfig,
    pub schedule: ScheduleGenParams,
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub name: String,
    pub stream: u64,
    pub dir: String,
}

/// One loaded scenario: inputs (model with schedule) and targets
/// (states and rates at the report times).
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ReservoirModel,
    pub report_times_days: Vec<f64>,
    /// States at report times after t0 (the initial state lives in the
    /// model).
    pub states: Vec<ReservoirState>,
    pub rates: RateTable,
}

/// Generate `cfg.n_scenarios` scenarios of `base` under `fluid`,
/// writing the dataset into `out_dir`. Scenario RNG streams derive from
/// the master seed and the scenario index, so the dataset is a pure
/// function of (base, fluid, cfg). Oracle failures skip the scenario;
/// more than 20% skipped is an error.
pub fn build_dataset(
    base: &ReservoirModel,
    fluid: &FluidProperties,
    cfg: &DatasetConfig,
    sim_options: &SimOptions,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if cfg.n_scenarios < 1 {
        return Err(Error::Validation("need at least one scenario".into()));
    }
    cfg.schedule.validate()?;
    fs::create_dir_all(out_dir)?;
    save_model(base, &out_dir.join("base"))?;

    let times = cfg.schedule.times_days();
    let report: Vec<f64> = times[1..].to_vec();

    let results: Vec<(usize, Result<()>)> = (0..cfg.n_scenarios)
        .into_par_iter()
        .map(|i| {
            let r = generate_scenario(base, fluid, cfg, sim_options, &times, &report, i, out_dir);
            (i, r)
        })
        .collect();

    let mut scenarios = Vec::new();
    let mut skipped = 0usize;
    for (i, r) in results {
        match r {
            Ok(()) => scenarios.push(ScenarioEntry {
                name: format!("s{i:03}"),
                stream: i as u64,
                dir: format!("s{i:03}"),
            }),
            Err(e) => {
                skipped += 1;
                log::warn!("scenario {i} skipped: {e}");
            }
        }
    }
    if skipped * 5 > cfg.n_scenarios {
        return Err(Error::Numerical(format!(
            "{skipped} of {} scenarios failed to simulate",
            cfg.n_scenarios
        )));
    }

    let manifest = DatasetManifest {
        schema_version: 1,
        rng: rng::RNG_ALGORITHM.into(),
        master_seed: cfg.master_seed,
        state_channels: vec![
            "pressure_bar".into(),
            "sat_water".into(),
            "sat_oil".into(),
        ],
        report_times_days: report,
        fluid: fluid.clone(),
        noise: cfg.noise.clone(),
        schedule: cfg.schedule.clone(),
        scenarios,
    };
    fs::write(
        out_dir.join("dataset.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

#[allow(clippy::too_many_arguments)]
fn generate_scenario(
    base: &ReservoirModel,
    fluid: &FluidProperties,
    cfg: &DatasetConfig,
    sim_options: &SimOptions,
    times: &[f64],
    report: &[f64],
    index: usize,
    out_dir: &Path,
) -> Result<()> {
    let mut r = rng::stream(cfg.master_seed, index as u64);
    let mut model = randomize_static(base, &cfg.noise, &mut r);

    // fresh producer schedules; injectors keep the base schedule
    // resampled onto the generator timestamps
    let mut producer_bhp = Vec::new();
    for w in &model.wells {
        if w.kind == WellKind::Producer {
            producer_bhp.push((w.name.clone(), bhp_schedule(&cfg.schedule, &mut r)?));
        }
    }
    let mut injector_rate = Vec::new();
    for w in &model.wells {
        if w.kind == WellKind::Injector {
            let base_series = base
                .schedule
                .rate_of(&w.name)
                .ok_or_else(|| Error::Validation(format!("no base rate for {}", w.name)))?;
            let series: Vec<f64> = times
                .iter()
                .map(|&t| base_series[base.schedule.interval_at(t)])
                .collect();
            injector_rate.push((w.name.clone(), series));
        }
    }
    model.schedule = crate::model::ControlSchedule {
        times_days: times.to_vec(),
        producer_bhp,
        injector_rate,
    };
    quantize_model(&mut model);
    model.validate()?;

    let sim = Simulator::new(&model, fluid, sim_options.clone())?;
    let run = sim.run(report)?;
    for phase in [&run.balance.water, &run.balance.oil] {
        if phase.relative_closure_error() > 1e-6 {
            return Err(Error::Numerical(format!(
                "material balance violated: {}",
                phase.relative_closure_error()
            )));
        }
    }

    let dir = out_dir.join(format!("s{index:03}"));
    fs::create_dir_all(dir.join("states"))?;
    save_model(&model, &dir.join("model"))?;
    for (t, state) in report.iter().zip(&run.states) {
        write_state(&dir.join("states").join(format!("{t}.f64")), state)?;
    }
    // rates at every schedule timestamp including t0
    let mut all_times = vec![times[0]];
    all_times.extend_from_slice(report);
    let mut series = vec![Vec::new(); model.wells.len()];
    let (w0, o0) = sim.instantaneous_rates(&model.initial, times[0]);
    for wi in 0..model.wells.len() {
        series[wi].push(crate::rates::WellRates {
            water: w0[wi],
            oil: o0[wi],
        });
        series[wi].extend_from_slice(&run.rates.series[wi]);
    }
    let table = RateTable {
        times_days: all_times,
        wells: run.rates.wells.clone(),
        series,
    };
    fs::write(dir.join("rates.csv"), table.to_csv())?;
    Ok(())
}

/// State file: channels (pressure bar, sat_water, sat_oil)
/// concatenated, each `[k][j][i]` row-major.
pub fn write_state(path: &Path, state: &ReservoirState) -> Result<()> {
    let mut buf = Vec::with_capacity(state.pressure.len() * 3 * 8);
    for v in &state.pressure {
        buf.extend_from_slice(&units::pa_to_bar(*v).to_le_bytes());
    }
    for v in &state.sat_water {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &state.sat_oil {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_state(path: &Path, n_cells: usize) -> Result<ReservoirState> {
    let buf = fs::read(path).map_err(|e| Error::Io(format!("missing state file: {e}")))?;
    if buf.len() != n_cells * 3 * 8 {
        return Err(Error::Io(format!(
            "state file {} has {} bytes, expected {}",
            path.display(),
            buf.len(),
            n_cells * 3 * 8
        )));
    }
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(ReservoirState {
        pressure: vals[..n_cells]
            .iter()
            .map(|&v| units::bar_to_pa(v))
            .collect(),
        sat_water: vals[n_cells..2 * n_cells].to_vec(),
        sat_oil: vals[2 * n_cells..].to_vec(),
    })
}

/// Load a dataset directory written by [`build_dataset`].
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = serde_json::from_str(
            &fs::read_to_string(dir.join("dataset.json"))
                .map_err(|e| Error::Io(format!("cannot read dataset.json: {e}")))?,
        )?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.scenarios.is_empty()
    }

    pub fn load_scenario(&self, idx: usize) -> Result<Scenario> {
        let entry = &self.manifest.scenarios[idx];
        let dir = self.dir.join(&entry.dir);
        let model = load_model(&dir.join("model"))?;
        let n = model.grid.n_cells();
        let mut states = Vec::with_capacity(self.manifest.report_times_days.len());
        for t in &self.manifest.report_times_days {
            states.push(read_state(&dir.join("states").join(format!("{t}.f64")), n)?);
        }
        let rates = RateTable::from_csv(
            &fs::read_to_string(dir.join("rates.csv"))
                .map_err(|e| Error::Io(format!("cannot read rates.csv: {e}")))?,
        )?;
        Ok(Scenario {
            name: entry.name.clone(),
            model,
            report_times_days: self.manifest.report_times_days.clone(),
            states,
            rates,
        })
    }
}
