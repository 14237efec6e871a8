//! Flat dotted-key JSON configuration shared by every subcommand.
//!
//! A config file is a single JSON object mapping dotted keys to values,
//! e.g. `{"gen.scenarios": 20, "hm.learning_rate": 0.3}`. Unknown keys
//! are errors. `--set key=value` applies the same keys from the command
//! line, after the file.

use resgrad_core::adapt::{AdaptVars, HmConfig};
use resgrad_core::datagen::{DatasetConfig, NoiseConfig, ScheduleGenParams};
use resgrad_core::oracle::{FluidProperties, SimOptions};
use resgrad_core::training::TrainConfig;
use resgrad_core::units;
use serde_json::Value;

#[derive(Debug, Clone)]
pub struct Config {
    // gen-data
    pub gen_scenarios: usize,
    pub gen_seed: u64,
    pub gen_horizon_days: f64,
    pub gen_step_days: f64,
    pub gen_synthetic: String,
    pub noise: NoiseConfig,
    /// BHP generator ranges relative to the base model's mean initial
    /// pressure (see `ScheduleGenParams::for_initial_pressure`).
    pub fluid: FluidProperties,
    pub sim: SimOptions,
    pub train: TrainConfig,
    pub hm: HmConfig,
    pub hm_vars: AdaptVars,
    /// simulate: rollout steps (0 = full schedule).
    pub simulate_steps: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            gen_scenarios: 20,
            gen_seed: 0,
            gen_horizon_days: 300.0,
            gen_step_days: 15.0,
            gen_synthetic: String::new(),
            noise: NoiseConfig::default(),
            fluid: resgrad_core::twin::twin_fluid(),
            sim: SimOptions::default(),
            train: TrainConfig::default(),
            hm: HmConfig::default(),
            hm_vars: AdaptVars::Both,
            simulate_steps: 0,
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("key {key} needs a number"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize, String> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| format!("key {key} needs a non-negative integer"))
}

fn as_bool(key: &str, v: &Value) -> Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("key {key} needs a boolean"))
}

fn as_str(key: &str, v: &Value) -> Result<String, String> {
    v.as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| format!("key {key} needs a string"))
}

impl Config {
    pub fn apply(&mut self, key: &str, v: &Value) -> Result<(), String> {
        match key {
            "gen.scenarios" => self.gen_scenarios = as_usize(key, v)?,
            "gen.seed" => self.gen_seed = as_usize(key, v)? as u64,
            "gen.horizon_days" => self.gen_horizon_days = as_f64(key, v)?,
            "gen.step_days" => self.gen_step_days = as_f64(key, v)?,
            "gen.synthetic" => self.gen_synthetic = as_str(key, v)?,
            "gen.noise.porosity_std" => self.noise.porosity_std = as_f64(key, v)?,
            "gen.noise.log_perm_std" => self.noise.log_perm_std = as_f64(key, v)?,
            "gen.noise.pressure_std_bar" => {
                self.noise.pressure_std = units::bar_to_pa(as_f64(key, v)?)
            }
            "gen.noise.saturation_std" => self.noise.saturation_std = as_f64(key, v)?,
            "gen.noise.corr_len_cells" => self.noise.corr_len_cells = as_f64(key, v)?,
            "fluid.viscosity_water" => self.fluid.viscosity_water = as_f64(key, v)?,
            "fluid.viscosity_oil" => self.fluid.viscosity_oil = as_f64(key, v)?,
            "fluid.total_compressibility" => self.fluid.c_t = as_f64(key, v)?,
            "fluid.corey_nw" => self.fluid.n_w = as_f64(key, v)?,
            "fluid.corey_no" => self.fluid.n_o = as_f64(key, v)?,
            "fluid.s_wr" => self.fluid.s_wr = as_f64(key, v)?,
            "fluid.s_or" => self.fluid.s_or = as_f64(key, v)?,
            "fluid.k0_w" => self.fluid.k0_w = as_f64(key, v)?,
            "fluid.k0_o" => self.fluid.k0_o = as_f64(key, v)?,
            "sim.max_sat_change" => self.sim.max_sat_change = as_f64(key, v)?,
            "sim.cg_tolerance" => self.sim.cg_tolerance = as_f64(key, v)?,
            "sim.cg_max_iter_factor" => self.sim.cg_max_iter_factor = as_usize(key, v)?,
            "sim.initial_dt_days" => self.sim.initial_dt_days = as_f64(key, v)?,
            "train.epochs" => self.train.epochs = as_usize(key, v)?,
            "train.rollout_steps" => self.train.rollout_steps = as_usize(key, v)?,
            "train.learning_rate" => self.train.learning_rate = as_f64(key, v)?,
            "train.weight_decay" => self.train.weight_decay = as_f64(key, v)?,
            "train.weight.pressure" => self.train.channel_weights[0] = as_f64(key, v)?,
            "train.weight.sat_water" => self.train.channel_weights[1] = as_f64(key, v)?,
            "train.weight.sat_oil" => self.train.channel_weights[2] = as_f64(key, v)?,
            "train.seed" => self.train.seed = as_usize(key, v)? as u64,
            "train.split" => self.train.split = as_f64(key, v)?,
            "hm.learning_rate" => self.hm.learning_rate = as_f64(key, v)?,
            "hm.weight_decay" => self.hm.weight_decay = as_f64(key, v)?,
            "hm.coarse_factor" => self.hm.coarse_factor = as_usize(key, v)?,
            "hm.init_noise_std" => self.hm.init_noise_std = as_f64(key, v)?,
            "hm.max_iterations" => self.hm.max_iterations = as_usize(key, v)?,
            "hm.plateau_window" => self.hm.plateau_window = as_usize(key, v)?,
            "hm.plateau_threshold" => self.hm.plateau_threshold = as_f64(key, v)?,
            "hm.time_weighting" => self.hm.time_weighting = as_bool(key, v)?,
            "hm.q_ref_m3_per_day" => self.hm.q_ref_m3_per_day = as_f64(key, v)?,
            "hm.window_steps" => self.hm.window_steps = as_usize(key, v)?,
            "hm.seed" => self.hm.seed = as_usize(key, v)? as u64,
            "hm.vars" => {
                self.hm_vars = match as_str(key, v)?.as_str() {
                    "both" => AdaptVars::Both,
                    "rock_only" => AdaptVars::RockOnly,
                    "connectivity_only" => AdaptVars::ConnectivityOnly,
                    other => return Err(format!(
                        "hm.vars must be both|rock_only|connectivity_only, got {other}"
                    )),
                }
            }
            "simulate.steps" => self.simulate_steps = as_usize(key, v)?,
            other => return Err(format!("unknown config key: {other}")),
        }
        Ok(())
    }

    /// All keys with their current values as a flat JSON object.
    pub fn to_flat_json(&self) -> Value {
        let mut m = serde_json::Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("gen.scenarios", self.gen_scenarios.into());
        put("gen.seed", self.gen_seed.into());
        put("gen.horizon_days", self.gen_horizon_days.into());
        put("gen.step_days", self.gen_step_days.into());
        put("gen.synthetic", self.gen_synthetic.clone().into());
        put("gen.noise.porosity_std", self.noise.porosity_std.into());
        put("gen.noise.log_perm_std", self.noise.log_perm_std.into());
        put(
            "gen.noise.pressure_std_bar",
            units::pa_to_bar(self.noise.pressure_std).into(),
        );
        put("gen.noise.saturation_std", self.noise.saturation_std.into());
        put("gen.noise.corr_len_cells", self.noise.corr_len_cells.into());
        put("fluid.viscosity_water", self.fluid.viscosity_water.into());
        put("fluid.viscosity_oil", self.fluid.viscosity_oil.into());
        put("fluid.total_compressibility", self.fluid.c_t.into());
        put("fluid.corey_nw", self.fluid.n_w.into());
        put("fluid.corey_no", self.fluid.n_o.into());
        put("fluid.s_wr", self.fluid.s_wr.into());
        put("fluid.s_or", self.fluid.s_or.into());
        put("fluid.k0_w", self.fluid.k0_w.into());
        put("fluid.k0_o", self.fluid.k0_o.into());
        put("sim.max_sat_change", self.sim.max_sat_change.into());
        put("sim.cg_tolerance", self.sim.cg_tolerance.into());
        put("sim.cg_max_iter_factor", self.sim.cg_max_iter_factor.into());
        put("sim.initial_dt_days", self.sim.initial_dt_days.into());
        put("train.epochs", self.train.epochs.into());
        put("train.rollout_steps", self.train.rollout_steps.into());
        put("train.learning_rate", self.train.learning_rate.into());
        put("train.weight_decay", self.train.weight_decay.into());
        put("train.weight.pressure", self.train.channel_weights[0].into());
        put("train.weight.sat_water", self.train.channel_weights[1].into());
        put("train.weight.sat_oil", self.train.channel_weights[2].into());
        put("train.seed", self.train.seed.into());
        put("train.split", self.train.split.into());
        put("hm.learning_rate", self.hm.learning_rate.into());
        put("hm.weight_decay", self.hm.weight_decay.into());
        put("hm.coarse_factor", self.hm.coarse_factor.into());
        put("hm.init_noise_std", self.hm.init_noise_std.into());
        put("hm.max_iterations", self.hm.max_iterations.into());
        put("hm.plateau_window", self.hm.plateau_window.into());
        put("hm.plateau_threshold", self.hm.plateau_threshold.into());
        put("hm.time_weighting", self.hm.time_weighting.into());
        put("hm.q_ref_m3_per_day", self.hm.q_ref_m3_per_day.into());
        put("hm.window_steps", self.hm.window_steps.into());
        put("hm.seed", self.hm.seed.into());
        put(
            "hm.vars",
            match self.hm_vars {
                AdaptVars::Both => "both",
                AdaptVars::RockOnly => "rock_only",
                AdaptVars::ConnectivityOnly => "connectivity_only",
            }
            .into(),
        );
        put("simulate.steps", self.simulate_steps.into());
        Value::Object(m)
    }

    pub fn load_file(&mut self, path: &std::path::Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let v: Value =
            serde_json::from_str(&text).map_err(|e| format!("config is not valid JSON: {e}"))?;
        let obj = v
            .as_object()
            .ok_or_else(|| "config must be a JSON object of dotted keys".to_string())?;
        let mut keys: Vec<&String> = obj.keys().collect();
        keys.sort();
        for k in keys {
            self.apply(k, &obj[k])?;
        }
        Ok(())
    }

    pub fn apply_set(&mut self, kv: &str) -> Result<(), String> {
        let (k, raw) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got {kv}"))?;
        let v: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
        self.apply(k, &v)
    }

    pub fn dataset_config(&self, p0_mean: f64) -> DatasetConfig {
        DatasetConfig {
            n_scenarios: self.gen_scenarios,
            master_seed: self.gen_seed,
            noise: self.noise.clone(),
            schedule: ScheduleGenParams::for_initial_pressure(
                p0_mean,
                self.gen_horizon_days,
                self.gen_step_days,
            ),
        }
    }
}
