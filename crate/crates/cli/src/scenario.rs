// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Scenario assembly: defaults, then the config file, then command-line flags.
//! Everything is validated here, before any computation starts.

use std::path::{Path, PathBuf};

use qjump::config::{ConfigError, KeyValues};
use qjump::io::{self, Manifest, Stamp};
use qjump::nms::{DetectionModel, NmsModelParams, SpectrumData};
use qjump::params::{default_params, JumpRates, SystemParams};
use qjump::reconstruct::{SpinTrace, ThresholdMethod};
use qjump::telegraph::{CountTrace, EnsembleSpec, InitialState, LevelModel, SpinState};
use qjump::twoatom::G_EFF_MHZ;

use crate::{Cli, Command, Failure};

const BLOCKS: [&str; 6] = ["spectrum", "telegraph", "reconstruct", "rates", "nms", "twoatom"];

pub const OUT_DIR_ENV: &str = "QJUMP_OUT_DIR";

#[derive(Debug)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub stamp: Stamp,
    pub params: SystemParams,
    pub rates: JumpRates,
    pub task: Task,
}

#[derive(Debug)]
pub enum Task {
    Spectrum {
        span_mhz: f64,
        points: usize,
    },
    Telegraph {
        spec: EnsembleSpec,
        max_lag_ms: f64,
        method: ThresholdMethod,
    },
    Reconstruct {
        manifest: Manifest,
        traces: Vec<CountTrace>,
        method: ThresholdMethod,
    },
    Rates {
        manifest: Manifest,
        traces: Vec<SpinTrace>,
        max_lag_ms: f64,
    },
    Nms {
        model: NmsModelParams,
        grid: Vec<f64>,
        model_step_mhz: f64,
        n_cycles: u64,
        data: Option<SpectrumData>,
        full_cycle: Option<DetectionModel>,
        fit: bool,
    },
    TwoAtom {
        r1: f64,
        r2: f64,
        g_eff_mhz: f64,
        levels: Option<(f64, f64)>,
        n_traces: usize,
        duration_ms: f64,
        bin_ms: f64,
        det_eff: f64,
    },
}

fn cfg(e: ConfigError) -> Failure {
    Failure::Config(e.to_string())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, Failure> {
    if !(lo.is_finite() && hi.is_finite() && step > 0.0 && hi > lo) {
        return Err(invalid(format!(
            "detuning grid needs det_min < det_max and det_step > 0, got {lo}, {hi}, {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

fn initial_state(s: &str) -> Result<InitialState, Failure> {
    match s {
        "stationary" => Ok(InitialState::Stationary),
        "f4" | "F4" => Ok(InitialState::Fixed(SpinState::F4)),
        "f3" | "F3" => Ok(InitialState::Fixed(SpinState::F3)),
        other => Err(invalid(format!(
            "telegraph.initial must be stationary, f4 or f3, got {other:?}"
        ))),
    }
}

impl Scenario {
    pub fn load(cli: &Cli) -> Result<Self, Failure> {
        let (mut kv, base_dir) = match &cli.config {
            Some(path) => {
                let kv = KeyValues::from_file(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                (kv, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (KeyValues::default(), PathBuf::new()),
        };
        let which = match &cli.command {
            Command::Spectrum(_) => "spectrum",
            Command::Telegraph(_) => "telegraph",
            Command::Reconstruct(_) => "reconstruct",
            Command::Rates(_) => "rates",
            Command::Nms(_) => "nms",
            Command::Twoatom(_) => "twoatom",
        };
        for other in BLOCKS.iter().filter(|b| **b != which) {
            let dotted = format!("{other}.");
            if let Some(key) = kv.keys().find(|k| k.starts_with(&dotted)) {
                return Err(invalid(format!(
                    "line {}: `{key}` belongs to the {other} block, but the command is {which}; use one command block per config",
                    kv.line_of(key).unwrap_or(0)
                )));
            }
        }
        let mut block = kv.split_prefix(which);

        let name: String = kv.take("name").map_err(cfg)?.unwrap_or_else(|| which.to_string());
        let seed = cli.seed.or(kv.take("seed").map_err(cfg)?);
        let config_out: Option<PathBuf> = kv.take::<String>("output_dir").map_err(cfg)?.map(|p| base_dir.join(p));
        let out_dir = cli
            .out
            .clone()
            .or(config_out)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("qjump-out"));
        let mut params = SystemParams::take_from(&mut kv, default_params()).map_err(cfg)?;
        let mut r = JumpRates::observed();
        kv.take_into("r_4to3", &mut r.r_4to3).map_err(cfg)?;
        kv.take_into("r_3to4", &mut r.r_3to4).map_err(cfg)?;
        let rates = JumpRates::new(r.r_4to3, r.r_3to4).map_err(|e| invalid(e.to_string()))?;
        let resolve = |p: String| base_dir.join(p);

        let task = match &cli.command {
            Command::Spectrum(a) => {
                let mut span_mhz = 60.0;
                let mut points = 241usize;
                block.take_into("span_mhz", &mut span_mhz).map_err(cfg)?;
                block.take_into("points", &mut points).map_err(cfg)?;
                if let Some(g) = a.g {
                    params.g_mhz = g;
                }
                if let Some(n) = a.atoms {
                    params.n_atoms = n;
                }
                span_mhz = a.span.unwrap_or(span_mhz);
                points = a.points.unwrap_or(points);
                params.validate().map_err(|e| invalid(e.to_string()))?;
                if !(span_mhz > 0.0 && span_mhz.is_finite()) || points < 2 {
                    return Err(invalid("spectrum needs span > 0 and at least 2 points"));
                }
                Task::Spectrum { span_mhz, points }
            }
            Command::Telegraph(a) => {
                let mut spec = EnsembleSpec {
                    rates,
                    det_eff: params.det_eff,
                    bin_ms: params.bin_ms,
                    ..EnsembleSpec::observed()
                };
                let (mut high, mut low, mut bg) = (20.0, 2.0, 0.0);
                let mut max_lag_ms = 40.0;
                let mut initial = String::from("stationary");
                let mut empirical = false;
                block.take_into("n_traces", &mut spec.n_traces).map_err(cfg)?;
                block.take_into("duration_ms", &mut spec.duration_ms).map_err(cfg)?;
                block.take_into("padding_ms", &mut spec.padding_ms).map_err(cfg)?;
                block.take_into("rate_high", &mut high).map_err(cfg)?;
                block.take_into("rate_low", &mut low).map_err(cfg)?;
                block.take_into("background", &mut bg).map_err(cfg)?;
                block.take_into("initial", &mut initial).map_err(cfg)?;
                block.take_into("max_lag_ms", &mut max_lag_ms).map_err(cfg)?;
                block.take_into("empirical_thresholds", &mut empirical).map_err(cfg)?;
                spec.n_traces = a.traces.unwrap_or(spec.n_traces);
                spec.duration_ms = a.duration_ms.unwrap_or(spec.duration_ms);
                spec.initial = initial_state(&initial)?;
                spec.level =
                    LevelModel::from_detected(high, low, low, bg, spec.det_eff).map_err(|e| invalid(e.to_string()))?;
                spec.validate().map_err(|e| invalid(e.to_string()))?;
                if !(max_lag_ms > 0.0) {
                    return Err(invalid("telegraph.max_lag_ms must be positive"));
                }
                Task::Telegraph {
                    spec,
                    max_lag_ms,
                    method: method(empirical || a.empirical_thresholds),
                }
            }
            Command::Reconstruct(a) => {
                let mut empirical = false;
                block.take_into("empirical_thresholds", &mut empirical).map_err(cfg)?;
                let input = a
                    .input
                    .clone()
                    .or(block.take::<String>("input").map_err(cfg)?.map(resolve))
                    .ok_or_else(|| {
                        invalid("reconstruct needs --input or reconstruct.input (a count-trace manifest)")
                    })?;
                let (manifest, traces) = Manifest::read_counts(&input).map_err(|e| invalid(e.to_string()))?;
                Task::Reconstruct {
                    manifest,
                    traces,
                    method: method(empirical || a.empirical_thresholds),
                }
            }
            Command::Rates(a) => {
                let mut max_lag_ms = 40.0;
                block.take_into("max_lag_ms", &mut max_lag_ms).map_err(cfg)?;
                let input = a
                    .input
                    .clone()
                    .or(block.take::<String>("input").map_err(cfg)?.map(resolve))
                    .ok_or_else(|| invalid("rates needs --input or rates.input (a spin-trace manifest)"))?;
                let max_lag_ms = a.max_lag_ms.unwrap_or(max_lag_ms);
                if !(max_lag_ms > 0.0) {
                    return Err(invalid("max_lag_ms must be positive"));
                }
                let (manifest, traces) = Manifest::read_spins(&input).map_err(|e| invalid(e.to_string()))?;
                Task::Rates {
                    manifest,
                    traces,
                    max_lag_ms,
                }
            }
            Command::Nms(a) => {
                let mut m = NmsModelParams {
                    kappa_mhz: params.kappa_mhz,
                    gamma_mhz: params.gamma_mhz,
                    ..NmsModelParams::default()
                };
                block.take_into("n_ph", &mut m.n_ph).map_err(cfg)?;
                block.take_into("delta_ca_mhz", &mut m.delta_ca_mhz).map_err(cfg)?;
                block.take_into("pulse_us", &mut m.pulse_us).map_err(cfg)?;
                block.take_into("branch_to_f3", &mut m.branch_to_f3).map_err(cfg)?;
                block.take_into("g_low_mhz", &mut m.g_low_mhz).map_err(cfg)?;
                block.take_into("g_high_mhz", &mut m.g_high_mhz).map_err(cfg)?;
                block.take_into("background", &mut m.background).map_err(cfg)?;
                block.take_into("g_nodes", &mut m.g_nodes).map_err(cfg)?;
                m.validate().map_err(|e| invalid(e.to_string()))?;
                let (mut lo, mut hi, mut step) = (-24.0, 16.0, 0.5);
                let mut model_step_mhz = 0.25;
                let mut n_cycles = 300u64;
                let mut full = false;
                let mut fit = true;
                let mut det = DetectionModel {
                    r_4to3: rates.r_4to3,
                    ..DetectionModel::default()
                };
                block.take_into("det_min_mhz", &mut lo).map_err(cfg)?;
                block.take_into("det_max_mhz", &mut hi).map_err(cfg)?;
                block.take_into("det_step_mhz", &mut step).map_err(cfg)?;
                block.take_into("model_step_mhz", &mut model_step_mhz).map_err(cfg)?;
                block.take_into("n_cycles", &mut n_cycles).map_err(cfg)?;
                block.take_into("full_cycle", &mut full).map_err(cfg)?;
                block.take_into("fit", &mut fit).map_err(cfg)?;
                block.take_into("readout_window_ms", &mut det.window_ms).map_err(cfg)?;
                block
                    .take_into("readout_threshold", &mut det.threshold_counts)
                    .map_err(cfg)?;
                let n_cycles = a.cycles.unwrap_or(n_cycles);
                let data_path = a
                    .data
                    .clone()
                    .or(block.take::<String>("data").map_err(cfg)?.map(resolve));
                let data = match data_path {
                    Some(p) => {
                        let d = io::read_spectrum(&p).map_err(|e| invalid(e.to_string()))?;
                        d.validate().map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                        Some(d)
                    }
                    None => None,
                };
                if n_cycles == 0 {
                    return Err(invalid("nms.n_cycles must be positive"));
                }
                if !(model_step_mhz > 0.0) || !(det.window_ms > 0.0) {
                    return Err(invalid("nms.model_step_mhz and nms.readout_window_ms must be positive"));
                }
                let full_cycle = (full || a.full_cycle).then_some(det);
                if full_cycle.is_some() && data.is_some() {
                    return Err(invalid(
                        "--full-cycle simulates data; it cannot be combined with --data",
                    ));
                }
                Task::Nms {
                    model: m,
                    grid: grid(lo, hi, step)?,
                    model_step_mhz,
                    n_cycles,
                    data,
                    full_cycle,
                    fit: fit && !a.no_fit,
                }
            }
            Command::Twoatom(a) => {
                let (mut r1, mut r2) = (68.0, 28.0);
                let mut g_eff_mhz = G_EFF_MHZ;
                let (mut t1, mut t2): (Option<f64>, Option<f64>) = (None, None);
                let (mut n_traces, mut duration_ms, mut bin_ms, mut det_eff) = (169usize, 120.0, 1.0, 0.045);
                block.take_into("r1", &mut r1).map_err(cfg)?;
                block.take_into("r2", &mut r2).map_err(cfg)?;
                block.take_into("g_eff_mhz", &mut g_eff_mhz).map_err(cfg)?;
                t1 = block.take("t1").map_err(cfg)?.or(t1);
                t2 = block.take("t2").map_err(cfg)?.or(t2);
                block.take_into("n_traces", &mut n_traces).map_err(cfg)?;
                block.take_into("duration_ms", &mut duration_ms).map_err(cfg)?;
                block.take_into("bin_ms", &mut bin_ms).map_err(cfg)?;
                block.take_into("det_eff", &mut det_eff).map_err(cfg)?;
                let r2 = a.r2.unwrap_or(r2);
                let n_traces = a.traces.unwrap_or(n_traces);
                for (k, v) in [
                    ("r1", r1),
                    ("r2", r2),
                    ("duration_ms", duration_ms),
                    ("bin_ms", bin_ms),
                    ("det_eff", det_eff),
                    ("g_eff_mhz", g_eff_mhz),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(invalid(format!("twoatom.{k} must be positive, got {v}")));
                    }
                }
                let levels = match (t1, t2) {
                    (None, None) => None,
                    (Some(a), Some(b)) if 1.0 > a && a >= b && b >= 0.0 => Some((a, b)),
                    (Some(_), Some(_)) => return Err(invalid("twoatom levels need 1 > t1 >= t2 >= 0")),
                    _ => return Err(invalid("set both twoatom.t1 and twoatom.t2, or neither")),
                };
                params.g_mhz = g_eff_mhz;
                Task::TwoAtom {
                    r1,
                    r2,
                    g_eff_mhz,
                    levels,
                    n_traces,
                    duration_ms,
                    bin_ms,
                    det_eff,
                }
            }
        };
        block
            .ensure_consumed()
            .map_err(|e| invalid(format!("{which} block: {e}")))?;
        kv.ensure_consumed().map_err(cfg)?;

        let stochastic = match &task {
            Task::Telegraph { .. } | Task::TwoAtom { .. } => true,
            Task::Nms { data, .. } => data.is_none(),
            _ => false,
        };
        if stochastic && seed.is_none() {
            return Err(invalid(format!(
                "{which} is stochastic: give --seed or `seed` in the config"
            )));
        }
        Ok(Self {
            name,
            seed,
            out_dir,
            stamp: if cli.no_timestamp { Stamp::none() } else { Stamp::now() },
            params,
            rates,
            task,
        })
    }
}

fn method(empirical: bool) -> ThresholdMethod {
    if empirical {
        ThresholdMethod::Empirical
    } else {
        ThresholdMethod::Fitted
    }
}
