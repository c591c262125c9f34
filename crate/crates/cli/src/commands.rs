// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use qjump::io::{self, num, Manifest, ManifestEntry, Stamp, Table};
use qjump::nms::{self, NmsModelParams, SpectrumData};
use qjump::params::JumpRates;
use qjump::qmodel::{self, symmetric_grid, HilbertConfig};
use qjump::rates::{self, CorrelationCurve, RateEstimate};
use qjump::reconstruct::{self, HistogramFit, SpinTrace, ThresholdMethod};
use qjump::telegraph::{self, CountTrace, LevelModel, TwoAtomEnsembleSpec};
use qjump::twoatom::{self, TwoAtomModel};
use serde::Serialize;
use serde_json::json;

use crate::scenario::{Scenario, Task};
use crate::Failure;

fn compute<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Compute(e.to_string())
}

/// Collects written paths.
struct Out<'a> {
    dir: &'a Path,
    stamp: Stamp,
    written: Vec<PathBuf>,
}

impl Out<'_> {
    fn csv(&mut self, name: &str, t: &Table) -> Result<(), Failure> {
        let p = self.dir.join(name);
        t.write(&p, self.stamp).map_err(compute)?;
        self.written.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), Failure> {
        let p = self.dir.join(name);
        io::write_json(&p, v, self.stamp).map_err(compute)?;
        self.written.push(p);
        Ok(())
    }
}

pub fn run(s: &Scenario) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Out {
        dir: &s.out_dir,
        stamp: s.stamp,
        written: Vec::new(),
    };
    match &s.task {
        Task::Spectrum { span_mhz, points } => spectrum(s, *span_mhz, *points, &mut out)?,
        Task::Telegraph {
            spec,
            max_lag_ms,
            method,
        } => {
            let seed = s.seed.expect("checked at load");
            let sims = telegraph::simulate_ensemble(spec, seed).map_err(compute)?;
            let traces: Vec<CountTrace> = sims.into_iter().map(|t| t.trace).collect();
            let manifest = write_counts(&traces, spec.bin_ms, Some(seed), Some(spec), &mut out)?;
            let (fit, spins, amb) = reconstruct_all(&traces, *method, Some(spec.rates), &mut out)?;
            let rates = estimate(&spins, *max_lag_ms, &mut out)?;
            out.json(
                "summary.json",
                &json!({
                    "name": s.name,
                    "command": "telegraph",
                    "seed": seed,
                    "truth": spec.rates,
                    "stationary_f4": spec.rates.stationary_f4(),
                    "n_traces": manifest.files.len(),
                    "duration_ms": spec.duration_ms,
                    "bin_ms": spec.bin_ms,
                    "det_eff": spec.det_eff,
                    "level": spec.level,
                    "histogram": fit,
                    "ambiguous_fraction": amb,
                    "estimates": rates,
                }),
            )?;
        }
        Task::Reconstruct {
            manifest,
            traces,
            method,
        } => {
            let (fit, spins, amb) = reconstruct_all(traces, *method, manifest.rates, &mut out)?;
            let presence: Vec<_> = traces
                .iter()
                .zip(&manifest.files)
                .map(|(t, e)| match reconstruct::detect_presence(t, &fit) {
                    Ok(found) => json!({ "file": e.file, "detected": found, "generated": e.presence }),
                    Err(err) => {
                        json!({ "file": e.file, "detected": null, "reason": err.to_string(), "generated": e.presence })
                    }
                })
                .collect();
            let resolved: usize = spins
                .iter()
                .map(|s| {
                    s.len()
                        - s.resolution_log
                            .iter()
                            .filter(|r| **r == reconstruct::Resolution::Direct)
                            .count()
                })
                .sum();
            out.json(
                "summary.json",
                &json!({
                    "name": s.name,
                    "command": "reconstruct",
                    "histogram": fit,
                    "ambiguous_fraction": amb,
                    "resolved_bins": resolved,
                    "presence": presence,
                }),
            )?;
        }
        Task::Rates {
            manifest,
            traces,
            max_lag_ms,
        } => {
            let rates = estimate(traces, *max_lag_ms, &mut out)?;
            out.json(
                "rates.json",
                &json!({
                    "name": s.name,
                    "command": "rates",
                    "truth": manifest.rates,
                    "estimates": rates,
                }),
            )?;
        }
        Task::Nms { .. } => nms_cmd(s, &mut out)?,
        Task::TwoAtom { .. } => twoatom_cmd(s, &mut out)?,
    }
    Ok(out.written)
}

fn spectrum(s: &Scenario, span: f64, points: usize, out: &mut Out) -> Result<(), Failure> {
    let p = &s.params;
    let grid = symmetric_grid(span, points);
    let h = HilbertConfig::for_params(p).map_err(compute)?;
    let eta = qmodel::calibrated_drive(p);
    let pts = qmodel::spectrum_with(p, &h, &grid, eta).map_err(compute)?;
    let mut t = Table::new(&["detuning_mhz", "transmission", "p_excited", "scattering_rate_per_s"]);
    for q in &pts {
        t.push(vec![
            num(q.detuning_mhz),
            num(q.transmission),
            num(q.p_excited),
            num(q.scattering_rate_per_s),
        ]);
    }
    out.csv("spectrum.csv", &t)?;
    let peaks: Vec<_> = (1..pts.len().saturating_sub(1))
        .filter(|&i| pts[i].transmission > pts[i - 1].transmission && pts[i].transmission >= pts[i + 1].transmission)
        .map(|i| json!({ "detuning_mhz": pts[i].detuning_mhz, "transmission": pts[i].transmission }))
        .collect();
    out.json(
        "spectrum.json",
        &json!({
            "name": s.name,
            "command": "spectrum",
            "params": p,
            "cooperativity": qjump::params::cooperativity(p),
            "drive_eta_mhz": eta,
            "n_fock": h.n_fock,
            "points": points,
            "span_mhz": span,
            "peaks": peaks,
        }),
    )
}

fn write_counts(
    traces: &[CountTrace],
    bin_ms: f64,
    seed: Option<u64>,
    spec: Option<&telegraph::EnsembleSpec>,
    out: &mut Out,
) -> Result<Manifest, Failure> {
    let mut files = Vec::with_capacity(traces.len());
    for (i, t) in traces.iter().enumerate() {
        let name = format!("trace_{i:04}.csv");
        out.csv(&format!("traces/{name}"), &io::count_trace_table(t))?;
        files.push(ManifestEntry {
            file: name,
            seed: t.meta.seed,
            presence: t.meta.presence,
        });
    }
    let m = Manifest {
        kind: "counts".into(),
        bin_ms,
        master_seed: seed,
        rates: spec.map(|s| s.rates),
        level: spec.map(|s| s.level),
        det_eff: spec.map(|s| s.det_eff),
        files,
    };
    out.json("traces/manifest.json", &m)?;
    Ok(m)
}

fn reconstruct_all(
    traces: &[CountTrace],
    method: ThresholdMethod,
    truth: Option<JumpRates>,
    out: &mut Out,
) -> Result<(HistogramFit, Vec<SpinTrace>, f64), Failure> {
    let fit = reconstruct::fit_histogram_with(traces, method).map_err(compute)?;
    let spins: Vec<SpinTrace> = traces
        .iter()
        .map(|t| reconstruct::classify(t, &fit))
        .collect::<Result<_, _>>()
        .map_err(compute)?;
    let amb = reconstruct::ambiguous_fraction(traces, &fit);

    let hist = reconstruct::pooled_histogram(traces);
    let total: u64 = hist.iter().sum();
    let mut t = Table::new(&["counts", "observed", "fitted"]);
    for (c, n) in hist.iter().enumerate() {
        t.push(vec![
            c.to_string(),
            n.to_string(),
            num(total as f64 * fit.density(c as f64)),
        ]);
    }
    out.csv("histogram.csv", &t)?;
    out.json("histogram.json", &fit)?;

    let mut files = Vec::with_capacity(spins.len());
    for (i, s) in spins.iter().enumerate() {
        let name = format!("spin_{i:04}.csv");
        out.csv(&format!("spins/{name}"), &io::spin_trace_table(s))?;
        files.push(ManifestEntry {
            file: name,
            seed: traces[i].meta.seed,
            presence: None,
        });
    }
    let bin_ms = traces.first().map_or(0.0, |t| t.bin_ms);
    out.json(
        "spins/manifest.json",
        &Manifest {
            kind: "spins".into(),
            bin_ms,
            master_seed: None,
            rates: truth,
            level: None,
            det_eff: None,
            files,
        },
    )?;
    Ok((fit, spins, amb))
}

/// A value or the reason it is missing.
#[derive(Serialize)]
#[serde(untagged)]
enum Outcome<T> {
    Value(T),
    Failed { error: String },
}

impl<T, E: std::fmt::Display> From<Result<T, E>> for Outcome<T> {
    fn from(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Outcome::Value(v),
            Err(e) => Outcome::Failed { error: e.to_string() },
        }
    }
}

#[derive(Serialize)]
struct Estimates {
    f4_fraction: f64,
    correlation: Outcome<RateEstimate>,
    dwell: Outcome<RateEstimate>,
    mean_dwell: Outcome<RateEstimate>,
}

/// Correlation curve to CSV plus every estimator; estimator failures are
/// reported in the JSON rather than aborting.
fn estimate(spins: &[SpinTrace], max_lag_ms: f64, out: &mut Out) -> Result<Estimates, Failure> {
    let curve: CorrelationCurve = rates::autocovariance_pooled(spins, max_lag_ms).map_err(compute)?;
    let mut t = Table::new(&["lag_ms", "C", "n_pairs"]);
    for i in 0..curve.lags_ms.len() {
        t.push(vec![
            num(curve.lags_ms[i]),
            num(curve.values[i]),
            curve.n_pairs[i].to_string(),
        ]);
    }
    out.csv("correlation.csv", &t)?;
    Ok(Estimates {
        f4_fraction: rates::f4_fraction(spins),
        correlation: rates::correlation_rates(spins, max_lag_ms).into(),
        dwell: rates::transition_rates(spins).into(),
        mean_dwell: rates::dwell_time_rates_pooled(spins).into(),
    })
}

fn nms_cmd(s: &Scenario, out: &mut Out) -> Result<(), Failure> {
    let Task::Nms {
        model,
        grid,
        model_step_mhz,
        n_cycles,
        data,
        full_cycle,
        fit,
    } = &s.task
    else {
        unreachable!()
    };
    let lo = grid.first().copied().unwrap_or(0.0).min(
        data.as_ref()
            .and_then(|d| d.detunings_mhz.iter().copied().reduce(f64::min))
            .unwrap_or(f64::INFINITY),
    );
    let hi = grid.last().copied().unwrap_or(0.0).max(
        data.as_ref()
            .and_then(|d| d.detunings_mhz.iter().copied().reduce(f64::max))
            .unwrap_or(f64::NEG_INFINITY),
    );
    let n = ((hi - lo) / model_step_mhz + 1e-9).floor() as usize;
    let fine: Vec<f64> = (0..=n).map(|i| lo + model_step_mhz * i as f64).collect();
    let pts = nms::model_points(model, &fine).map_err(compute)?;
    let mut t = Table::new(&[
        "detuning_mhz",
        "p_f3",
        "transfer",
        "scattering_rate_per_s",
        "scattered_photons",
    ]);
    for q in &pts {
        t.push(vec![
            num(q.detuning_mhz),
            num(q.p_f3),
            num(q.transfer),
            num(q.scattering_rate_per_s),
            num(q.scattered_photons),
        ]);
    }
    out.csv("model.csv", &t)?;
    let peaks = nms::spectrum_peaks(model, &fine).map_err(compute)?;

    let (data, source): (SpectrumData, &str) = match (data, full_cycle) {
        (Some(d), _) => (d.clone(), "input"),
        (None, Some(det)) => (
            nms::simulate_full_cycle(model, grid, *n_cycles, det, s.seed.expect("checked at load")).map_err(compute)?,
            "full_cycle",
        ),
        (None, None) => {
            let exact = nms::model_spectrum(model, grid).map_err(compute)?;
            (
                nms::simulate_spectrum(&exact, *n_cycles, s.seed.expect("checked at load")),
                "binomial",
            )
        }
    };
    out.csv("data.csv", &io::spectrum_table(&data))?;

    let fit_result = if *fit {
        Some(nms::fit_spectrum(&data, model).map_err(compute)?)
    } else {
        None
    };
    let fitted_peaks = match &fit_result {
        Some(f) => {
            let m = NmsModelParams {
                n_ph: f.n_ph,
                delta_ca_mhz: f.delta_ca_mhz,
                ..*model
            };
            Some(nms::spectrum_peaks(&m, &fine).map_err(compute)?)
        }
        None => None,
    };
    out.json(
        "fit.json",
        &json!({
            "name": s.name,
            "command": "nms",
            "seed": s.seed,
            "data_source": source,
            "model": model,
            "model_peaks": peaks,
            "fit": fit_result,
            "fitted_peaks": fitted_peaks,
            "readout_jump_probability": nms::readout_jump_probability(s.rates.r_4to3, 2.0),
        }),
    )
}

fn twoatom_cmd(s: &Scenario, out: &mut Out) -> Result<(), Failure> {
    let Task::TwoAtom {
        r1,
        r2,
        g_eff_mhz,
        levels,
        n_traces,
        duration_ms,
        bin_ms,
        det_eff,
    } = &s.task
    else {
        unreachable!()
    };
    let p = s.params.with_atoms(2);
    let (t1, t2) = match levels {
        Some(l) => *l,
        None => twoatom::operating_levels(&p).map_err(compute)?,
    };
    let level = LevelModel::from_transmissions(p.output_flux_per_ms(p.n_empty), t1, t2, 0.0).map_err(compute)?;
    let m = TwoAtomModel::new(*r1, *r2, level).map_err(compute)?;

    let steps = (duration_ms / 0.5).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * duration_ms / steps as f64).collect();
    let mut t = Table::new(&["t_ms", "T_coupled", "T_const_r1", "T_const_r2"]);
    for row in twoatom::curves(&m, &times).map_err(compute)? {
        t.push(vec![
            num(row.t_ms),
            num(row.coupled),
            num(row.const_r1),
            num(row.const_r2),
        ]);
    }
    out.csv("curves.csv", &t)?;

    let spec = TwoAtomEnsembleSpec {
        r1: *r1,
        r2: *r2,
        level,
        det_eff: *det_eff,
        bin_ms: *bin_ms,
        n_traces: *n_traces,
        duration_ms: *duration_ms,
    };
    let traces = telegraph::simulate_two_atom_ensemble(&spec, s.seed.expect("checked at load")).map_err(compute)?;
    let (mean, se) = telegraph::normalized_average(&traces, &level, *det_eff);
    let n_bins = mean.len();
    let expect = m.binned_transmission(*bin_ms, n_bins).map_err(compute)?;
    let c1 = m
        .constant_rate(*r1)
        .binned_transmission(*bin_ms, n_bins)
        .map_err(compute)?;
    let c2 = m
        .constant_rate(*r2)
        .binned_transmission(*bin_ms, n_bins)
        .map_err(compute)?;
    let mut e = Table::new(&["t_ms", "mean", "stderr", "T_coupled", "T_const_r1", "T_const_r2"]);
    for b in 0..n_bins {
        e.push(vec![
            num((b as f64 + 0.5) * bin_ms),
            num(mean[b]),
            num(se[b]),
            num(expect[b]),
            num(c1[b]),
            num(c2[b]),
        ]);
    }
    out.csv("ensemble.csv", &e)?;

    let rms = (mean.iter().zip(&expect).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n_bins.max(1) as f64).sqrt();
    let separated = |c: &[f64]| {
        (0..n_bins).filter(|&b| (c[b] - expect[b]).abs() > 3.0 * se[b]).count() as f64 / n_bins.max(1) as f64
    };
    let r2_levels: Outcome<f64> = twoatom::extract_r2_from_levels(t1, t2, *r1).into();
    let r2_model: Outcome<f64> = twoatom::extract_r2_from_model(&p, *r1).into();
    out.json(
        "summary.json",
        &json!({
            "name": s.name,
            "command": "twoatom",
            "seed": s.seed,
            "r1": r1,
            "r2": r2,
            "g_eff_mhz": g_eff_mhz,
            "t1": t1,
            "t2": t2,
            "r2_from_levels": r2_levels,
            "r2_from_model": r2_model,
            "n_traces": n_traces,
            "bin_ms": bin_ms,
            "rms_vs_coupled": rms,
            "fraction_separated_const_r1": separated(&c1),
            "fraction_separated_const_r2": separated(&c2),
        }),
    )
}
