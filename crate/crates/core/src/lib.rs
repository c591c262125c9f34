// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Simulation and analysis of quantum jumps of atoms strongly coupled to a
//! high-finesse optical cavity.
//!
//! * [`params`]: physical parameters and unit conventions
//! * [`qmodel`]: Lindblad steady state of the driven atom-cavity system
//! * [`telegraph`]: synthetic photon-count telegraph traces
//! * [`reconstruct`]: histogram thresholds and spin-state reconstruction
//! * [`rates`]: jump-rate extraction by correlation and dwell times
//! * [`nms`]: normal-mode-splitting spectrum model and fit
//! * [`twoatom`]: conditional two-atom jump dynamics
//! * [`io`]: CSV/JSON files with atomic writes

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod fit;
pub mod io;
pub mod nms;
pub mod params;
pub mod qmodel;
pub mod rates;
pub mod reconstruct;
pub mod telegraph;
pub mod twoatom;
