// SPDX-License-Identifier: Apache-2.0
//! Program execution on a behavioral FSM array or on ECM device pairs.
//!
//! Both executors resolve a step's symbolic signals the same way: reads are
//! taken first (from the state before the step), their verdicts feed
//! same-cycle forwards and register latches, and then every line is driven.
//! A cell whose wordline or bitline is grounded holds its state.
//!
//! At device level a logic '1' on a line is `+V_w/2`, a '0' is `-V_w/2` and
//! ground is 0 V, so a cell sees `V_wl - V_bl`: the full `±V_w` only when
//! wordline and bitline disagree. A step with forwarded read-outs is split in
//! two halves: the reading arrays are pulsed first, then the forwarding
//! arrays with the resolved bits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::crs::{self, decode_state, solve_crs_dc, time_to_state, CrsDeviceState, CrsLogicState};
use crate::ecm::EcmParams;
use crate::error::{Error, Result};
use crate::integrate::TransientOptions;
use crate::microcode::{Annotation, CellAddr, Program, Signal};

/// Substeps per pulse width used as the integrator's step ceiling.
pub const SUBSTEPS_PER_PULSE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Full-select write amplitude (V).
    pub v_w: f64,
    /// Pulse width (s).
    pub t_pulse: f64,
    /// Settle time at 0 V between steps (s).
    pub t_gap: f64,
    pub samples_per_pulse: usize,
    /// Peak read current above which a read counts as a spike (A).
    pub i_spike: f64,
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("v_w", self.v_w)?;
        positive("t_pulse", self.t_pulse)?;
        positive("i_spike", self.i_spike)?;
        if !(self.t_gap >= 0.0 && self.t_gap.is_finite()) {
            return Err(Error::Domain(format!(
                "t_gap must be >= 0, got {}",
                self.t_gap
            )));
        }
        if self.samples_per_pulse < 2 {
            return Err(Error::Domain("samples_per_pulse must be >= 2".into()));
        }
        Ok(())
    }

    pub fn transient_options(&self) -> TransientOptions {
        TransientOptions::default().with_max_dt(self.t_pulse / SUBSTEPS_PER_PULSE)
    }

    /// Line potential of a resolved signal (`None` is ground).
    pub fn line_voltage(&self, level: Option<bool>) -> f64 {
        match level {
            None => 0.0,
            Some(true) => 0.5 * self.v_w,
            Some(false) => -0.5 * self.v_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Behavioral,
    Device,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "behavioral" => Ok(Level::Behavioral),
            "device" => Ok(Level::Device),
            _ => Err(Error::Argument(format!(
                "unknown level {s:?} (expected behavioral or device)"
            ))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Behavioral => "behavioral",
            Level::Device => "device",
        })
    }
}

/// Logic state of every cell before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initial {
    #[default]
    AllZero,
    AllOne,
    Seeded(u64),
}

impl Initial {
    fn states(self, cells: &[CellAddr]) -> Vec<bool> {
        match self {
            Initial::AllZero => vec![false; cells.len()],
            Initial::AllOne => vec![true; cells.len()],
            Initial::Seeded(seed) => {
                let mut rng = StdRng::seed_from_u64(seed);
                cells.iter().map(|_| rng.gen()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    pub initial: Initial,
    /// Record line potentials and bitline currents (device level only).
    pub capture_waveform: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            initial: Initial::AllZero,
            capture_waveform: true,
        }
    }
}

/// Operand words and carry-in, least significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operands {
    pub a: Vec<bool>,
    pub b: Vec<bool>,
    pub c0: bool,
}

impl Operands {
    /// Parse MSB-first binary strings.
    pub fn parse(a: &str, b: &str, c0: bool) -> Result<Self> {
        let a = parse_bits(a)?;
        let b = parse_bits(b)?;
        if a.len() != b.len() {
            return Err(Error::Argument(format!(
                "operands differ in width ({} vs {} bits)",
                a.len(),
                b.len()
            )));
        }
        Ok(Self { a, b, c0 })
    }

    pub fn from_ints(a: u64, b: u64, n: usize, c0: bool) -> Self {
        let bits = |v: u64| (0..n).map(|i| v >> i & 1 == 1).collect();
        Self {
            a: bits(a),
            b: bits(b),
            c0,
        }
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }
}

/// Parse an MSB-first binary string into LSB-first bits.
pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    if s.is_empty() {
        return Err(Error::Argument("empty binary operand".into()));
    }
    s.chars()
        .rev()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Argument(format!(
                "invalid binary digit {c:?} in {s:?}"
            ))),
        })
        .collect()
}

/// Format LSB-first bits as an MSB-first string.
pub fn format_bits(bits: &[bool]) -> String {
    bits.iter()
        .rev()
        .map(|&b| if b { '1' } else { '0' })
        .collect()
}

fn sign_extend(bits: &[bool]) -> i128 {
    let n = bits.len();
    let raw: i128 = bits
        .iter()
        .enumerate()
        .map(|(i, &b)| (b as i128) << i)
        .sum();
    if n > 0 && bits[n - 1] {
        raw - (1i128 << n)
    } else {
        raw
    }
}

/// Two's-complement integer value of an operand word.
pub fn signed_value(bits: &[bool]) -> i128 {
    sign_extend(bits)
}

/// Integer oracle: the N+1-bit two's-complement word of `a + b + c0`, or of
/// `a - b` when subtracting.
pub fn expected_sum(ops: &Operands, subtract: bool) -> Vec<bool> {
    let n = ops.width();
    let a = sign_extend(&ops.a);
    let b = sign_extend(&ops.b);
    let value = if subtract {
        a - b
    } else {
        a + b + ops.c0 as i128
    };
    let wrapped = value.rem_euclid(1i128 << (n + 1));
    (0..=n).map(|i| wrapped >> i & 1 == 1).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    /// One-based step number.
    pub step: usize,
    pub cell: CellAddr,
    pub spike: bool,
    pub bit: bool,
}

/// Resolved levels of one array in one step (`None` is ground).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolvedLines {
    pub array: usize,
    pub wl: usize,
    pub wl_level: Option<bool>,
    pub bl_levels: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// One-based step number.
    pub index: usize,
    pub annotation: Annotation,
    pub lines: Vec<ResolvedLines>,
    /// Logic state of every cell (in [`ExecTrace::cells`] order) after the step.
    pub states_after: Vec<CrsLogicState>,
}

/// A cell whose decoded state after a step differs from the FSM prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub step: usize,
    pub cell: CellAddr,
    pub expected: CrsLogicState,
    pub actual: CrsLogicState,
    /// The cell saw less than the full write voltage in this step.
    pub half_selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadPeak {
    pub step: usize,
    pub cell: CellAddr,
    /// Peak |I| during the read window (A).
    pub peak_current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveRow {
    pub t: f64,
    pub step: usize,
    pub annotation: Annotation,
    pub values: Vec<f64>,
}

/// Sampled line potentials and bitline currents of a device-level run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Waveform {
    pub columns: Vec<String>,
    pub rows: Vec<WaveRow>,
}

impl Waveform {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,step_index,annotation");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:.16e},{},{}", row.t, row.step, row.annotation);
            for v in &row.values {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecTrace {
    pub level: Level,
    pub cells: Vec<CellAddr>,
    pub initial_states: Vec<CrsLogicState>,
    pub steps: Vec<StepRecord>,
    pub verdicts: Vec<Verdict>,
    /// Device level only.
    pub read_peaks: Vec<ReadPeak>,
    pub violations: Vec<Violation>,
    /// Sum word, least significant bit first.
    pub result: Vec<bool>,
    #[serde(skip)]
    pub waveform: Option<Waveform>,
}

impl ExecTrace {
    pub fn result_string(&self) -> String {
        format_bits(&self.result)
    }

    pub fn final_states(&self) -> &[CrsLogicState] {
        self.steps
            .last()
            .map_or(&self.initial_states, |s| &s.states_after)
    }

    pub fn half_select_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.half_selected)
    }

    pub fn verdicts_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.verdicts)?)
    }

    /// Per-step cell-state matrix; row 0 is the initial state.
    pub fn state_matrix_csv(&self) -> String {
        let mut out = String::from("step_index,annotation");
        for c in &self.cells {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        let mut row = |idx: usize, label: &str, states: &[CrsLogicState]| {
            let _ = write!(out, "{idx},{label}");
            for s in states {
                let _ = write!(out, ",{s}");
            }
            out.push('\n');
        };
        row(0, "INITIAL", &self.initial_states);
        for step in &self.steps {
            row(step.index, &step.annotation.to_string(), &step.states_after);
        }
        out
    }
}

/// Outcome of a destructive read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Readout {
    pub bit: bool,
    pub spike: bool,
}

/// Resolution context for one step.
struct Resolver<'a> {
    step: usize,
    ops: &'a Operands,
    regs: &'a HashMap<String, bool>,
    forwarded: &'a HashMap<CellAddr, bool>,
}

impl Resolver<'_> {
    fn resolve(&self, sig: &Signal) -> Result<Option<bool>> {
        let input = |bits: &[bool], i: usize| {
            bits.get(i).copied().ok_or_else(|| Error::Execution {
                step: self.step,
                message: format!("signal {sig} indexes past the {}-bit operand", bits.len()),
            })
        };
        Ok(match sig {
            Signal::Const0 => Some(false),
            Signal::Const1 => Some(true),
            Signal::Ground => None,
            Signal::InputA(i) => Some(input(&self.ops.a, *i)?),
            Signal::InputB(i) => Some(input(&self.ops.b, *i)?),
            Signal::NotB(i) => Some(!input(&self.ops.b, *i)?),
            Signal::CarryIn => Some(self.ops.c0),
            Signal::ReadForward(cell) => {
                Some(*self.forwarded.get(cell).ok_or_else(|| Error::Execution {
                    step: self.step,
                    message: format!("{sig} has no read of {cell} in this step"),
                })?)
            }
            Signal::Reg(name) => Some(*self.regs.get(name).ok_or_else(|| Error::Execution {
                step: self.step,
                message: format!("register {name} read before it was latched"),
            })?),
        })
    }

    fn resolve_step(&self, p: &Program, idx: usize) -> Result<Vec<ResolvedLines>> {
        let step = &p.steps[idx];
        if step.arrays.len() != p.layout.len() {
            return Err(Error::Execution {
                step: self.step,
                message: "array count differs from layout".into(),
            });
        }
        p.layout
            .iter()
            .zip(&step.arrays)
            .map(|(layout, drive)| {
                if drive.bls.len() != layout.width {
                    return Err(Error::Execution {
                        step: self.step,
                        message: format!(
                            "A{} has {} bitline signals for width {}",
                            layout.array,
                            drive.bls.len(),
                            layout.width
                        ),
                    });
                }
                Ok(ResolvedLines {
                    array: layout.array,
                    wl: layout.wl,
                    wl_level: self.resolve(&drive.wl)?,
                    bl_levels: drive
                        .bls
                        .iter()
                        .map(|s| self.resolve(s))
                        .collect::<Result<_>>()?,
                })
            })
            .collect()
    }
}

fn check_operands(p: &Program, ops: &Operands) -> Result<()> {
    if ops.a.len() != p.n || ops.b.len() != p.n {
        return Err(Error::Argument(format!(
            "operands have {} and {} bits, program expects {}",
            ops.a.len(),
            ops.b.len(),
            p.n
        )));
    }
    Ok(())
}

fn cell_index(cells: &[CellAddr]) -> HashMap<CellAddr, usize> {
    cells.iter().enumerate().map(|(i, c)| (*c, i)).collect()
}

fn lookup(index: &HashMap<CellAddr, usize>, cell: CellAddr, step: usize) -> Result<usize> {
    index.get(&cell).copied().ok_or_else(|| Error::Execution {
        step,
        message: format!("cell {cell} is outside the program layout"),
    })
}

/// Levels seen by each cell of the layout: (cell index, wl level, bl level).
fn cell_levels<'a>(
    lines: &'a [ResolvedLines],
    p: &'a Program,
) -> impl Iterator<Item = (usize, Option<bool>, Option<bool>)> + 'a {
    let mut offset = 0;
    p.layout.iter().zip(lines).flat_map(move |(layout, l)| {
        let base = offset;
        offset += layout.width;
        l.bl_levels
            .iter()
            .enumerate()
            .map(move |(k, &bl)| (base + k, l.wl_level, bl))
    })
}

/// FSM update of one cell, with ground on either line meaning hold.
fn next_bit(z: bool, wl: Option<bool>, bl: Option<bool>) -> bool {
    match (wl, bl) {
        (Some(w), Some(b)) => crs::fsm_next(z, w, b),
        _ => z,
    }
}

/// Destructive read of a behavioral cell.
pub fn read_behavioral(state: &mut bool) -> Readout {
    let bit = *state;
    *state = true;
    Readout { bit, spike: !bit }
}

pub fn run_behavioral(p: &Program, ops: &Operands) -> Result<ExecTrace> {
    run_behavioral_with(p, ops, &ExecOptions::default())
}

pub fn run_behavioral_with(p: &Program, ops: &Operands, opts: &ExecOptions) -> Result<ExecTrace> {
    check_operands(p, ops)?;
    let cells = p.all_cells();
    let index = cell_index(&cells);
    let mut state = opts.initial.states(&cells);
    let initial_states = state.iter().map(|&b| CrsLogicState::from_bit(b)).collect();
    let mut regs = HashMap::new();
    let mut verdicts = Vec::new();
    let mut steps = Vec::with_capacity(p.len());

    for (idx, step) in p.steps.iter().enumerate() {
        let number = idx + 1;
        let mut forwarded = HashMap::new();
        for cell in &step.reads {
            let i = lookup(&index, *cell, number)?;
            let r = read_behavioral(&mut state[i]);
            forwarded.insert(*cell, r.bit);
            verdicts.push(Verdict {
                step: number,
                cell: *cell,
                spike: r.spike,
                bit: r.bit,
            });
        }
        latch(step, &forwarded, &mut regs, number)?;
        let lines = Resolver {
            step: number,
            ops,
            regs: &regs,
            forwarded: &forwarded,
        }
        .resolve_step(p, idx)?;
        for (i, wl, bl) in cell_levels(&lines, p) {
            state[i] = next_bit(state[i], wl, bl);
        }
        steps.push(StepRecord {
            index: number,
            annotation: step.annotation,
            lines,
            states_after: state.iter().map(|&b| CrsLogicState::from_bit(b)).collect(),
        });
    }

    let result = p
        .result
        .iter()
        .map(|c| lookup(&index, *c, p.len()).map(|i| state[i]))
        .collect::<Result<_>>()?;
    Ok(ExecTrace {
        level: Level::Behavioral,
        cells,
        initial_states,
        steps,
        verdicts,
        read_peaks: vec![],
        violations: vec![],
        result,
        waveform: None,
    })
}

fn latch(
    step: &crate::microcode::Step,
    verdicts: &HashMap<CellAddr, bool>,
    regs: &mut HashMap<String, bool>,
    number: usize,
) -> Result<()> {
    for l in &step.latches {
        let bit = verdicts.get(&l.cell).ok_or_else(|| Error::Execution {
            step: number,
            message: format!("latch {} from {} which is not read", l.reg, l.cell),
        })?;
        regs.insert(l.reg.clone(), *bit);
    }
    Ok(())
}

/// Result of holding one CRS pair at a constant voltage.
#[derive(Debug, Clone)]
pub struct PulseOutcome {
    pub state: CrsDeviceState,
    /// Peak |I| over all accepted substeps, including the start (A).
    pub peak_current: f64,
    /// Current at the end of each of the `segments` equal sub-intervals (A).
    pub currents: Vec<f64>,
}

/// Hold `s` at voltage `v` for `duration`, sampling the current at
/// `segments` evenly spaced times.
pub fn apply_pulse(
    s: &CrsDeviceState,
    v: f64,
    duration: f64,
    segments: usize,
    track_peak: bool,
    opts: &TransientOptions,
    ep: &EcmParams,
) -> Result<PulseOutcome> {
    let segments = segments.max(1);
    if v == 0.0 {
        return Ok(PulseOutcome {
            state: *s,
            peak_current: 0.0,
            currents: vec![0.0; segments],
        });
    }
    let current = |state: &CrsDeviceState| solve_crs_dc(v, state, ep).map(|sol| sol.i);
    let mut state = *s;
    let mut peak = if track_peak {
        current(&state)?.abs()
    } else {
        0.0
    };
    let mut currents = Vec::with_capacity(segments);
    let dt = duration / segments as f64;
    for _ in 0..segments {
        state = crs::step_crs_transient_with(&state, v, dt, ep, opts, |_, st| {
            if track_peak {
                peak = peak.max(current(st)?.abs());
            }
            Ok(())
        })?;
        currents.push(current(&state)?);
    }
    Ok(PulseOutcome {
        state,
        peak_current: peak,
        currents,
    })
}

/// Destructive read of a device pair: a full-select '1'/'0' pulse for
/// `window`, with the verdict taken from the peak current.
pub fn read_device(
    s: &mut CrsDeviceState,
    window: f64,
    pp: &PulseParams,
    ep: &EcmParams,
) -> Result<(Readout, f64)> {
    let out = apply_pulse(s, pp.v_w, window, 1, true, &pp.transient_options(), ep)?;
    *s = out.state;
    let spike = out.peak_current > pp.i_spike;
    Ok((Readout { bit: !spike, spike }, out.peak_current))
}

/// The two states a cell array can be simulated in.
#[derive(Debug, Clone)]
pub enum CellArray {
    Behavioral(BTreeMap<CellAddr, bool>),
    Device {
        cells: BTreeMap<CellAddr, CrsDeviceState>,
        pulse: PulseParams,
        params: EcmParams,
    },
}

impl CellArray {
    pub fn logic_state(&self, cell: CellAddr) -> Result<CrsLogicState> {
        match self {
            CellArray::Behavioral(map) => map
                .get(&cell)
                .map(|&b| CrsLogicState::from_bit(b))
                .ok_or_else(|| Error::Argument(format!("no cell {cell}"))),
            CellArray::Device { cells, params, .. } => {
                let s = cells
                    .get(&cell)
                    .ok_or_else(|| Error::Argument(format!("no cell {cell}")))?;
                decode_state(s, params.gap_midpoint())
            }
        }
    }
}

/// Destructive read-out of one cell at either fidelity level.
pub fn readout_cell(array: &mut CellArray, cell: CellAddr) -> Result<Readout> {
    match array {
        CellArray::Behavioral(map) => {
            let state = map
                .get_mut(&cell)
                .ok_or_else(|| Error::Argument(format!("no cell {cell}")))?;
            Ok(read_behavioral(state))
        }
        CellArray::Device {
            cells,
            pulse,
            params,
        } => {
            let s = cells
                .get_mut(&cell)
                .ok_or_else(|| Error::Argument(format!("no cell {cell}")))?;
            let before = decode_state(s, params.gap_midpoint())?;
            if before == CrsLogicState::On {
                return Err(Error::Argument(format!("cell {cell} is in the ON state")));
            }
            let (r, _) = read_device(s, pulse.t_pulse, pulse, params)?;
            Ok(r)
        }
    }
}

fn decode_bit(
    s: &CrsDeviceState,
    ep: &EcmParams,
    step: usize,
    cell: CellAddr,
) -> Result<CrsLogicState> {
    let state = decode_state(s, ep.gap_midpoint()).map_err(|e| Error::Execution {
        step,
        message: format!("cell {cell}: {e}"),
    })?;
    Ok(state)
}

struct WaveLayout {
    columns: Vec<String>,
    /// Bitline columns: (first cell index, number of cells) per array.
    arrays: Vec<(usize, usize)>,
}

impl WaveLayout {
    fn new(p: &Program) -> Self {
        let mut columns = Vec::new();
        let mut arrays = Vec::new();
        let mut offset = 0;
        for l in &p.layout {
            columns.push(format!("v_wl_{}_{}", l.array, l.wl));
            arrays.push((offset, l.width));
            offset += l.width;
        }
        for l in &p.layout {
            for k in 0..l.width {
                columns.push(format!("v_bl_{}_{}", l.array, l.first_bl + k));
            }
        }
        for l in &p.layout {
            for k in 0..l.width {
                columns.push(format!("i_bl_{}_{}", l.array, l.first_bl + k));
            }
        }
        Self { columns, arrays }
    }
}

/// One drive phase of a device-level step.
struct Phase<'a> {
    lines: &'a [ResolvedLines],
    /// Arrays driven in this phase; the others sit at ground.
    active: Vec<bool>,
    duration: f64,
    samples: usize,
}

pub fn run_device(
    p: &Program,
    ops: &Operands,
    pp: &PulseParams,
    ep: &EcmParams,
) -> Result<ExecTrace> {
    run_device_with(p, ops, pp, ep, &ExecOptions::default())
}

pub fn run_device_with(
    p: &Program,
    ops: &Operands,
    pp: &PulseParams,
    ep: &EcmParams,
    opts: &ExecOptions,
) -> Result<ExecTrace> {
    check_operands(p, ops)?;
    pp.validate()?;
    ep.validate()?;
    let topts = pp.transient_options();
    let cells = p.all_cells();
    let index = cell_index(&cells);
    let initial_bits = opts.initial.states(&cells);
    let mut devices: Vec<CrsDeviceState> = initial_bits
        .iter()
        .map(|&b| CrsDeviceState::from_bit(b, ep))
        .collect();
    let initial_states: Vec<CrsLogicState> = initial_bits
        .iter()
        .map(|&b| CrsLogicState::from_bit(b))
        .collect();
    let wave_layout = WaveLayout::new(p);
    let mut waveform = opts.capture_waveform.then(|| Waveform {
        columns: wave_layout.columns.clone(),
        rows: vec![],
    });
    let mut t = 0.0;
    let mut regs = HashMap::new();
    let mut verdicts = Vec::new();
    let mut read_peaks = Vec::new();
    let mut violations = Vec::new();
    let mut steps = Vec::with_capacity(p.len());
    let mut logic = initial_states.clone();

    for (idx, step) in p.steps.iter().enumerate() {
        let number = idx + 1;
        let read_idx: Vec<usize> = step
            .reads
            .iter()
            .map(|c| lookup(&index, *c, number))
            .collect::<Result<_>>()?;
        let forwarding: Vec<bool> = step
            .arrays
            .iter()
            .map(|d| {
                d.bls
                    .iter()
                    .chain(std::iter::once(&d.wl))
                    .any(|s| matches!(s, Signal::ReadForward(_)))
            })
            .collect();
        let split = forwarding.iter().any(|&f| f);

        // Phase A resolves everything except forwards, which read as '0' here
        // but are never driven in this phase.
        let placeholder: HashMap<CellAddr, bool> = step.reads.iter().map(|c| (*c, false)).collect();
        let pre_lines = Resolver {
            step: number,
            ops,
            regs: &regs,
            forwarded: &placeholder,
        }
        .resolve_step(p, idx)?;
        let first = Phase {
            lines: &pre_lines,
            active: forwarding.iter().map(|f| !f).collect(),
            duration: if split { 0.5 * pp.t_pulse } else { pp.t_pulse },
            samples: if split {
                pp.samples_per_pulse / 2
            } else {
                pp.samples_per_pulse
            },
        };
        let before = logic.clone();
        let mut full_select = vec![false; cells.len()];
        let peaks = drive_phase(
            p,
            &first,
            &mut devices,
            &read_idx,
            &mut full_select,
            &mut t,
            number,
            step.annotation,
            &wave_layout,
            waveform.as_mut(),
            pp,
            ep,
            &topts,
        )?;

        let mut forwarded = HashMap::new();
        for (cell, peak) in step.reads.iter().zip(peaks) {
            let spike = peak > pp.i_spike;
            forwarded.insert(*cell, !spike);
            verdicts.push(Verdict {
                step: number,
                cell: *cell,
                spike,
                bit: !spike,
            });
            read_peaks.push(ReadPeak {
                step: number,
                cell: *cell,
                peak_current: peak,
            });
        }
        latch(step, &forwarded, &mut regs, number)?;
        let lines = Resolver {
            step: number,
            ops,
            regs: &regs,
            forwarded: &forwarded,
        }
        .resolve_step(p, idx)?;
        if split {
            let second = Phase {
                lines: &lines,
                active: forwarding.clone(),
                duration: 0.5 * pp.t_pulse,
                samples: pp.samples_per_pulse - pp.samples_per_pulse / 2,
            };
            drive_phase(
                p,
                &second,
                &mut devices,
                &[],
                &mut full_select,
                &mut t,
                number,
                step.annotation,
                &wave_layout,
                waveform.as_mut(),
                pp,
                ep,
                &topts,
            )?;
        }
        settle(
            &mut t,
            pp,
            number,
            step.annotation,
            &pre_lines,
            &wave_layout,
            waveform.as_mut(),
        );

        // Compare against the FSM prediction from the pre-step decoded states.
        for (i, wl, bl) in cell_levels(&lines, p) {
            let actual = decode_bit(&devices[i], ep, number, cells[i])?;
            if actual == CrsLogicState::On {
                return Err(Error::Execution {
                    step: number,
                    message: format!("cell {} left in the ON state", cells[i]),
                });
            }
            let prior = before[i].bit().unwrap_or(false);
            let mut expected = CrsLogicState::from_bit(next_bit(prior, wl, bl));
            if read_idx.contains(&i) {
                expected = CrsLogicState::One;
            }
            if actual != expected {
                let half_selected = !full_select[i];
                violations.push(Violation {
                    step: number,
                    cell: cells[i],
                    expected,
                    actual,
                    half_selected,
                });
            }
            logic[i] = actual;
        }
        steps.push(StepRecord {
            index: number,
            annotation: step.annotation,
            lines,
            states_after: logic.clone(),
        });
    }

    let result = p
        .result
        .iter()
        .map(|c| {
            let i = lookup(&index, *c, p.len())?;
            logic[i].bit().ok_or_else(|| Error::Execution {
                step: p.len(),
                message: format!("result cell {c} is ON"),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExecTrace {
        level: Level::Device,
        cells,
        initial_states,
        steps,
        verdicts,
        read_peaks,
        violations,
        result,
        waveform,
    })
}

/// Drive one phase; returns the peak read current of each cell in `reads`.
#[allow(clippy::too_many_arguments)]
fn drive_phase(
    p: &Program,
    phase: &Phase<'_>,
    devices: &mut [CrsDeviceState],
    reads: &[usize],
    full_select: &mut [bool],
    t: &mut f64,
    step: usize,
    annotation: Annotation,
    wave: &WaveLayout,
    waveform: Option<&mut Waveform>,
    pp: &PulseParams,
    ep: &EcmParams,
    opts: &TransientOptions,
) -> Result<Vec<f64>> {
    let samples = phase.samples.max(1);
    let mut currents = vec![vec![0.0; samples]; devices.len()];
    let mut peaks = vec![0.0; reads.len()];
    let mut wl_v = vec![0.0; p.layout.len()];
    let mut bl_v = vec![0.0; devices.len()];
    let mut offset = 0;
    for (a, (layout, lines)) in p.layout.iter().zip(phase.lines).enumerate() {
        if phase.active[a] {
            wl_v[a] = pp.line_voltage(lines.wl_level);
            for k in 0..layout.width {
                bl_v[offset + k] = pp.line_voltage(lines.bl_levels[k]);
            }
        }
        offset += layout.width;
    }
    let mut cell = 0;
    for (a, layout) in p.layout.iter().enumerate() {
        for _ in 0..layout.width {
            let v = wl_v[a] - bl_v[cell];
            if (v.abs() - pp.v_w).abs() <= 1e-9 * pp.v_w {
                full_select[cell] = true;
            }
            let read_slot = reads.iter().position(|&r| r == cell);
            let out = apply_pulse(
                &devices[cell],
                v,
                phase.duration,
                samples,
                read_slot.is_some(),
                opts,
                ep,
            )
            .map_err(|e| Error::Execution {
                step,
                message: format!("cell {}: {e}", p.all_cells()[cell]),
            })?;
            devices[cell] = out.state;
            currents[cell] = out.currents;
            if let Some(slot) = read_slot {
                peaks[slot] = out.peak_current;
            }
            cell += 1;
        }
    }
    if let Some(w) = waveform {
        let dt = phase.duration / samples as f64;
        for s in 0..samples {
            let mut values = wl_v.clone();
            values.extend_from_slice(&bl_v);
            // One wordline per array, so a bitline current is its cell's current.
            for &(first, width) in &wave.arrays {
                values.extend(currents[first..first + width].iter().map(|c| c[s]));
            }
            w.rows.push(WaveRow {
                t: *t + (s + 1) as f64 * dt,
                step,
                annotation,
                values,
            });
        }
    }
    *t += phase.duration;
    Ok(peaks)
}

fn settle(
    t: &mut f64,
    pp: &PulseParams,
    step: usize,
    annotation: Annotation,
    lines: &[ResolvedLines],
    wave: &WaveLayout,
    waveform: Option<&mut Waveform>,
) {
    if pp.t_gap <= 0.0 {
        return;
    }
    *t += pp.t_gap;
    if let Some(w) = waveform {
        let width: usize = lines.iter().map(|l| l.bl_levels.len()).sum();
        let values = vec![0.0; wave.arrays.len() + 2 * width];
        w.rows.push(WaveRow {
            t: *t,
            step,
            annotation,
            values,
        });
    }
}

/// Time for a ZERO pair to decode as ONE at a constant voltage `v`, or `None`
/// within `t_max`.
pub fn switch_time(
    v: f64,
    t_max: f64,
    ep: &EcmParams,
    opts: &TransientOptions,
) -> Result<Option<f64>> {
    time_to_state(
        &CrsDeviceState::zero(ep),
        v,
        CrsLogicState::One,
        t_max,
        ep,
        opts,
    )
}

/// Shortest pulse that completes a ZERO to ONE write at amplitude `v_w`.
pub fn min_pulse_width(v_w: f64, ep: &EcmParams) -> Result<Option<f64>> {
    switch_time(v_w, 1.0, ep, &TransientOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_margin: f64,
    /// ZERO to ONE switching time at `v_w` (s).
    pub t_switch_full: f64,
    /// Largest gap movement of a half-selected cell over one pulse (m).
    pub half_select_drift: f64,
    /// Drift budget `(L - x_min) / margin` (m).
    pub drift_limit: f64,
    /// Half-select disturb horizon that was checked (`margin * t_pulse`).
    pub disturb_horizon: f64,
    /// Peak read current of a cell holding '0' (A).
    pub spike_peak: f64,
    /// Peak read current of a cell holding '1' (A).
    pub no_spike_peak: f64,
    /// Pulse widths tried, widest first.
    pub pulse_widths_tried: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub pulse: PulseParams,
    pub report: CalibrationReport,
}

/// Search knobs of [`calibrate_pulse_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSearch {
    pub v_w_seed: f64,
    pub t_pulse_seed: f64,
    pub v_w_max: f64,
    /// Width of the final amplitude bracket (V).
    pub v_w_resolution: f64,
    /// A full-select write must finish within `t_pulse / write_headroom`.
    pub write_headroom: f64,
    pub max_pulse_reductions: usize,
    pub samples_per_pulse: usize,
}

impl Default for CalibrationSearch {
    fn default() -> Self {
        Self {
            v_w_seed: 2.6,
            t_pulse_seed: 10e-6,
            v_w_max: 8.0,
            v_w_resolution: 0.01,
            // Forwarded writes only get half a pulse; keep another factor of 2.
            write_headroom: 4.0,
            max_pulse_reductions: 4,
            samples_per_pulse: 200,
        }
    }
}

pub fn calibrate_pulse(ep: &EcmParams, target_margin: f64) -> Result<Calibration> {
    calibrate_pulse_with(ep, target_margin, &CalibrationSearch::default())
}

/// Pick `(V_w, t_pulse)` so that full-select writes finish well within the
/// pulse while half-selected cells barely move, then place the spike
/// threshold between the two read peaks.
pub fn calibrate_pulse_with(
    ep: &EcmParams,
    target_margin: f64,
    search: &CalibrationSearch,
) -> Result<Calibration> {
    ep.validate()?;
    if !(target_margin > 1.0) {
        return Err(Error::Argument(format!(
            "target margin must be > 1, got {target_margin}"
        )));
    }
    let mut t_pulse = search.t_pulse_seed;
    let mut tried = Vec::new();
    let mut last_failure = String::new();
    for _ in 0..=search.max_pulse_reductions {
        tried.push(t_pulse);
        let opts = TransientOptions::default().with_max_dt(t_pulse / SUBSTEPS_PER_PULSE);
        let budget = t_pulse / search.write_headroom;
        let Some(v_w) = min_write_voltage(budget, search, ep, &opts)? else {
            last_failure = format!(
                "no amplitude up to {} V writes within {budget:e} s",
                search.v_w_max
            );
            t_pulse *= 10.0;
            continue;
        };
        let t_switch_full = switch_time(v_w, budget, ep, &opts)?.ok_or_else(|| {
            Error::Calibration(format!(
                "write at {v_w} V did not repeat within {budget:e} s"
            ))
        })?;
        let drift_limit = (ep.l - ep.x_min) / target_margin;
        let drift = half_select_drift(v_w, t_pulse, ep, &opts)?;
        let horizon = target_margin * t_pulse;
        let disturbed = switch_time(
            0.5 * v_w,
            horizon,
            ep,
            &TransientOptions::default().with_max_dt(horizon / SUBSTEPS_PER_PULSE),
        )?;
        if drift >= drift_limit || disturbed.is_some() {
            last_failure = format!(
                "V_w={v_w:.3} V, t_pulse={t_pulse:e} s: half-select drift {drift:e} m (limit {drift_limit:e} m), disturb time {disturbed:?}"
            );
            t_pulse /= 10.0;
            continue;
        }
        let read_pp = PulseParams {
            v_w,
            t_pulse,
            t_gap: 0.1 * t_pulse,
            samples_per_pulse: search.samples_per_pulse,
            i_spike: f64::MIN_POSITIVE,
        };
        // Reads in forwarding steps only get half a pulse.
        let (_, spike_peak) =
            read_device(&mut CrsDeviceState::zero(ep), 0.5 * t_pulse, &read_pp, ep)?;
        let (_, no_spike_peak) =
            read_device(&mut CrsDeviceState::one(ep), 0.5 * t_pulse, &read_pp, ep)?;
        if !(spike_peak > no_spike_peak) {
            return Err(Error::Calibration(format!(
                "spike peak {spike_peak:e} A does not exceed no-spike peak {no_spike_peak:e} A"
            )));
        }
        let pulse = PulseParams {
            i_spike: (spike_peak * no_spike_peak).sqrt(),
            ..read_pp
        };
        return Ok(Calibration {
            pulse,
            report: CalibrationReport {
                target_margin,
                t_switch_full,
                half_select_drift: drift,
                drift_limit,
                disturb_horizon: horizon,
                spike_peak,
                no_spike_peak,
                pulse_widths_tried: tried,
            },
        });
    }
    Err(Error::Calibration(format!(
        "no feasible pulse found; last attempt: {last_failure}"
    )))
}

/// Smallest amplitude (to `v_w_resolution`) whose ZERO to ONE write takes at
/// most `budget`.
fn min_write_voltage(
    budget: f64,
    search: &CalibrationSearch,
    ep: &EcmParams,
    opts: &TransientOptions,
) -> Result<Option<f64>> {
    let writes = |v: f64| -> Result<bool> { Ok(switch_time(v, budget, ep, opts)?.is_some()) };
    let mut lo = search.v_w_seed;
    let mut hi = search.v_w_seed;
    if writes(lo)? {
        // Walk down to a failing amplitude.
        loop {
            lo -= 0.25;
            if lo <= 0.0 {
                return Ok(Some(hi));
            }
            if !writes(lo)? {
                break;
            }
            hi = lo;
        }
    } else {
        loop {
            hi += 0.25;
            if hi > search.v_w_max {
                return Ok(None);
            }
            if writes(hi)? {
                break;
            }
            lo = hi;
        }
    }
    while hi - lo > search.v_w_resolution {
        let mid = 0.5 * (lo + hi);
        if writes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Largest gap change of a ZERO or ONE cell held at `±V_w/2` for one pulse.
pub fn half_select_drift(
    v_w: f64,
    t_pulse: f64,
    ep: &EcmParams,
    opts: &TransientOptions,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for start in [CrsDeviceState::zero(ep), CrsDeviceState::one(ep)] {
        for v in [0.5 * v_w, -0.5 * v_w] {
            let end = crs::step_crs_transient_with(&start, v, t_pulse, ep, opts, |_, _| Ok(()))?;
            worst = worst
                .max((end.top.x - start.top.x).abs())
                .max((end.bottom.x - start.bottom.x).abs());
        }
    }
    Ok(worst)
}
