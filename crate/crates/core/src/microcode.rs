// SPDX-License-Identifier: Apache-2.0
//! Microcode for CRS crossbar arithmetic.
//!
//! A [`Program`] is a sequence of [`Step`]s. Each step assigns one symbolic
//! [`Signal`] to the active wordline of every array in the layout and one to
//! each of its bitlines, optionally reading cells (destructively) in the same
//! cycle. Signals are resolved to logic levels only at execution time.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellAddr {
    pub array: usize,
    pub wl: usize,
    pub bl: usize,
}

impl CellAddr {
    pub const fn new(array: usize, wl: usize, bl: usize) -> Self {
        Self { array, wl, bl }
    }
}

impl fmt::Display for CellAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}/{}/{}", self.array, self.wl, self.bl)
    }
}

impl FromStr for CellAddr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Argument(format!(
                "invalid cell address {s:?} (expected A<array>/<wl>/<bl>)"
            ))
        };
        let rest = s.strip_prefix('A').ok_or_else(bad)?;
        let mut parts = rest
            .split('/')
            .map(|p| p.parse::<usize>().map_err(|_| bad()));
        let (Some(array), Some(wl), Some(bl), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        Ok(CellAddr {
            array: array?,
            wl: wl?,
            bl: bl?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Signal {
    Const0,
    Const1,
    Ground,
    InputA(usize),
    InputB(usize),
    NotB(usize),
    CarryIn,
    /// This cycle's read-out of another cell.
    ReadForward(CellAddr),
    /// A register latched by an earlier read.
    Reg(String),
}

impl Signal {
    pub fn is_ground(&self) -> bool {
        matches!(self, Signal::Ground)
    }

    /// Swap `b` for its complement and force the carry-in to '1'.
    fn for_subtraction(self) -> Self {
        match self {
            Signal::InputB(i) => Signal::NotB(i),
            Signal::NotB(i) => Signal::InputB(i),
            Signal::CarryIn => Signal::Const1,
            other => other,
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Const0 => f.write_str("const0"),
            Signal::Const1 => f.write_str("const1"),
            Signal::Ground => f.write_str("ground"),
            Signal::InputA(i) => write!(f, "a:{i}"),
            Signal::InputB(i) => write!(f, "b:{i}"),
            Signal::NotB(i) => write!(f, "not_b:{i}"),
            Signal::CarryIn => f.write_str("carry_in"),
            Signal::ReadForward(c) => write!(f, "read_fwd:{c}"),
            Signal::Reg(name) => write!(f, "reg:{name}"),
        }
    }
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let index = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Argument(format!("invalid bit index in signal {s:?}")))
        };
        Ok(match s.split_once(':') {
            None => match s {
                "const0" => Signal::Const0,
                "const1" => Signal::Const1,
                "ground" => Signal::Ground,
                "carry_in" => Signal::CarryIn,
                _ => return Err(Error::Argument(format!("unknown signal {s:?}"))),
            },
            Some(("a", i)) => Signal::InputA(index(i)?),
            Some(("b", i)) => Signal::InputB(index(i)?),
            Some(("not_b", i)) => Signal::NotB(index(i)?),
            Some(("read_fwd", c)) => Signal::ReadForward(c.parse()?),
            Some(("reg", name)) if !name.is_empty() => Signal::Reg(name.to_string()),
            _ => return Err(Error::Argument(format!("unknown signal {s:?}"))),
        })
    }
}

macro_rules! serde_via_string {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_string!(Signal);
serde_via_string!(CellAddr);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    InitRead,
    ProgramC0,
    Carry,
    Sum1,
    Sum2,
    Read,
    Writeback,
    FinalRead,
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Annotation::InitRead => "INIT_READ",
            Annotation::ProgramC0 => "PROGRAM_C0",
            Annotation::Carry => "CARRY",
            Annotation::Sum1 => "SUM1",
            Annotation::Sum2 => "SUM2",
            Annotation::Read => "READ",
            Annotation::Writeback => "WRITEBACK",
            Annotation::FinalRead => "FINAL_READ",
        })
    }
}

/// Signals of one array in one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDrive {
    pub wl: Signal,
    pub bls: Vec<Signal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latch {
    pub cell: CellAddr,
    pub reg: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub annotation: Annotation,
    /// One entry per array of the program layout, in layout order.
    pub arrays: Vec<ArrayDrive>,
    #[serde(default)]
    pub reads: Vec<CellAddr>,
    #[serde(default)]
    pub latches: Vec<Latch>,
}

/// Placement of one active wordline: `width` consecutive bitlines starting at
/// `first_bl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub array: usize,
    pub wl: usize,
    pub first_bl: usize,
    pub width: usize,
}

impl ArrayLayout {
    pub fn cell(&self, k: usize) -> CellAddr {
        CellAddr::new(self.array, self.wl, self.first_bl + k)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellAddr> + '_ {
        (0..self.width).map(|k| self.cell(k))
    }

    /// Position of `cell` along this wordline.
    pub fn offset_of(&self, cell: CellAddr) -> Option<usize> {
        (cell.array == self.array && cell.wl == self.wl && cell.bl >= self.first_bl)
            .then(|| cell.bl - self.first_bl)
            .filter(|&k| k < self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Precalculation adder.
    Pc,
    /// Toggle-cell adder.
    Tc,
    /// Hand-written program without a closed-form length.
    Custom,
}

impl Scheme {
    pub fn cycles(self, n: usize) -> Option<usize> {
        match self {
            Scheme::Pc => Some(2 * (n + 1) + 2),
            Scheme::Tc => Some(4 * n + 5),
            Scheme::Custom => None,
        }
    }

    pub fn devices(self, n: usize) -> Option<usize> {
        match self {
            Scheme::Pc => Some(2 * (n + 1)),
            Scheme::Tc => Some(n + 2),
            Scheme::Custom => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Pc => "pc",
            Scheme::Tc => "tc",
            Scheme::Custom => "custom",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pc" => Ok(Scheme::Pc),
            "tc" => Ok(Scheme::Tc),
            "custom" => Ok(Scheme::Custom),
            _ => Err(Error::Argument(format!(
                "unknown scheme {s:?} (expected pc or tc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub scheme: Scheme,
    pub n: usize,
    #[serde(default)]
    pub subtract: bool,
    pub layout: Vec<ArrayLayout>,
    /// Sum cells, least significant first (N + 1 of them).
    pub result: Vec<CellAddr>,
    /// Number of cells the program declares it uses.
    pub devices: usize,
    pub steps: Vec<Step>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Index into `layout` of the array that owns `cell`.
    pub fn locate(&self, cell: CellAddr) -> Option<(usize, usize)> {
        self.layout
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.offset_of(cell).map(|k| (i, k)))
    }

    /// Cells whose bitline carries a non-ground signal in at least one step.
    pub fn touched_cells(&self) -> BTreeSet<CellAddr> {
        let mut out = BTreeSet::new();
        for step in &self.steps {
            for (layout, drive) in self.layout.iter().zip(&step.arrays) {
                for (k, sig) in drive.bls.iter().enumerate() {
                    if !sig.is_ground() && k < layout.width {
                        out.insert(layout.cell(k));
                    }
                }
            }
        }
        out
    }

    pub fn all_cells(&self) -> Vec<CellAddr> {
        self.layout
            .iter()
            .flat_map(|l| l.cells().collect::<Vec<_>>())
            .collect()
    }

    /// Human-readable step table, most significant bitline on the left.
    pub fn step_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scheme={} n={} subtract={} steps={}",
            self.scheme,
            self.n,
            self.subtract,
            self.len()
        );
        for (idx, step) in self.steps.iter().enumerate() {
            let _ = write!(out, "{:>3} {:<10}", idx + 1, step.annotation.to_string());
            for (layout, drive) in self.layout.iter().zip(&step.arrays) {
                let bls: Vec<String> = drive.bls.iter().rev().map(short_signal).collect();
                let _ = write!(
                    out,
                    " | A{} wl{}={:<6} bl[{}]",
                    layout.array,
                    layout.wl,
                    short_signal(&drive.wl),
                    bls.join(" ")
                );
            }
            if !step.reads.is_empty() {
                let reads: Vec<String> = step.reads.iter().map(|c| c.to_string()).collect();
                let _ = write!(out, " | read {}", reads.join(","));
            }
            for latch in &step.latches {
                let _ = write!(out, " -> {}", latch.reg);
            }
            out.push('\n');
        }
        out
    }
}

/// Listing notation: '1' / '0' for constants, 0 for ground.
fn short_signal(s: &Signal) -> String {
    match s {
        Signal::Const0 => "'0'".into(),
        Signal::Const1 => "'1'".into(),
        Signal::Ground => "0".into(),
        Signal::InputA(i) => format!("a{i}"),
        Signal::InputB(i) => format!("b{i}"),
        Signal::NotB(i) => format!("~b{i}"),
        Signal::CarryIn => "c0".into(),
        Signal::ReadForward(c) => format!("rd({c})"),
        Signal::Reg(name) => name.clone(),
    }
}

/// Placement of the precalculation adder's two wordlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcPlacement {
    pub calc_array: usize,
    pub calc_wl: usize,
    pub aux_array: usize,
    pub aux_wl: usize,
    pub first_bl: usize,
}

impl Default for PcPlacement {
    fn default() -> Self {
        Self {
            calc_array: 0,
            calc_wl: 0,
            aux_array: 1,
            aux_wl: 0,
            first_bl: 0,
        }
    }
}

/// Placement of the toggle-cell adder: toggle cell at `first_bl`, sum cells
/// on the following bitlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcPlacement {
    pub array: usize,
    pub wl: usize,
    pub first_bl: usize,
}

fn check_width(n: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::Argument(format!(
            "operand width must be >= 1, got {n}"
        )));
    }
    Ok(())
}

/// Operand bit used at significance `i`; significance N repeats bit N-1.
fn src(i: usize, n: usize) -> usize {
    i.min(n - 1)
}

fn grounds(width: usize) -> Vec<Signal> {
    vec![Signal::Ground; width]
}

fn finish(mut program: Program) -> Program {
    if program.subtract {
        for step in &mut program.steps {
            for drive in &mut step.arrays {
                drive.wl = std::mem::replace(&mut drive.wl, Signal::Ground).for_subtraction();
                for bl in &mut drive.bls {
                    *bl = std::mem::replace(bl, Signal::Ground).for_subtraction();
                }
            }
        }
    }
    program
}

pub fn gen_pc_adder(n: usize, subtract: bool) -> Result<Program> {
    gen_pc_adder_with(n, subtract, PcPlacement::default())
}

pub fn gen_pc_adder_with(n: usize, subtract: bool, place: PcPlacement) -> Result<Program> {
    check_width(n)?;
    if place.calc_array == place.aux_array && place.calc_wl == place.aux_wl {
        return Err(Error::Argument(
            "calculation and auxiliary wordlines must differ".into(),
        ));
    }
    let width = n + 1;
    let calc = ArrayLayout {
        array: place.calc_array,
        wl: place.calc_wl,
        first_bl: place.first_bl,
        width,
    };
    let aux = ArrayLayout {
        array: place.aux_array,
        wl: place.aux_wl,
        first_bl: place.first_bl,
        width,
    };
    let mut steps = Vec::with_capacity(2 * width + 2);

    let read_all = ArrayDrive {
        wl: Signal::Const1,
        bls: vec![Signal::Const0; width],
    };
    steps.push(Step {
        annotation: Annotation::InitRead,
        arrays: vec![read_all.clone(), read_all],
        reads: calc.cells().chain(aux.cells()).collect(),
        latches: vec![],
    });
    let program_c0 = ArrayDrive {
        wl: Signal::CarryIn,
        bls: vec![Signal::Const1; width],
    };
    steps.push(Step {
        annotation: Annotation::ProgramC0,
        arrays: vec![program_c0.clone(), program_c0],
        reads: vec![],
        latches: vec![],
    });

    // Carry chain in both wordlines; calc cell i branches off into s'_i.
    for i in 0..width {
        let j = src(i, n);
        let calc_bls = (0..width)
            .map(|k| match k.cmp(&i) {
                std::cmp::Ordering::Less => Signal::Ground,
                std::cmp::Ordering::Equal => Signal::InputB(j),
                std::cmp::Ordering::Greater => Signal::NotB(j),
            })
            .collect();
        let aux_bls = (0..width)
            .map(|k| {
                if k < i {
                    Signal::Ground
                } else {
                    Signal::NotB(j)
                }
            })
            .collect();
        steps.push(Step {
            annotation: Annotation::Carry,
            arrays: vec![
                ArrayDrive {
                    wl: Signal::InputA(j),
                    bls: calc_bls,
                },
                ArrayDrive {
                    wl: Signal::InputA(j),
                    bls: aux_bls,
                },
            ],
            reads: vec![],
            latches: vec![],
        });
    }

    // Read c_{i+1} from the auxiliary wordline and merge it into s_i.
    for i in 0..width {
        let j = src(i, n);
        let mut calc_bls = grounds(width);
        calc_bls[i] = Signal::ReadForward(aux.cell(i));
        let mut aux_bls = grounds(width);
        aux_bls[i] = Signal::Const0;
        steps.push(Step {
            annotation: Annotation::Sum2,
            arrays: vec![
                ArrayDrive {
                    wl: Signal::InputB(j),
                    bls: calc_bls,
                },
                ArrayDrive {
                    wl: Signal::Const1,
                    bls: aux_bls,
                },
            ],
            reads: vec![aux.cell(i)],
            latches: vec![],
        });
    }

    Ok(finish(Program {
        scheme: Scheme::Pc,
        n,
        subtract,
        layout: vec![calc, aux],
        result: calc.cells().collect(),
        devices: 2 * width,
        steps,
    }))
}

/// Register name holding `c_{i+1}`.
pub fn carry_register(i: usize) -> String {
    format!("c{}", i + 1)
}

pub fn gen_tc_adder(n: usize, subtract: bool) -> Result<Program> {
    gen_tc_adder_with(n, subtract, TcPlacement::default())
}

pub fn gen_tc_adder_with(n: usize, subtract: bool, place: TcPlacement) -> Result<Program> {
    check_width(n)?;
    let width = n + 2;
    let layout = ArrayLayout {
        array: place.array,
        wl: place.wl,
        first_bl: place.first_bl,
        width,
    };
    let tc = 0;
    let sum = |i: usize| i + 1;
    let single = |wl: Signal, bls: Vec<Signal>| vec![ArrayDrive { wl, bls }];
    let mut steps = Vec::with_capacity(4 * n + 5);

    steps.push(Step {
        annotation: Annotation::InitRead,
        arrays: single(Signal::Const1, vec![Signal::Const0; width]),
        reads: layout.cells().collect(),
        latches: vec![],
    });
    steps.push(Step {
        annotation: Annotation::ProgramC0,
        arrays: single(Signal::CarryIn, vec![Signal::Const1; width]),
        reads: vec![],
        latches: vec![],
    });

    for i in 0..=n {
        let j = src(i, n);
        let reg = carry_register(i);

        // c_{i+1} in the toggle cell and higher sum cells, s'_i in sum cell i.
        let mut bls = grounds(width);
        bls[tc] = Signal::NotB(j);
        for k in i..=n {
            bls[sum(k)] = if k == i {
                Signal::InputB(j)
            } else {
                Signal::NotB(j)
            };
        }
        steps.push(Step {
            annotation: Annotation::Carry,
            arrays: single(Signal::InputA(j), bls),
            reads: vec![],
            latches: vec![],
        });

        let mut bls = grounds(width);
        bls[tc] = Signal::Const0;
        steps.push(Step {
            annotation: Annotation::Read,
            arrays: single(Signal::Const1, bls),
            reads: vec![layout.cell(tc)],
            latches: vec![Latch {
                cell: layout.cell(tc),
                reg: reg.clone(),
            }],
        });

        let mut bls = grounds(width);
        bls[sum(i)] = Signal::Reg(reg.clone());
        steps.push(Step {
            annotation: Annotation::Sum2,
            arrays: single(Signal::InputB(j), bls),
            reads: vec![],
            latches: vec![],
        });

        if i < n {
            let mut bls = grounds(width);
            bls[tc] = Signal::Const1;
            steps.push(Step {
                annotation: Annotation::Writeback,
                arrays: single(Signal::Reg(reg), bls),
                reads: vec![],
                latches: vec![],
            });
        }
    }

    Ok(finish(Program {
        scheme: Scheme::Tc,
        n,
        subtract,
        layout: vec![layout],
        result: (0..=n).map(|i| layout.cell(sum(i))).collect(),
        devices: width,
        steps,
    }))
}

pub fn gen_adder(scheme: Scheme, n: usize, subtract: bool) -> Result<Program> {
    match scheme {
        Scheme::Pc => gen_pc_adder(n, subtract),
        Scheme::Tc => gen_tc_adder(n, subtract),
        Scheme::Custom => Err(Error::Argument("no generator for custom programs".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: String,
    pub devices: u64,
    pub cycles: u64,
    pub common_crossbar: bool,
}

/// Device / cycle counts of the compared in-memory adders for width `n`.
pub fn comparison_table(n: u64) -> Vec<ComparisonRow> {
    let row = |scheme: &str, devices: u64, cycles: u64, common_crossbar: bool| ComparisonRow {
        scheme: scheme.to_string(),
        devices,
        cycles,
        common_crossbar,
    };
    vec![
        row("Lehtonen", 3 * n + 5, 88 * n + 48, true),
        row("Kvatinsky serial", 3 * n + 3, 29 * n, true),
        row("Kvatinsky parallel", 9 * n, 5 * n + 18, false),
        row("PC-Adder", 2 * (n + 1), 2 * (n + 1) + 2, true),
        row("TC-Adder", n + 2, 4 * n + 5, true),
    ]
}

/// Indices of the rows with minimal device and cycle counts.
pub fn best_rows(rows: &[ComparisonRow]) -> (Vec<usize>, Vec<usize>) {
    let argmins = |key: fn(&ComparisonRow) -> u64| {
        let best = rows.iter().map(key).min().unwrap_or(0);
        rows.iter()
            .enumerate()
            .filter(|(_, r)| key(r) == best)
            .map(|(i, _)| i)
            .collect()
    };
    (argmins(|r| r.devices), argmins(|r| r.cycles))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Length,
    Shape,
    Bounds,
    Dominance,
    ForwardLegality,
    ReadDrive,
    Latch,
    DeviceUsage,
    Result,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Zero-based step index, if the issue is local to a step.
    pub step: Option<usize>,
    pub message: String,
}

/// Structural checks; an empty result means the program is well formed.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut push = |kind, step, message: String| {
        diags.push(Diagnostic {
            kind,
            step,
            message,
        })
    };

    if let Some(expected) = p.scheme.cycles(p.n) {
        if p.steps.len() != expected {
            push(
                DiagnosticKind::Length,
                None,
                format!("{} steps, scheme formula gives {expected}", p.steps.len()),
            );
        }
    }

    let mut seen_cells = HashSet::new();
    for layout in &p.layout {
        for cell in layout.cells() {
            if !seen_cells.insert(cell) {
                push(
                    DiagnosticKind::Shape,
                    None,
                    format!("cell {cell} appears in two layout entries"),
                );
            }
        }
    }
    let in_layout = |c: CellAddr| p.locate(c).is_some();

    let mut latched: HashSet<&str> = HashSet::new();
    for (idx, step) in p.steps.iter().enumerate() {
        if step.arrays.len() != p.layout.len() {
            push(
                DiagnosticKind::Shape,
                Some(idx),
                format!(
                    "{} array drives for {} layout arrays",
                    step.arrays.len(),
                    p.layout.len()
                ),
            );
            continue;
        }
        let check_signal =
            |sig: &Signal, push: &mut dyn FnMut(DiagnosticKind, Option<usize>, String)| match sig {
                Signal::InputA(i) | Signal::InputB(i) | Signal::NotB(i) if *i >= p.n => push(
                    DiagnosticKind::Bounds,
                    Some(idx),
                    format!("signal {sig} indexes past operand width {}", p.n),
                ),
                Signal::Reg(name) if !latched.contains(name.as_str()) => push(
                    DiagnosticKind::Dominance,
                    Some(idx),
                    format!("register {name} used before any latch"),
                ),
                Signal::ReadForward(src) if !step.reads.contains(src) => push(
                    DiagnosticKind::ForwardLegality,
                    Some(idx),
                    format!("{sig} forwards a cell that is not read in this step"),
                ),
                _ => {}
            };
        for (layout, drive) in p.layout.iter().zip(&step.arrays) {
            if drive.bls.len() != layout.width {
                push(
                    DiagnosticKind::Shape,
                    Some(idx),
                    format!(
                        "A{}: {} bitline signals for width {}",
                        layout.array,
                        drive.bls.len(),
                        layout.width
                    ),
                );
            }
            check_signal(&drive.wl, &mut push);
            for sig in &drive.bls {
                check_signal(sig, &mut push);
            }
            if let Signal::ReadForward(src) = &drive.wl {
                push(
                    DiagnosticKind::ForwardLegality,
                    Some(idx),
                    format!("read-out of {src} forwarded onto a wordline"),
                );
            }
            for (k, sig) in drive.bls.iter().enumerate() {
                if let Signal::ReadForward(src) = sig {
                    if src.array == layout.array && src.wl == layout.wl {
                        push(
                            DiagnosticKind::ForwardLegality,
                            Some(idx),
                            format!("{src} forwarded onto its own wordline at bitline {k}"),
                        );
                    }
                }
            }
        }
        for cell in &step.reads {
            match p.locate(*cell) {
                None => push(
                    DiagnosticKind::Bounds,
                    Some(idx),
                    format!("read of {cell} outside the layout"),
                ),
                Some((a, k)) => {
                    let drive = &step.arrays[a];
                    if drive.wl != Signal::Const1 || drive.bls.get(k) != Some(&Signal::Const0) {
                        push(
                            DiagnosticKind::ReadDrive,
                            Some(idx),
                            format!("read of {cell} is not driven with wl='1', bl='0'"),
                        );
                    }
                }
            }
        }
        for latch in &step.latches {
            if !step.reads.contains(&latch.cell) {
                push(
                    DiagnosticKind::Latch,
                    Some(idx),
                    format!("latch {} from {} which is not read", latch.reg, latch.cell),
                );
            }
        }
        for latch in &step.latches {
            latched.insert(latch.reg.as_str());
        }
    }

    let touched = p.touched_cells().len();
    if touched != p.devices {
        push(
            DiagnosticKind::DeviceUsage,
            None,
            format!("program touches {touched} cells but declares {}", p.devices),
        );
    }
    if let Some(expected) = p.scheme.devices(p.n) {
        if p.devices != expected {
            push(
                DiagnosticKind::DeviceUsage,
                None,
                format!(
                    "declares {} devices, scheme formula gives {expected}",
                    p.devices
                ),
            );
        }
    }
    if p.result.len() != p.n + 1 {
        push(
            DiagnosticKind::Result,
            None,
            format!("{} result cells for an {}-bit sum", p.result.len(), p.n + 1),
        );
    }
    let distinct: HashSet<_> = p.result.iter().collect();
    if distinct.len() != p.result.len() {
        push(
            DiagnosticKind::Result,
            None,
            "result cells are not pairwise distinct".into(),
        );
    }
    for cell in &p.result {
        if !in_layout(*cell) {
            push(
                DiagnosticKind::Bounds,
                None,
                format!("result cell {cell} outside the layout"),
            );
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(s: &str) -> Signal {
        s.parse().unwrap()
    }

    #[test]
    fn signal_tags_round_trip() {
        for tag in [
            "const0",
            "const1",
            "ground",
            "a:1",
            "b:0",
            "not_b:0",
            "carry_in",
            "read_fwd:A1/0/2",
            "reg:c1",
        ] {
            assert_eq!(sig(tag).to_string(), tag);
        }
        assert!("reg:".parse::<Signal>().is_err());
        assert!("read_fwd:A1/0".parse::<Signal>().is_err());
        assert!("x:1".parse::<Signal>().is_err());
    }

    #[test]
    fn pc_two_bit_listing() {
        let p = gen_pc_adder(2, false).unwrap();
        assert_eq!(p.len(), 8);
        // Step 3: wl=a0; calc bls (bl0..bl2) = b0, ~b0, ~b0; aux all ~b0.
        let s3 = &p.steps[2];
        assert_eq!(s3.arrays[0].wl, sig("a:0"));
        assert_eq!(
            s3.arrays[0].bls,
            vec![sig("b:0"), sig("not_b:0"), sig("not_b:0")]
        );
        assert_eq!(s3.arrays[1].bls, vec![sig("not_b:0"); 3]);
        // Step 4.
        let s4 = &p.steps[3];
        assert_eq!(s4.arrays[0].wl, sig("a:1"));
        assert_eq!(
            s4.arrays[0].bls,
            vec![sig("ground"), sig("b:1"), sig("not_b:1")]
        );
        assert_eq!(
            s4.arrays[1].bls,
            vec![sig("ground"), sig("not_b:1"), sig("not_b:1")]
        );
        // Step 5: doubled MSB.
        let s5 = &p.steps[4];
        assert_eq!(s5.arrays[0].wl, sig("a:1"));
        assert_eq!(
            s5.arrays[0].bls,
            vec![sig("ground"), sig("ground"), sig("b:1")]
        );
        assert_eq!(
            s5.arrays[1].bls,
            vec![sig("ground"), sig("ground"), sig("not_b:1")]
        );
        // Step 8: read c3 from aux bl2 into calc bl2 with wl=b1.
        let s8 = &p.steps[7];
        assert_eq!(s8.arrays[0].wl, sig("b:1"));
        assert_eq!(
            s8.arrays[0].bls,
            vec![sig("ground"), sig("ground"), sig("read_fwd:A1/0/2")]
        );
        assert_eq!(s8.arrays[1].wl, sig("const1"));
        assert_eq!(
            s8.arrays[1].bls,
            vec![sig("ground"), sig("ground"), sig("const0")]
        );
        assert_eq!(s8.reads, vec![CellAddr::new(1, 0, 2)]);
        assert!(validate_program(&p).is_empty());
    }

    #[test]
    fn tc_two_bit_listing() {
        let p = gen_tc_adder(2, false).unwrap();
        assert_eq!(p.len(), 13);
        // Step 3: bls (bl0..bl3) = ~b0 (TC), b0, ~b0, ~b0.
        assert_eq!(
            p.steps[2].arrays[0].bls,
            vec![sig("not_b:0"), sig("b:0"), sig("not_b:0"), sig("not_b:0")]
        );
        // Step 4 reads only the TC and latches c1.
        assert_eq!(p.steps[3].reads, vec![CellAddr::new(0, 0, 0)]);
        assert_eq!(p.steps[3].latches[0].reg, "c1");
        // Step 5: wl=b0, bl1=c1.
        assert_eq!(p.steps[4].arrays[0].wl, sig("b:0"));
        assert_eq!(
            p.steps[4].arrays[0].bls,
            vec![sig("ground"), sig("reg:c1"), sig("ground"), sig("ground")]
        );
        // Step 6 writes c1 back.
        assert_eq!(p.steps[5].arrays[0].wl, sig("reg:c1"));
        assert_eq!(
            p.steps[5].arrays[0].bls,
            vec![sig("const1"), sig("ground"), sig("ground"), sig("ground")]
        );
        // Step 11: wl=a1, bl3=b1, TC=~b1.
        assert_eq!(
            p.steps[10].arrays[0].bls,
            vec![sig("not_b:1"), sig("ground"), sig("ground"), sig("b:1")]
        );
        // Step 13 has no writeback after it.
        assert_eq!(p.steps[12].annotation, Annotation::Sum2);
        assert_eq!(p.steps[12].arrays[0].bls[3], sig("reg:c3"));
        assert!(validate_program(&p).is_empty());
    }

    #[test]
    fn subtraction_swaps_b_and_forces_carry() {
        let p = gen_tc_adder(2, true).unwrap();
        assert_eq!(p.steps[1].arrays[0].wl, Signal::Const1);
        assert_eq!(p.steps[2].arrays[0].bls[1], sig("not_b:0"));
        assert_eq!(p.steps[2].arrays[0].bls[0], sig("b:0"));
        assert_eq!(p.steps[4].arrays[0].wl, sig("not_b:0"));
    }

    #[test]
    fn rejects_zero_width() {
        assert!(gen_pc_adder(0, false).is_err());
        assert!(gen_tc_adder(0, false).is_err());
    }

    #[test]
    fn small_formulas() {
        assert_eq!(gen_pc_adder(1, false).unwrap().len(), 6);
        assert_eq!(gen_tc_adder(1, false).unwrap().len(), 9);
        let pc8 = gen_pc_adder(8, false).unwrap();
        assert_eq!((pc8.len(), pc8.touched_cells().len()), (20, 18));
        let tc8 = gen_tc_adder(8, false).unwrap();
        assert_eq!((tc8.len(), tc8.touched_cells().len()), (37, 10));
    }

    #[test]
    fn comparison_rows() {
        let rows = comparison_table(2);
        assert_eq!(rows[0].cycles, 224);
        assert_eq!(rows[3].cycles, 8);
        assert_eq!(rows[4].cycles, 13);
        let rows = comparison_table(1);
        assert_eq!((rows[3].devices, rows[4].devices), (4, 3));
        for n in 1..=64 {
            let (best_devices, _) = best_rows(&comparison_table(n));
            assert_eq!(best_devices, vec![4], "n={n}");
        }
    }

    #[test]
    fn detects_register_before_latch() {
        let mut p = gen_tc_adder(2, false).unwrap();
        p.steps[3].latches.clear();
        let diags = validate_program(&p);
        assert!(diags
            .iter()
            .any(|d| d.kind == DiagnosticKind::Dominance && d.step == Some(4)));
    }

    #[test]
    fn detects_length_mismatch() {
        let mut p = gen_pc_adder(4, false).unwrap();
        assert!(validate_program(&p).is_empty());
        p.steps.pop();
        let diags = validate_program(&p);
        assert!(diags.iter().any(|d| d.kind == DiagnosticKind::Length));
    }

    #[test]
    fn detects_forward_without_read() {
        let mut p = gen_pc_adder(2, false).unwrap();
        p.steps[5].reads.clear();
        assert!(validate_program(&p)
            .iter()
            .any(|d| d.kind == DiagnosticKind::ForwardLegality));
    }

    #[test]
    fn json_shape() {
        let p = gen_pc_adder(1, false).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(v["scheme"], "pc");
        assert_eq!(v["n"], 1);
        assert_eq!(v["steps"][0]["annotation"], "init_read");
        assert_eq!(v["steps"][5]["arrays"][0]["bls"][1], "read_fwd:A1/0/1");
        assert_eq!(v["steps"][5]["reads"][0], "A1/0/1");
        assert_eq!(Program::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
