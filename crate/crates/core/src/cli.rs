// SPDX-License-Identifier: Apache-2.0
//! `crsim` command-line front end.
//!
//! Exit codes: 0 success, 1 result mismatch, 2 usage error, 3 solver or
//! calibration failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::crs::{self, CrsDeviceState, DEFAULT_CRS_AMPLITUDE, DEFAULT_THRESHOLD_FRACTION};
use crate::ecm::{self, EcmParams, EcmState, DEFAULT_SWEEP_RATE, DEFAULT_SWEEP_SAMPLES};
use crate::error::{Error, Result};
use crate::exec::{self, Calibration, ExecOptions, Initial, Level, Operands, PulseParams};
use crate::microcode::{self, Scheme};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

/// Default half-select margin used by `calibrate` and device-level runs.
pub const DEFAULT_MARGIN: f64 = 100.0;

#[derive(Debug, Parser)]
#[command(
    name = "crsim",
    version,
    about = "CRS in-memory adder compiler and crossbar simulator"
)]
pub struct Cli {
    /// ECM parameter file (key=value lines); defaults are used when omitted.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    /// Output directory for generated files.
    #[arg(long, global = true, default_value = "crsim-out")]
    pub out: PathBuf,
    /// Format of the report printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Md)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Md,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeviceKind {
    Unit,
    Crs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Pc,
    Tc,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Pc => Scheme::Pc,
            SchemeArg::Tc => Scheme::Tc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Behavioral,
    Device,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Triangular I-V sweep of a unit cell or CRS cell.
    Sweep(SweepArgs),
    /// Compile and run an N-bit adder.
    Adder(AdderArgs),
    /// Search pulse amplitude and width for half-select operation.
    Calibrate(CalibrateArgs),
    /// Write a generated program as JSON plus a step table.
    Emit(EmitArgs),
    /// Device and cycle counts of the compared adders.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = DeviceKind::Unit)]
    pub device: DeviceKind,
    /// Peak voltage (V); 1.5 for unit cells, 2.0 for CRS cells by default.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Ramp rate (V/s).
    #[arg(long, default_value_t = DEFAULT_SWEEP_RATE)]
    pub rate: f64,
    #[arg(long, default_value_t = DEFAULT_SWEEP_SAMPLES)]
    pub samples: usize,
    /// Fraction of the branch peak current that defines a landmark.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_FRACTION)]
    pub fraction: f64,
}

#[derive(Debug, Args)]
pub struct AdderArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// First operand, MSB first.
    #[arg(long)]
    pub a: String,
    /// Second operand, MSB first.
    #[arg(long)]
    pub b: String,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub c0: u8,
    #[arg(long, value_enum, default_value_t = LevelArg::Behavioral)]
    pub level: LevelArg,
    /// Compute a - b instead of a + b (carry-in is forced to 1).
    #[arg(long)]
    pub subtract: bool,
    /// Seed for random initial cell states; all cells start at '0' without it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    #[command(flatten)]
    pub pulse: PulseOverrides,
}

#[derive(Debug, Args, Default)]
pub struct PulseOverrides {
    /// Override the calibrated write amplitude (V).
    #[arg(long)]
    pub v_w: Option<f64>,
    /// Override the calibrated pulse width (s).
    #[arg(long)]
    pub t_pulse: Option<f64>,
    /// Override the inter-step settle time (s).
    #[arg(long)]
    pub t_gap: Option<f64>,
    /// Override the spike threshold (A).
    #[arg(long)]
    pub i_spike: Option<f64>,
    #[arg(long)]
    pub samples_per_pulse: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Ignore any cached calibration.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub subtract: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Smallest operand width.
    #[arg(long, default_value_t = 1)]
    pub n_min: u64,
    /// Largest operand width.
    #[arg(long, default_value_t = 16)]
    pub n_max: u64,
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::ParamFile { .. } | Error::Domain(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let params = load_params(cli.params.as_deref())?;
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Sweep(args) => cmd_sweep(cli, &params, args),
        Command::Adder(args) => cmd_adder(cli, &params, args),
        Command::Calibrate(args) => cmd_calibrate(cli, &params, args),
        Command::Emit(args) => cmd_emit(cli, args),
        Command::Compare(args) => cmd_compare(cli, args),
    }
}

pub fn load_params(path: Option<&Path>) -> Result<EcmParams> {
    let params = match path {
        None => EcmParams::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Argument(format!(
                    "cannot read parameter file {}: {e}",
                    path.display()
                ))
            })?;
            text.parse()?
        }
    };
    params.validate()?;
    Ok(params)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Landmark voltages of a sweep; fields that do not apply stay null.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Landmarks {
    pub v_set: Option<f64>,
    pub v_reset: Option<f64>,
    pub v_th1: Option<f64>,
    pub v_th2: Option<f64>,
    pub v_th3: Option<f64>,
    pub v_th4: Option<f64>,
}

pub fn cmd_sweep(cli: &Cli, params: &EcmParams, args: &SweepArgs) -> Result<i32> {
    let landmarks = match args.device {
        DeviceKind::Unit => {
            let amplitude = args.amplitude.unwrap_or(1.5);
            let samples = ecm::sweep_iv_unit(
                amplitude,
                args.rate,
                EcmState::hrs(params),
                params,
                args.samples,
            )?;
            write(&cli.out, "sweep_unit.csv", &ecm::unit_sweep_csv(&samples))?;
            let lm = ecm::unit_landmarks(&samples, params, args.fraction);
            Landmarks {
                v_set: lm.v_set,
                v_reset: lm.v_reset,
                ..Default::default()
            }
        }
        DeviceKind::Crs => {
            let amplitude = args.amplitude.unwrap_or(DEFAULT_CRS_AMPLITUDE);
            let samples = crs::sweep_crs_samples(
                amplitude,
                args.rate,
                &CrsDeviceState::zero(params),
                params,
                args.samples,
            )?;
            write(&cli.out, "sweep_crs.csv", &crs::crs_sweep_csv(&samples))?;
            let th = crs::extract_thresholds(&samples, args.fraction)?;
            Landmarks {
                v_th1: Some(th.v_th1),
                v_th2: Some(th.v_th2),
                v_th3: Some(th.v_th3),
                v_th4: Some(th.v_th4),
                ..Default::default()
            }
        }
    };
    let name = match args.device {
        DeviceKind::Unit => "landmarks_unit.json",
        DeviceKind::Crs => "landmarks_crs.json",
    };
    let json = serde_json::to_string_pretty(&landmarks)?;
    write(&cli.out, name, &json)?;
    println!("{json}");
    Ok(EXIT_OK)
}

/// Cache key of a calibration: hash of the canonical parameter text and
/// the margin.
pub fn calibration_key(params: &EcmParams, margin: f64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(params.to_param_file().as_bytes());
    hasher.update(format!("margin={margin:.17e}").as_bytes());
    let digest = format!("{:x}", hasher.finalize());
    digest[..16].to_string()
}

/// Calibrate, reusing `<out>/calibration-<key>.json` when present.
pub fn cached_calibration(
    out: &Path,
    params: &EcmParams,
    margin: f64,
    force: bool,
) -> Result<(Calibration, bool)> {
    let path = out.join(format!(
        "calibration-{}.json",
        calibration_key(params, margin)
    ));
    if !force {
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(cal) = serde_json::from_str::<Calibration>(&text) {
                return Ok((cal, true));
            }
        }
    }
    let cal = exec::calibrate_pulse(params, margin)?;
    fs::write(&path, serde_json::to_string_pretty(&cal)?)?;
    Ok((cal, false))
}

pub fn cmd_calibrate(cli: &Cli, params: &EcmParams, args: &CalibrateArgs) -> Result<i32> {
    let (cal, cached) = cached_calibration(&cli.out, params, args.margin, args.force)?;
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&cal)?),
        Format::Csv => {
            println!("v_w,t_pulse,t_gap,samples_per_pulse,i_spike");
            let p = &cal.pulse;
            println!(
                "{:.16e},{:.16e},{:.16e},{},{:.16e}",
                p.v_w, p.t_pulse, p.t_gap, p.samples_per_pulse, p.i_spike
            );
        }
        Format::Md => print!("{}", calibration_markdown(&cal, cached)),
    }
    Ok(EXIT_OK)
}

fn calibration_markdown(cal: &Calibration, cached: bool) -> String {
    let (p, r) = (&cal.pulse, &cal.report);
    let mut out = String::new();
    let _ = writeln!(out, "| quantity | value |\n|---|---|");
    let _ = writeln!(out, "| V_w | {:.4} V |", p.v_w);
    let _ = writeln!(out, "| t_pulse | {:.3e} s |", p.t_pulse);
    let _ = writeln!(out, "| t_gap | {:.3e} s |", p.t_gap);
    let _ = writeln!(out, "| I_spike | {:.3e} A |", p.i_spike);
    let _ = writeln!(
        out,
        "| full-select switch time | {:.3e} s |",
        r.t_switch_full
    );
    let _ = writeln!(
        out,
        "| half-select drift | {:.3e} m (limit {:.3e} m) |",
        r.half_select_drift, r.drift_limit
    );
    let _ = writeln!(
        out,
        "| read peaks (spike / no spike) | {:.3e} A / {:.3e} A |",
        r.spike_peak, r.no_spike_peak
    );
    let _ = writeln!(out, "| cached | {cached} |");
    out
}

fn apply_overrides(mut pp: PulseParams, o: &PulseOverrides) -> PulseParams {
    pp.v_w = o.v_w.unwrap_or(pp.v_w);
    pp.t_pulse = o.t_pulse.unwrap_or(pp.t_pulse);
    pp.t_gap = o.t_gap.unwrap_or(pp.t_gap);
    pp.i_spike = o.i_spike.unwrap_or(pp.i_spike);
    pp.samples_per_pulse = o.samples_per_pulse.unwrap_or(pp.samples_per_pulse);
    pp
}

pub fn cmd_adder(cli: &Cli, params: &EcmParams, args: &AdderArgs) -> Result<i32> {
    let ops = Operands::parse(&args.a, &args.b, args.c0 == 1)?;
    let scheme = Scheme::from(args.scheme);
    let program = microcode::gen_adder(scheme, ops.width(), args.subtract)?;
    let opts = ExecOptions {
        initial: args.seed.map_or(Initial::AllZero, Initial::Seeded),
        capture_waveform: true,
    };
    let level = match args.level {
        LevelArg::Behavioral => Level::Behavioral,
        LevelArg::Device => Level::Device,
    };
    let trace = match level {
        Level::Behavioral => exec::run_behavioral_with(&program, &ops, &opts)?,
        Level::Device => {
            let (cal, _) = cached_calibration(&cli.out, params, args.margin, false)?;
            let pp = apply_overrides(cal.pulse, &args.pulse);
            exec::run_device_with(&program, &ops, &pp, params, &opts)?
        }
    };
    let stem = format!("adder_{scheme}_{level}");
    write(
        &cli.out,
        &format!("{stem}_states.csv"),
        &trace.state_matrix_csv(),
    )?;
    write(
        &cli.out,
        &format!("{stem}_verdicts.json"),
        &trace.verdicts_json()?,
    )?;
    if let Some(w) = &trace.waveform {
        write(&cli.out, &format!("{stem}_trace.csv"), &w.to_csv())?;
    }
    let expected = exec::expected_sum(&ops, args.subtract);
    let ok = trace.result == expected;
    match cli.format {
        Format::Json => {
            let report = serde_json::json!({
                "s": trace.result_string(),
                "expected": exec::format_bits(&expected),
                "match": ok,
                "verdicts": trace.verdicts,
                "violations": trace.violations,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        _ => {
            println!("s={}", trace.result_string());
            if !ok {
                eprintln!("mismatch: expected s={}", exec::format_bits(&expected));
            }
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_MISMATCH })
}

pub fn cmd_emit(cli: &Cli, args: &EmitArgs) -> Result<i32> {
    let scheme = Scheme::from(args.scheme);
    let program = microcode::gen_adder(scheme, args.n, args.subtract)?;
    let diags = microcode::validate_program(&program);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("{:?} (step {:?}): {}", d.kind, d.step, d.message);
        }
        return Err(Error::Execution {
            step: 0,
            message: "generated program failed validation".into(),
        });
    }
    let json = program.to_json()?;
    let table = program.step_table();
    let stem = format!("program_{scheme}_{}", args.n);
    write(&cli.out, &format!("{stem}.json"), &json)?;
    write(&cli.out, &format!("{stem}.txt"), &table)?;
    match cli.format {
        Format::Json => println!("{json}"),
        _ => print!("{table}"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_compare(cli: &Cli, args: &CompareArgs) -> Result<i32> {
    if args.n_min < 1 || args.n_min > args.n_max {
        return Err(Error::Argument(format!(
            "invalid width range {}..={}",
            args.n_min, args.n_max
        )));
    }
    let md = compare_markdown(args.n_min, args.n_max);
    let csv = compare_csv(args.n_min, args.n_max);
    write(&cli.out, "compare.md", &md)?;
    write(&cli.out, "compare.csv", &csv)?;
    match cli.format {
        Format::Csv => print!("{csv}"),
        Format::Json => {
            let all: Vec<_> = (args.n_min..=args.n_max)
                .map(|n| serde_json::json!({ "n": n, "rows": microcode::comparison_table(n) }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&all)?);
        }
        Format::Md => print!("{md}"),
    }
    Ok(EXIT_OK)
}

pub fn compare_csv(n_min: u64, n_max: u64) -> String {
    let mut out =
        String::from("n,scheme,devices,cycles,common_crossbar,best_devices,best_cycles\n");
    for n in n_min..=n_max {
        let rows = microcode::comparison_table(n);
        let (bd, bc) = microcode::best_rows(&rows);
        for (i, r) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{n},{},{},{},{},{},{}",
                r.scheme,
                r.devices,
                r.cycles,
                r.common_crossbar,
                bd.contains(&i),
                bc.contains(&i)
            );
        }
    }
    out
}

/// One table per width; best values in bold.
pub fn compare_markdown(n_min: u64, n_max: u64) -> String {
    let mut out = String::new();
    for n in n_min..=n_max {
        let rows = microcode::comparison_table(n);
        let (bd, bc) = microcode::best_rows(&rows);
        let bold = |v: u64, best: bool| {
            if best {
                format!("**{v}**")
            } else {
                v.to_string()
            }
        };
        let _ = writeln!(out, "### N = {n}\n");
        let _ = writeln!(
            out,
            "| scheme | devices | cycles | common crossbar |\n|---|---|---|---|"
        );
        for (i, r) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.scheme,
                bold(r.devices, bd.contains(&i)),
                bold(r.cycles, bc.contains(&i)),
                if r.common_crossbar { "Yes" } else { "No" }
            );
        }
        out.push('\n');
    }
    out
}
