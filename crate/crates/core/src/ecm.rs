// SPDX-License-Identifier: Apache-2.0
//! Compact model of a single electrochemical metallization (ECM) cell.
//!
//! The equivalent circuit has two parallel branches between the active
//! electrode and the filament tip: an ionic branch (anodic interface
//! overpotential, ohmic ion drift through the remaining gap, cathodic interface
//! overpotential) and an electronic branch (tunneling across the gap). That
//! block sits in series with the filament and electrode resistances.
//!
//! Units are SI throughout, except for the metal mass density (g m^-3) and the
//! molecular mass (g), which only appear as a ratio.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{self, Bounds, TransientOptions};

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant (J K^-1).
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmParams {
    /// Series electrode resistance (Ohm).
    pub r_el: f64,
    /// Switching layer thickness (m).
    pub l: f64,
    /// Mass density of the deposited metal (g m^-3).
    pub rho_m: f64,
    /// Filament cross-section (m^2).
    pub a_fil: f64,
    /// Molecular mass (g).
    pub m_me: f64,
    /// Filament / active electrode conductivity (S m^-1).
    pub sigma_fil: f64,
    /// Ionic conductivity of the switching layer (S m^-1).
    pub sigma_ion: f64,
    /// Tunneling barrier height (J).
    pub dw0: f64,
    /// Effective electron tunneling mass (kg).
    pub m_eff: f64,
    /// Temperature (K).
    pub t: f64,
    /// Charge transfer coefficient.
    pub alpha: f64,
    /// Cation charge number.
    pub z: f64,
    /// Exchange current density (A m^-2).
    pub j0: f64,
    /// Lower clamp of the tunneling gap (m).
    pub x_min: f64,
    pub e: f64,
    pub h: f64,
    pub k_b: f64,
}

impl Default for EcmParams {
    fn default() -> Self {
        Self {
            r_el: 70e-3,
            l: 20e-9,
            rho_m: 8.95e6,
            a_fil: 135.87e-18,
            m_me: 1.06e-22,
            sigma_fil: 5e7,
            sigma_ion: 1e2,
            dw0: 3.6 * ELEMENTARY_CHARGE,
            m_eff: 0.86 * 9.1e-31,
            t: 300.0,
            alpha: 0.5,
            z: 1.0,
            j0: 0.01,
            x_min: 0.1e-9,
            e: ELEMENTARY_CHARGE,
            h: PLANCK,
            k_b: BOLTZMANN,
        }
    }
}

/// Keys accepted in parameter files, in canonical output order.
pub const PARAM_KEYS: [&str; 14] = [
    "r_el",
    "l",
    "rho_m",
    "a_fil",
    "m_me",
    "sigma_fil",
    "sigma_ion",
    "dw0",
    "m_eff",
    "t",
    "alpha",
    "z",
    "j0",
    "x_min",
];

impl EcmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_el", self.r_el),
            ("l", self.l),
            ("rho_m", self.rho_m),
            ("a_fil", self.a_fil),
            ("m_me", self.m_me),
            ("sigma_fil", self.sigma_fil),
            ("sigma_ion", self.sigma_ion),
            ("dw0", self.dw0),
            ("m_eff", self.m_eff),
            ("t", self.t),
            ("z", self.z),
            ("j0", self.j0),
            ("x_min", self.x_min),
            ("e", self.e),
            ("h", self.h),
            ("k_b", self.k_b),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Domain(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.x_min >= self.l {
            return Err(Error::Domain(format!(
                "x_min ({}) must be below l ({})",
                self.x_min, self.l
            )));
        }
        Ok(())
    }

    /// Mutable access to the parameter named `key` (one of [`PARAM_KEYS`]).
    pub fn field_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "r_el" => &mut self.r_el,
            "l" => &mut self.l,
            "rho_m" => &mut self.rho_m,
            "a_fil" => &mut self.a_fil,
            "m_me" => &mut self.m_me,
            "sigma_fil" => &mut self.sigma_fil,
            "sigma_ion" => &mut self.sigma_ion,
            "dw0" => &mut self.dw0,
            "m_eff" => &mut self.m_eff,
            "t" => &mut self.t,
            "alpha" => &mut self.alpha,
            "z" => &mut self.z,
            "j0" => &mut self.j0,
            "x_min" => &mut self.x_min,
            _ => return None,
        })
    }

    pub fn field(&self, key: &str) -> Option<f64> {
        let mut copy = *self;
        copy.field_mut(key).map(|v| *v)
    }

    /// Render as a `key=value` parameter file.
    pub fn to_param_file(&self) -> String {
        let mut out = String::new();
        for key in PARAM_KEYS {
            let _ = writeln!(out, "{key}={:.17e}", self.field(key).unwrap_or(f64::NAN));
        }
        out
    }

    /// `z e / (k_B T)` in V^-1.
    pub fn thermal_factor(&self) -> f64 {
        self.z * self.e / (self.k_b * self.t)
    }

    /// `j0 * A_fil` (A).
    pub fn exchange_current(&self) -> f64 {
        self.j0 * self.a_fil
    }

    /// Ionic drift resistance through a gap `x`.
    pub fn ionic_resistance(&self, x: f64) -> f64 {
        x / (self.sigma_ion * self.a_fil)
    }

    /// Ohmic filament resistance for a gap `x`.
    pub fn filament_resistance(&self, x: f64) -> f64 {
        (self.l - x) / (self.sigma_fil * self.a_fil)
    }

    /// Midpoint of the gap range, used to classify LRS / HRS.
    pub fn gap_midpoint(&self) -> f64 {
        0.5 * (self.x_min + self.l)
    }
}

/// Parses a plain-text `key=value` file. Blank lines and `#` comments are
/// ignored; keys not present keep their default value.
impl FromStr for EcmParams {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut params = EcmParams::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ParamFile {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let key = key.trim().to_ascii_lowercase();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid number {:?}", value.trim())))?;
            let slot = params
                .field_mut(&key)
                .ok_or_else(|| err(format!("unknown key {key:?}")))?;
            *slot = value;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmState {
    /// Tunneling gap between filament tip and counter electrode (m).
    pub x: f64,
}

impl EcmState {
    pub fn new(x: f64, p: &EcmParams) -> Self {
        Self {
            x: x.clamp(p.x_min, p.l),
        }
    }

    /// Fully SET device (gap at its lower clamp).
    pub fn lrs(p: &EcmParams) -> Self {
        Self { x: p.x_min }
    }

    /// Fully RESET device (no filament).
    pub fn hrs(p: &EcmParams) -> Self {
        Self { x: p.l }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
    Zero,
}

impl Polarity {
    pub fn of(v: f64) -> Self {
        if v > 0.0 {
            Polarity::Positive
        } else if v < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Zero
        }
    }
}

/// Tafel current across the active electrode / insulator interface.
pub fn ionic_current(eta: f64, polarity: Polarity, p: &EcmParams) -> Result<f64> {
    if !eta.is_finite() {
        return Err(Error::Domain(format!(
            "overpotential must be finite, got {eta}"
        )));
    }
    let k = p.thermal_factor();
    Ok(match polarity {
        Polarity::Positive => p.exchange_current() * ((1.0 - p.alpha) * k * eta).exp_m1(),
        Polarity::Negative => -p.exchange_current() * (-p.alpha * k * eta).exp_m1(),
        Polarity::Zero => 0.0,
    })
}

fn ionic_slope(eta: f64, polarity: Polarity, p: &EcmParams) -> f64 {
    let k = p.thermal_factor();
    match polarity {
        Polarity::Positive => {
            p.exchange_current() * (1.0 - p.alpha) * k * ((1.0 - p.alpha) * k * eta).exp()
        }
        Polarity::Negative => p.exchange_current() * p.alpha * k * (-p.alpha * k * eta).exp(),
        Polarity::Zero => 0.0,
    }
}

/// Current across the insulator / filament interface. Same Tafel law with the
/// polarity roles of the transfer coefficients exchanged.
pub fn counter_interface_current(eta: f64, polarity: Polarity, p: &EcmParams) -> f64 {
    let k = p.thermal_factor();
    match polarity {
        Polarity::Positive => p.exchange_current() * (p.alpha * k * eta).exp_m1(),
        Polarity::Negative => -p.exchange_current() * (-(1.0 - p.alpha) * k * eta).exp_m1(),
        Polarity::Zero => 0.0,
    }
}

/// Inverse of [`counter_interface_current`]: overpotential and d(eta)/dI.
fn counter_interface_overpotential(i: f64, polarity: Polarity, p: &EcmParams) -> (f64, f64) {
    let k = p.thermal_factor();
    let i0 = p.exchange_current();
    match polarity {
        Polarity::Positive => (
            (i / i0).ln_1p() / (p.alpha * k),
            1.0 / (p.alpha * k * (i0 + i)),
        ),
        Polarity::Negative => (
            -(-i / i0).ln_1p() / ((1.0 - p.alpha) * k),
            1.0 / ((1.0 - p.alpha) * k * (i0 - i)),
        ),
        Polarity::Zero => (0.0, 0.0),
    }
}

/// Tunneling conductance `I_Tu / V_Tu` for a gap `x`.
pub fn tunnel_conductance(x: f64, p: &EcmParams) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("tunneling gap must be > 0, got {x}")));
    }
    let root = (2.0 * p.m_eff * p.dw0).sqrt();
    let prefactor = 3.0 * root / (2.0 * x) * (p.e / p.h).powi(2);
    let decay = (-4.0 * std::f64::consts::PI * x / p.h * root).exp();
    Ok(prefactor * decay * p.a_fil)
}

pub fn tunnel_current(x: f64, v_tu: f64, p: &EcmParams) -> Result<f64> {
    Ok(tunnel_conductance(x, p)? * v_tu)
}

/// Faraday's law: dx/dt for a given ionic current.
pub fn state_derivative(i_ion: f64, p: &EcmParams) -> f64 {
    -p.m_me / (p.z * p.e * p.a_fil * p.rho_m) * i_ion
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellSolution {
    pub v_cell: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub v_tu: f64,
    pub i_ion: f64,
    pub i_tu: f64,
    pub i_total: f64,
    pub r_ion: f64,
    pub r_fil: f64,
    /// Small-signal conductance dI_total/dV_cell at this operating point.
    pub conductance: f64,
    /// Voltage-loop residual of the accepted solution (V).
    pub kvl_residual: f64,
    /// Current balance at the filament tip (A).
    pub kcl_residual: f64,
    pub iterations: usize,
}

impl CellSolution {
    fn equilibrium(x: f64, p: &EcmParams) -> Result<Self> {
        Ok(Self {
            v_cell: 0.0,
            eta1: 0.0,
            eta2: 0.0,
            v_tu: 0.0,
            i_ion: 0.0,
            i_tu: 0.0,
            i_total: 0.0,
            r_ion: p.ionic_resistance(x),
            r_fil: p.filament_resistance(x),
            conductance: small_signal_conductance(x, p)?,
            kvl_residual: 0.0,
            kcl_residual: 0.0,
            iterations: 0,
        })
    }
}

/// Linearized conductance at V = 0.
fn small_signal_conductance(x: f64, p: &EcmParams) -> Result<f64> {
    let k = p.thermal_factor();
    let i0 = p.exchange_current();
    // Both interfaces linearize to a resistance 1 / (i0 k (1-alpha)) and 1 / (i0 k alpha).
    let r_ionic =
        1.0 / (i0 * k * (1.0 - p.alpha)) + p.ionic_resistance(x) + 1.0 / (i0 * k * p.alpha);
    let g_parallel = 1.0 / r_ionic + tunnel_conductance(x, p)?;
    Ok(1.0 / (1.0 / g_parallel + p.r_el + p.filament_resistance(x)))
}

/// Relative tolerance of the DC voltage-loop residual.
pub const DC_TOLERANCE: f64 = 1e-12;
const DC_MAX_ITERATIONS: usize = 400;

struct Branches {
    i_ion: f64,
    eta2: f64,
    v_tu: f64,
    i_tu: f64,
    i_total: f64,
    residual: f64,
    slope: f64,
    di_deta: f64,
}

/// Self-consistent DC operating point of the equivalent circuit.
///
/// Solved as a single equation in the anodic overpotential: every other node
/// quantity follows in closed form, and the voltage-loop residual is strictly
/// increasing in it, so a bracketed Newton iteration always converges.
pub fn solve_cell_dc(v_cell: f64, state: EcmState, p: &EcmParams) -> Result<CellSolution> {
    if !v_cell.is_finite() {
        return Err(Error::Domain(format!(
            "cell voltage must be finite, got {v_cell}"
        )));
    }
    let x = state.x;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("tunneling gap must be > 0, got {x}")));
    }
    if v_cell == 0.0 {
        return CellSolution::equilibrium(x, p);
    }
    let polarity = Polarity::of(v_cell);
    let r_ion = p.ionic_resistance(x);
    let r_fil = p.filament_resistance(x);
    let r_series = p.r_el + r_fil;
    let g_tu = tunnel_conductance(x, p)?;

    let eval = |eta1: f64| -> Branches {
        let i_ion = ionic_current(eta1, polarity, p).unwrap_or(f64::NAN);
        let di_deta = ionic_slope(eta1, polarity, p);
        let (eta2, deta2_di) = counter_interface_overpotential(i_ion, polarity, p);
        let v_tu = eta1 + i_ion * r_ion + eta2;
        let dv_tu = 1.0 + di_deta * (r_ion + deta2_di);
        let i_tu = g_tu * v_tu;
        let i_total = i_ion + i_tu;
        let residual = v_tu + i_total * r_series - v_cell;
        let slope = dv_tu + r_series * (di_deta + g_tu * dv_tu);
        Branches {
            i_ion,
            eta2,
            v_tu,
            i_tu,
            i_total,
            residual,
            slope,
            di_deta: di_deta + g_tu * dv_tu,
        }
    };

    let (mut lo, mut hi) = if v_cell > 0.0 {
        (0.0, v_cell)
    } else {
        (v_cell, 0.0)
    };
    let tol = DC_TOLERANCE * v_cell.abs();
    let mut eta = 0.5 * v_cell;
    let mut last_residual = f64::INFINITY;
    for iteration in 1..=DC_MAX_ITERATIONS {
        let b = eval(eta);
        let residual = if b.residual.is_finite() {
            b.residual
        } else {
            f64::INFINITY
        };
        last_residual = residual;
        if residual.abs() <= tol {
            return Ok(CellSolution {
                v_cell,
                eta1: eta,
                eta2: b.eta2,
                v_tu: b.v_tu,
                i_ion: b.i_ion,
                i_tu: b.i_tu,
                i_total: b.i_total,
                r_ion,
                r_fil,
                conductance: b.di_deta / b.slope,
                kvl_residual: residual,
                kcl_residual: b.i_total - (b.i_ion + b.i_tu),
                iterations: iteration,
            });
        }
        if residual < 0.0 {
            lo = eta;
        } else {
            hi = eta;
        }
        let newton = eta - residual / b.slope;
        eta = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: DC_MAX_ITERATIONS,
        residual: last_residual,
    })
}

/// Gap derivative at a given cell voltage.
pub fn gap_rate(v_cell: f64, state: EcmState, p: &EcmParams) -> Result<f64> {
    if v_cell == 0.0 {
        return Ok(0.0);
    }
    Ok(state_derivative(solve_cell_dc(v_cell, state, p)?.i_ion, p))
}

fn gap_bounds(p: &EcmParams) -> Bounds {
    Bounds {
        lo: p.x_min,
        hi: p.l,
    }
}

/// Advance the gap by `dt` at constant `v_cell`.
pub fn step_transient(state: EcmState, v_cell: f64, dt: f64, p: &EcmParams) -> Result<EcmState> {
    step_transient_with(state, v_cell, dt, p, &TransientOptions::default())
}

pub fn step_transient_with(
    state: EcmState,
    v_cell: f64,
    dt: f64,
    p: &EcmParams,
    opts: &TransientOptions,
) -> Result<EcmState> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("dt must be > 0, got {dt}")));
    }
    if v_cell == 0.0 {
        return Ok(state);
    }
    let mut x = [state.x];
    integrate::advance(
        &mut x,
        0.0,
        dt,
        gap_bounds(p),
        opts,
        |_, x| Ok([gap_rate(v_cell, EcmState { x: x[0] }, p)?]),
        |_, _| Ok(()),
    )?;
    Ok(EcmState::new(x[0], p))
}

/// Time for the gap to cross `target` under a constant voltage, or `None` if
/// it does not within `t_max`.
pub fn time_to_gap(
    state: EcmState,
    v_cell: f64,
    target: f64,
    t_max: f64,
    p: &EcmParams,
    opts: &TransientOptions,
) -> Result<Option<f64>> {
    let start_below = state.x < target;
    let mut x = [state.x];
    let mut crossing = None;
    let mut prev = (0.0, state.x);
    integrate::advance(
        &mut x,
        0.0,
        t_max,
        gap_bounds(p),
        opts,
        |_, x| Ok([gap_rate(v_cell, EcmState { x: x[0] }, p)?]),
        |t, x| {
            if crossing.is_none() && (x[0] < target) != start_below {
                let (t0, x0) = prev;
                let frac = if x[0] != x0 {
                    (target - x0) / (x[0] - x0)
                } else {
                    1.0
                };
                crossing = Some(t0 + frac.clamp(0.0, 1.0) * (t - t0));
                return Err(Error::Extraction("crossing found".into()));
            }
            prev = (t, x[0]);
            Ok(())
        },
    )
    .or_else(|e| if crossing.is_some() { Ok(0) } else { Err(e) })?;
    Ok(crossing)
}

/// Triangular voltage sweep 0 -> +A -> -A -> 0 at a constant ramp rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleSweep {
    pub amplitude: f64,
    pub rate: f64,
}

impl TriangleSweep {
    pub fn duration(&self) -> f64 {
        4.0 * self.amplitude / self.rate
    }

    pub fn voltage(&self, t: f64) -> f64 {
        let quarter = self.amplitude / self.rate;
        let t = t.clamp(0.0, 4.0 * quarter);
        if t <= quarter {
            self.rate * t
        } else if t <= 3.0 * quarter {
            self.amplitude - self.rate * (t - quarter)
        } else {
            -self.amplitude + self.rate * (t - 3.0 * quarter)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Argument(format!(
                "sweep amplitude must be > 0, got {}",
                self.amplitude
            )));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Argument(format!(
                "sweep rate must be > 0, got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Default triangular sweep rate for unit and CRS I-V curves (V s^-1).
pub const DEFAULT_SWEEP_RATE: f64 = 1.0;
/// Default number of output samples per sweep.
pub const DEFAULT_SWEEP_SAMPLES: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IvSample {
    pub t: f64,
    pub v: f64,
    pub i: f64,
    pub x: f64,
}

/// Unit-cell I-V sweep. Output samples are uniform in time; the integrator
/// refines internally between them.
pub fn sweep_iv_unit(
    amplitude: f64,
    rate: f64,
    s0: EcmState,
    p: &EcmParams,
    samples: usize,
) -> Result<Vec<IvSample>> {
    let sweep = TriangleSweep { amplitude, rate };
    sweep.validate()?;
    let samples = samples.max(8);
    let total = sweep.duration();
    let opts = TransientOptions::default().with_max_dt(total / samples as f64);
    let mut x = [s0.x];
    let mut out = Vec::with_capacity(samples + 1);
    out.push(IvSample {
        t: 0.0,
        v: 0.0,
        i: 0.0,
        x: s0.x,
    });
    for k in 0..samples {
        let t0 = total * k as f64 / samples as f64;
        let t1 = total * (k + 1) as f64 / samples as f64;
        integrate::advance(
            &mut x,
            t0,
            t1,
            gap_bounds(p),
            &opts,
            |t, x| Ok([gap_rate(sweep.voltage(t), EcmState { x: x[0] }, p)?]),
            |_, _| Ok(()),
        )?;
        let v = sweep.voltage(t1);
        let sol = solve_cell_dc(v, EcmState { x: x[0] }, p)?;
        out.push(IvSample {
            t: t1,
            v,
            i: sol.i_total,
            x: x[0],
        });
    }
    Ok(out)
}

/// Write a unit-cell sweep as CSV (`v_volts,i_amps,x_meters`).
pub fn unit_sweep_csv(samples: &[IvSample]) -> String {
    let mut out = String::from("v_volts,i_amps,x_meters\n");
    for s in samples {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", s.v, s.i, s.x);
    }
    out
}

/// SET / RESET landmark voltages of a unit-cell sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitLandmarks {
    pub v_set: Option<f64>,
    pub v_reset: Option<f64>,
}

/// Extract SET and RESET voltages from a unit-cell sweep.
///
/// A transition is only reported when the gap crosses the LRS / HRS midpoint
/// on that branch. SET is the voltage where |I| first rises through
/// `fraction` of the positive-branch peak; RESET is where |I| peaks on the
/// negative branch before the current collapses.
pub fn unit_landmarks(samples: &[IvSample], p: &EcmParams, fraction: f64) -> UnitLandmarks {
    let mid = p.gap_midpoint();
    let positive: Vec<&IvSample> = samples.iter().filter(|s| s.v > 0.0).collect();
    let negative: Vec<&IvSample> = samples.iter().filter(|s| s.v < 0.0).collect();

    let set_happened = positive.windows(2).any(|w| w[0].x >= mid && w[1].x < mid);
    let v_set = if set_happened {
        let peak = positive.iter().map(|s| s.i.abs()).fold(0.0, f64::max);
        rising_crossing(&positive, fraction * peak)
    } else {
        None
    };

    let reset_happened = negative.windows(2).any(|w| w[0].x < mid && w[1].x >= mid);
    let v_reset = if reset_happened {
        negative
            .iter()
            .max_by(|a, b| a.i.abs().total_cmp(&b.i.abs()))
            .map(|s| s.v)
    } else {
        None
    };
    UnitLandmarks { v_set, v_reset }
}

/// Voltage where |I| first rises through `level`, interpolated.
pub(crate) fn rising_crossing(branch: &[&IvSample], level: f64) -> Option<f64> {
    branch.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.i.abs() < level && b.i.abs() >= level).then(|| interpolate(a, b, level))
    })
}

/// Voltage where |I| falls through `level` after the branch peak.
pub(crate) fn falling_crossing(branch: &[&IvSample], level: f64) -> Option<f64> {
    let peak_idx = branch
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.i.abs().total_cmp(&b.1.i.abs()))
        .map(|(i, _)| i)?;
    branch[peak_idx..].windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.i.abs() >= level && b.i.abs() < level).then(|| interpolate(a, b, level))
    })
}

fn interpolate(a: &IvSample, b: &IvSample, level: f64) -> f64 {
    let (ia, ib) = (a.i.abs(), b.i.abs());
    if ia == ib {
        return b.v;
    }
    a.v + (level - ia) / (ib - ia) * (b.v - a.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p() -> EcmParams {
        EcmParams::default()
    }

    #[test]
    fn defaults_are_valid() {
        p().validate().unwrap();
    }

    #[test]
    fn ionic_current_zero_overpotential() {
        for pol in [Polarity::Positive, Polarity::Negative, Polarity::Zero] {
            assert_eq!(ionic_current(0.0, pol, &p()).unwrap(), 0.0);
        }
    }

    #[test]
    fn ionic_current_rejects_nan() {
        assert!(matches!(
            ionic_current(f64::NAN, Polarity::Positive, &p()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn tunnel_rejects_nonpositive_gap() {
        assert!(tunnel_current(0.0, 0.1, &p()).is_err());
        assert!(tunnel_current(-1e-9, 0.1, &p()).is_err());
    }

    #[test]
    fn state_derivative_opposes_current() {
        assert_eq!(state_derivative(0.0, &p()), 0.0);
        assert!(state_derivative(1e-9, &p()) < 0.0);
        assert!(state_derivative(-1e-9, &p()) > 0.0);
    }

    #[test]
    fn zero_voltage_is_equilibrium() {
        let s = solve_cell_dc(0.0, EcmState::hrs(&p()), &p()).unwrap();
        assert_eq!(
            (s.i_total, s.i_ion, s.i_tu, s.eta1, s.eta2),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(
            step_transient(EcmState::hrs(&p()), 0.0, 1.0, &p()).unwrap(),
            EcmState::hrs(&p())
        );
    }

    #[test]
    fn dc_conductance_matches_finite_difference() {
        let params = p();
        for (v, x) in [(0.3, 1e-9), (-0.4, 0.3e-9), (1.2, 20e-9)] {
            let s = EcmState { x };
            let a = solve_cell_dc(v, s, &params).unwrap();
            let dv = 1e-6 * v.abs();
            let b = solve_cell_dc(v + dv, s, &params).unwrap();
            let fd = (b.i_total - a.i_total) / dv;
            assert_relative_eq!(a.conductance, fd, max_relative = 1e-3);
        }
    }

    #[test]
    fn parses_param_file() {
        let params: EcmParams = "# tuned\nr_el = 0.1\nX_MIN=2e-10\n\n".parse().unwrap();
        assert_eq!(params.r_el, 0.1);
        assert_eq!(params.x_min, 2e-10);
        assert_eq!(params.l, 20e-9);
        let round: EcmParams = params.to_param_file().parse().unwrap();
        assert_eq!(round, params);
    }

    #[test]
    fn rejects_bad_param_file() {
        assert!(matches!(
            "foo=1".parse::<EcmParams>(),
            Err(Error::ParamFile { line: 1, .. })
        ));
        assert!(matches!(
            "l=abc".parse::<EcmParams>(),
            Err(Error::ParamFile { .. })
        ));
        assert!(matches!(
            "alpha=1.5".parse::<EcmParams>(),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            "x_min=1e-7".parse::<EcmParams>(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn triangle_sweep_shape() {
        let s = TriangleSweep {
            amplitude: 1.5,
            rate: 1.0,
        };
        assert_eq!(s.duration(), 6.0);
        assert_eq!(s.voltage(0.0), 0.0);
        assert_eq!(s.voltage(1.5), 1.5);
        assert_eq!(s.voltage(4.5), -1.5);
        assert_eq!(s.voltage(6.0), 0.0);
    }
}
