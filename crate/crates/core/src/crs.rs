// SPDX-License-Identifier: Apache-2.0
//! Complementary resistive switch: two anti-serial ECM cells.
//!
//! The top device faces the wordline, the bottom device faces the bitline.
//! A positive wordline-to-bitline voltage SETs the bottom device and RESETs
//! the top one, i.e. writes logic '1'.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ecm::{self, CellSolution, EcmParams, EcmState, IvSample, TriangleSweep};
use crate::error::{Error, Result};
use crate::integrate::{self, Bounds, TransientOptions};

/// Next state of a CRS cell given its prior state and the wordline / bitline
/// logic levels: RIMP when holding '1', NIMP when holding '0'.
pub fn fsm_next(z_prev: bool, wl: bool, bl: bool) -> bool {
    let rimp = wl || !bl;
    let nimp = wl && !bl;
    (rimp && z_prev) || (nimp && !z_prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrsLogicState {
    /// LRS/HRS.
    Zero,
    /// HRS/LRS.
    One,
    /// LRS/LRS, only seen while switching.
    On,
}

impl CrsLogicState {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            CrsLogicState::One
        } else {
            CrsLogicState::Zero
        }
    }

    pub fn bit(self) -> Option<bool> {
        match self {
            CrsLogicState::Zero => Some(false),
            CrsLogicState::One => Some(true),
            CrsLogicState::On => None,
        }
    }
}

impl fmt::Display for CrsLogicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrsLogicState::Zero => "0",
            CrsLogicState::One => "1",
            CrsLogicState::On => "ON",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrsDeviceState {
    pub top: EcmState,
    pub bottom: EcmState,
}

impl CrsDeviceState {
    pub fn zero(p: &EcmParams) -> Self {
        Self {
            top: EcmState::lrs(p),
            bottom: EcmState::hrs(p),
        }
    }

    pub fn one(p: &EcmParams) -> Self {
        Self {
            top: EcmState::hrs(p),
            bottom: EcmState::lrs(p),
        }
    }

    pub fn from_bit(bit: bool, p: &EcmParams) -> Self {
        if bit {
            Self::one(p)
        } else {
            Self::zero(p)
        }
    }
}

/// Classify a device pair; a device is LRS iff its gap is below `gap_threshold`.
pub fn decode_state(s: &CrsDeviceState, gap_threshold: f64) -> Result<CrsLogicState> {
    let top_lrs = s.top.x < gap_threshold;
    let bottom_lrs = s.bottom.x < gap_threshold;
    match (top_lrs, bottom_lrs) {
        (true, false) => Ok(CrsLogicState::Zero),
        (false, true) => Ok(CrsLogicState::One),
        (true, true) => Ok(CrsLogicState::On),
        (false, false) => Err(Error::Indeterminate {
            top: s.top.x,
            bottom: s.bottom.x,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrsSolution {
    /// Wordline minus bitline voltage.
    pub v: f64,
    /// Current from wordline to bitline.
    pub i: f64,
    /// Cell voltage of the top device (its own orientation).
    pub v_top: f64,
    /// Cell voltage of the bottom device.
    pub v_bottom: f64,
    pub top: CellSolution,
    pub bottom: CellSolution,
}

impl CrsSolution {
    /// Relative mismatch between the two series currents.
    pub fn series_mismatch(&self) -> f64 {
        let scale = self.bottom.i_total.abs().max(self.top.i_total.abs());
        if scale == 0.0 {
            return 0.0;
        }
        (self.bottom.i_total + self.top.i_total).abs() / scale
    }
}

const SERIES_TOLERANCE: f64 = 1e-10;
const SERIES_MAX_ITERATIONS: usize = 300;

/// Solve the internal node of the anti-serial pair.
///
/// The unknown is the voltage across whichever device has the smaller gap
/// (the lower-resistance one), so that its small voltage keeps full relative
/// precision.
pub fn solve_crs_dc(v: f64, s: &CrsDeviceState, p: &EcmParams) -> Result<CrsSolution> {
    if !v.is_finite() {
        return Err(Error::Domain(format!(
            "CRS voltage must be finite, got {v}"
        )));
    }
    if v == 0.0 {
        let top = ecm::solve_cell_dc(0.0, s.top, p)?;
        let bottom = ecm::solve_cell_dc(0.0, s.bottom, p)?;
        return Ok(CrsSolution {
            v,
            i: 0.0,
            v_top: 0.0,
            v_bottom: 0.0,
            top,
            bottom,
        });
    }
    let unknown_is_top = s.top.x <= s.bottom.x;
    // Device voltages from the unknown u (u_bottom - u_top = v).
    let split = |u: f64| {
        if unknown_is_top {
            (u, v + u)
        } else {
            (u - v, u)
        }
    };
    let eval = |u: f64| -> Result<(f64, f64, CellSolution, CellSolution)> {
        let (ut, ub) = split(u);
        let top = ecm::solve_cell_dc(ut, s.top, p)?;
        let bottom = ecm::solve_cell_dc(ub, s.bottom, p)?;
        Ok((
            bottom.i_total + top.i_total,
            bottom.conductance + top.conductance,
            top,
            bottom,
        ))
    };
    let (mut lo, mut hi) = if unknown_is_top {
        if v > 0.0 {
            (-v, 0.0)
        } else {
            (0.0, -v)
        }
    } else if v > 0.0 {
        (0.0, v)
    } else {
        (v, 0.0)
    };
    // Linear divider guess from the zero-bias conductances.
    let g_top = ecm::solve_cell_dc(0.0, s.top, p)?.conductance;
    let g_bottom = ecm::solve_cell_dc(0.0, s.bottom, p)?.conductance;
    let mut u = if unknown_is_top {
        -v * g_bottom / (g_top + g_bottom)
    } else {
        v * g_top / (g_top + g_bottom)
    };
    if !(u > lo && u < hi) {
        u = 0.5 * (lo + hi);
    }
    let mut last = f64::INFINITY;
    for _ in 0..SERIES_MAX_ITERATIONS {
        let (r, slope, top, bottom) = eval(u)?;
        let scale = bottom.i_total.abs().max(top.i_total.abs());
        last = r;
        let collapsed = hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs());
        if r.abs() <= SERIES_TOLERANCE * scale || r == 0.0 || collapsed {
            let (v_top, v_bottom) = split(u);
            return Ok(CrsSolution {
                v,
                i: bottom.i_total,
                v_top,
                v_bottom,
                top,
                bottom,
            });
        }
        if r < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - r / slope;
        u = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Convergence {
        iterations: SERIES_MAX_ITERATIONS,
        residual: last,
    })
}

/// Gap rates (top, bottom) of the pair at a given CRS voltage.
pub fn crs_gap_rates(v: f64, s: &CrsDeviceState, p: &EcmParams) -> Result<[f64; 2]> {
    if v == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let sol = solve_crs_dc(v, s, p)?;
    Ok([
        ecm::state_derivative(sol.top.i_ion, p),
        ecm::state_derivative(sol.bottom.i_ion, p),
    ])
}

fn pair(x: &[f64; 2]) -> CrsDeviceState {
    CrsDeviceState {
        top: EcmState { x: x[0] },
        bottom: EcmState { x: x[1] },
    }
}

pub(crate) fn bounds(p: &EcmParams) -> Bounds {
    Bounds {
        lo: p.x_min,
        hi: p.l,
    }
}

/// Advance both devices by `dt` at a constant wordline-to-bitline voltage.
pub fn step_crs_transient(
    s: &CrsDeviceState,
    v: f64,
    dt: f64,
    p: &EcmParams,
) -> Result<CrsDeviceState> {
    step_crs_transient_with(s, v, dt, p, &TransientOptions::default(), |_, _| Ok(()))
}

/// As [`step_crs_transient`], calling `observe(t, state)` after each accepted
/// substep (t relative to the start of the step).
pub fn step_crs_transient_with(
    s: &CrsDeviceState,
    v: f64,
    dt: f64,
    p: &EcmParams,
    opts: &TransientOptions,
    mut observe: impl FnMut(f64, &CrsDeviceState) -> Result<()>,
) -> Result<CrsDeviceState> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("dt must be > 0, got {dt}")));
    }
    if v == 0.0 {
        return Ok(*s);
    }
    let mut x = [s.top.x, s.bottom.x];
    integrate::advance(
        &mut x,
        0.0,
        dt,
        bounds(p),
        opts,
        |_, x| crs_gap_rates(v, &pair(x), p),
        |t, x| observe(t, &pair(x)),
    )?;
    Ok(pair(&x))
}

/// Time until the pair first decodes as `target` under a constant voltage,
/// or `None` if that does not happen within `t_max`.
pub fn time_to_state(
    s: &CrsDeviceState,
    v: f64,
    target: CrsLogicState,
    t_max: f64,
    p: &EcmParams,
    opts: &TransientOptions,
) -> Result<Option<f64>> {
    let threshold = p.gap_midpoint();
    if decode_state(s, threshold).ok() == Some(target) {
        return Ok(Some(0.0));
    }
    let mut hit = None;
    let outcome = step_crs_transient_with(s, v, t_max, p, opts, |t, state| {
        if decode_state(state, threshold).ok() == Some(target) {
            hit = Some(t);
            // Abort the integration; the error is discarded below.
            return Err(Error::Extraction(String::new()));
        }
        Ok(())
    });
    match (outcome, hit) {
        (_, Some(t)) => Ok(Some(t)),
        (Ok(_), None) => Ok(None),
        (Err(e), None) => Err(e),
    }
}

/// Threshold voltages of a CRS butterfly curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrsThresholds {
    pub v_th1: f64,
    pub v_th2: f64,
    pub v_th3: f64,
    pub v_th4: f64,
}

impl CrsThresholds {
    pub fn on_window(&self) -> f64 {
        self.v_th2 - self.v_th1
    }

    pub fn is_ordered(&self) -> bool {
        self.v_th1 < self.v_th2 && self.v_th4 < self.v_th3 && self.v_th3 < 0.0 && self.v_th1 > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrsSample {
    pub t: f64,
    pub v: f64,
    pub i: f64,
    pub x_top: f64,
    pub x_bottom: f64,
    pub state: Option<CrsLogicState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrsSweep {
    pub samples: Vec<CrsSample>,
    pub thresholds: CrsThresholds,
}

/// Default extraction fraction of the branch peak current.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.5;
/// Default CRS sweep amplitude (V).
pub const DEFAULT_CRS_AMPLITUDE: f64 = 2.0;

/// Triangular sweep of a CRS cell plus threshold extraction.
pub fn sweep_iv_crs(
    amplitude: f64,
    rate: f64,
    s0: &CrsDeviceState,
    p: &EcmParams,
    samples: usize,
    fraction: f64,
) -> Result<CrsSweep> {
    let samples = sweep_crs_samples(amplitude, rate, s0, p, samples)?;
    let thresholds = extract_thresholds(&samples, fraction)?;
    Ok(CrsSweep {
        samples,
        thresholds,
    })
}

/// The sampled butterfly curve without threshold extraction.
pub fn sweep_crs_samples(
    amplitude: f64,
    rate: f64,
    s0: &CrsDeviceState,
    p: &EcmParams,
    samples: usize,
) -> Result<Vec<CrsSample>> {
    let sweep = TriangleSweep { amplitude, rate };
    sweep.validate()?;
    let samples = samples.max(8);
    let total = sweep.duration();
    let opts = TransientOptions::default().with_max_dt(total / samples as f64);
    let threshold = p.gap_midpoint();
    let mut x = [s0.top.x, s0.bottom.x];
    let sample = |t: f64, v: f64, x: &[f64; 2]| -> Result<CrsSample> {
        let s = pair(x);
        let sol = solve_crs_dc(v, &s, p)?;
        Ok(CrsSample {
            t,
            v,
            i: sol.i,
            x_top: x[0],
            x_bottom: x[1],
            state: decode_state(&s, threshold).ok(),
        })
    };
    let mut out = Vec::with_capacity(samples + 1);
    out.push(sample(0.0, 0.0, &x)?);
    for k in 0..samples {
        let t0 = total * k as f64 / samples as f64;
        let t1 = total * (k + 1) as f64 / samples as f64;
        integrate::advance(
            &mut x,
            t0,
            t1,
            bounds(p),
            &opts,
            |t, x| crs_gap_rates(sweep.voltage(t), &pair(x), p),
            |_, _| Ok(()),
        )?;
        out.push(sample(t1, sweep.voltage(t1), &x)?);
    }
    Ok(out)
}

/// Thresholds from a butterfly curve: on each polarity the first and second
/// thresholds are where |I| rises through and then falls back through
/// `fraction` of that branch's peak.
pub fn extract_thresholds(samples: &[CrsSample], fraction: f64) -> Result<CrsThresholds> {
    let as_iv = |s: &CrsSample| IvSample {
        t: s.t,
        v: s.v,
        i: s.i,
        x: s.x_top,
    };
    let positive: Vec<IvSample> = samples.iter().filter(|s| s.v > 0.0).map(as_iv).collect();
    let negative: Vec<IvSample> = samples.iter().filter(|s| s.v < 0.0).map(as_iv).collect();
    let branch = |b: &[IvSample], name: &str| -> Result<(f64, f64)> {
        let refs: Vec<&IvSample> = b.iter().collect();
        let peak = refs.iter().map(|s| s.i.abs()).fold(0.0, f64::max);
        let level = fraction * peak;
        let rise = ecm::rising_crossing(&refs, level).ok_or_else(|| {
            Error::Extraction(format!("no {name} switching onset within the sweep"))
        })?;
        let fall = ecm::falling_crossing(&refs, level).ok_or_else(|| {
            Error::Extraction(format!("{name} current never collapses within the sweep"))
        })?;
        Ok((rise, fall))
    };
    let (v_th1, v_th2) = branch(&positive, "positive")?;
    let (v_th3, v_th4) = branch(&negative, "negative")?;
    let thresholds = CrsThresholds {
        v_th1,
        v_th2,
        v_th3,
        v_th4,
    };
    if !thresholds.is_ordered() {
        return Err(Error::Extraction(format!(
            "thresholds out of order: {thresholds:?}"
        )));
    }
    Ok(thresholds)
}

/// CRS sweep CSV (`v_volts,i_amps,x_top_meters,x_bottom_meters,logic_state`).
pub fn crs_sweep_csv(samples: &[CrsSample]) -> String {
    let mut out = String::from("v_volts,i_amps,x_top_meters,x_bottom_meters,logic_state\n");
    for s in samples {
        let state = s.state.map_or_else(|| "X".to_string(), |st| st.to_string());
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{}",
            s.v, s.i, s.x_top, s.x_bottom, state
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> EcmParams {
        EcmParams::default()
    }

    #[test]
    fn fsm_transitions() {
        assert!(fsm_next(false, true, false));
        assert!(!fsm_next(true, false, true));
        assert!(fsm_next(true, true, true));
    }

    #[test]
    fn decode_encodings() {
        let p = p();
        let th = p.gap_midpoint();
        assert_eq!(
            decode_state(&CrsDeviceState::zero(&p), th).unwrap(),
            CrsLogicState::Zero
        );
        assert_eq!(
            decode_state(&CrsDeviceState::one(&p), th).unwrap(),
            CrsLogicState::One
        );
        let on = CrsDeviceState {
            top: EcmState::lrs(&p),
            bottom: EcmState::lrs(&p),
        };
        assert_eq!(decode_state(&on, th).unwrap(), CrsLogicState::On);
        let off = CrsDeviceState {
            top: EcmState::hrs(&p),
            bottom: EcmState::hrs(&p),
        };
        assert!(matches!(
            decode_state(&off, th),
            Err(Error::Indeterminate { .. })
        ));
    }

    #[test]
    fn zero_voltage_holds() {
        let p = p();
        let s = CrsDeviceState::zero(&p);
        assert_eq!(step_crs_transient(&s, 0.0, 1e-3, &p).unwrap(), s);
    }

    #[test]
    fn series_currents_agree() {
        let p = p();
        let mid = CrsDeviceState {
            top: EcmState { x: 0.4e-9 },
            bottom: EcmState { x: 0.3e-9 },
        };
        for s in [CrsDeviceState::zero(&p), CrsDeviceState::one(&p), mid] {
            for v in [-3.0, -1.0, -0.2, 0.2, 1.0, 3.0] {
                let sol = solve_crs_dc(v, &s, &p).unwrap();
                assert!(
                    sol.series_mismatch() < 1e-9,
                    "v={v} mismatch {}",
                    sol.series_mismatch()
                );
                assert!((sol.v_bottom - sol.v_top - v).abs() <= 1e-12 * v.abs());
                assert_eq!(sol.i.signum(), v.signum());
            }
        }
    }

    #[test]
    fn full_write_passes_through_on() {
        let p = p();
        let th = p.gap_midpoint();
        let mut seen_on = false;
        let end = step_crs_transient_with(
            &CrsDeviceState::zero(&p),
            3.0,
            1e-4,
            &p,
            &TransientOptions::default(),
            |_, s| {
                seen_on |= decode_state(s, th).ok() == Some(CrsLogicState::On);
                Ok(())
            },
        )
        .unwrap();
        assert!(seen_on);
        assert_eq!(decode_state(&end, th).unwrap(), CrsLogicState::One);
    }

    #[test]
    fn csv_header() {
        assert!(crs_sweep_csv(&[])
            .starts_with("v_volts,i_amps,x_top_meters,x_bottom_meters,logic_state\n"));
    }
}
