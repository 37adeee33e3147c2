//! Zero location for `G^±(X)` between consecutive poles.
//!
//! Each open interval between poles (and the flanks down to `x_min` / up to
//! `x_max`) is sampled on a uniform grid that stays clear of the pole
//! collars; sign changes become brackets, refined by bisection with secant
//! acceleration. Tangential (non-crossing) near-zeros are reported as
//! warnings, never as levels.

use crate::gfunction::{evaluate_g_with, poles, GError, GSettings};
use crate::model::{ModelParams, ParitySector};
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum ScanError {
    #[error("scan configuration: {0}")]
    Config(String),
    #[error("G evaluation did not converge at X = {x} (level cap {max_level})")]
    NotConverged { x: f64, max_level: usize },
    #[error("bracket [{lo}, {hi}] has no sign change (G = {g_lo} and {g_hi})")]
    BracketInvalid {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },
    #[error(transparent)]
    G(#[from] GError),
}

/// Scan controls. `pole_margin = None` resolves to `1e-6 * min_j omega_j`.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub grid_per_gap: usize,
    pub pole_margin: Option<f64>,
    pub refine_tol: f64,
    pub g_tol: f64,
    pub settings: GSettings,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            x_min: -0.1,
            x_max: 3.1,
            grid_per_gap: 64,
            pole_margin: None,
            refine_tol: 1e-10,
            g_tol: 1e-10,
            settings: GSettings::default(),
        }
    }
}

impl ScanConfig {
    pub fn resolved_margin(&self, params: &ModelParams) -> f64 {
        self.pole_margin.unwrap_or_else(|| {
            1e-6 * params
                .omegas()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        })
    }

    fn validate(&self, params: &ModelParams) -> Result<(), ScanError> {
        if !(self.x_min < self.x_max) {
            return Err(ScanError::Config(format!(
                "x_min = {} must be below x_max = {}",
                self.x_min, self.x_max
            )));
        }
        if self.grid_per_gap < 8 {
            return Err(ScanError::Config(format!(
                "grid_per_gap = {} must be at least 8",
                self.grid_per_gap
            )));
        }
        let margin = self.resolved_margin(params);
        if margin <= self.settings.pole_guard {
            return Err(ScanError::Config(format!(
                "pole_margin = {margin:e} must exceed the pole guard {:e}",
                self.settings.pole_guard
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelSource {
    GFunction,
    Oracle,
}

impl std::fmt::Display for LevelSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LevelSource::GFunction => write!(f, "gfunction"),
            LevelSource::Oracle => write!(f, "oracle"),
        }
    }
}

/// One located energy level.
#[derive(Debug, Clone)]
pub struct SpectrumLevel {
    pub x_zero: f64,
    pub energy: f64,
    pub sector: ParitySector,
    pub bracket: (f64, f64),
    pub source: LevelSource,
}

/// A near-zero grid dip without a sign change; not claimed as a level.
#[derive(Debug, Clone)]
pub struct TangentWarning {
    pub x: f64,
    pub g_value: f64,
    pub sector: ParitySector,
}

#[derive(Debug, Clone, Default)]
pub struct Spectrum {
    pub levels: Vec<SpectrumLevel>,
    pub warnings: Vec<TangentWarning>,
    pub notes: Vec<String>,
}

/// Locate the zeros of `G` for one sector over `cfg`'s window.
pub fn scan_zeros(
    params: &ModelParams,
    sector: ParitySector,
    cfg: &ScanConfig,
) -> Result<Spectrum, ScanError> {
    cfg.validate(params)?;
    let mut out = Spectrum::default();
    if params.delta() == 0.0 {
        out.notes.push(
            "delta = 0: levels coincide with the pole locations X = n.omega and cannot be \
             bracketed by the series scan; use the oracle route"
                .into(),
        );
        return Ok(out);
    }

    let margin = cfg.resolved_margin(params);
    let x_shift = params.x_shift();
    let pole_xs: Vec<f64> = poles(params, cfg.x_max + margin)
        .entries
        .iter()
        .map(|e| e.x_pole)
        .filter(|&x| x >= cfg.x_min - margin)
        .collect();

    // Open gaps between collars, clipped to the window.
    let mut gaps: Vec<(f64, f64)> = Vec::new();
    let mut lo = cfg.x_min;
    for &p in &pole_xs {
        let hi = p - margin;
        if hi > lo {
            gaps.push((lo, hi));
        }
        lo = lo.max(p + margin);
    }
    if cfg.x_max > lo {
        gaps.push((lo, cfg.x_max));
    }

    let eval = |x: f64| -> Result<f64, ScanError> {
        let e = evaluate_g_with(params, sector, x, cfg.g_tol, &cfg.settings)?;
        if !e.converged {
            return Err(ScanError::NotConverged {
                x,
                max_level: e.max_level,
            });
        }
        Ok(e.value)
    };

    for &(lo, hi) in &gaps {
        if hi - lo <= 4.0 * cfg.settings.pole_guard {
            continue;
        }
        let m = cfg.grid_per_gap;
        let step = (hi - lo) / (m - 1) as f64;
        let mut xs = Vec::with_capacity(m);
        let mut gs = Vec::with_capacity(m);
        for k in 0..m {
            let x = if k == m - 1 { hi } else { lo + k as f64 * step };
            xs.push(x);
            gs.push(eval(x)?);
        }
        for k in 0..m - 1 {
            if gs[k] == 0.0 {
                // grid point dead on a zero
                out.levels.push(SpectrumLevel {
                    x_zero: xs[k],
                    energy: xs[k] - x_shift,
                    sector,
                    bracket: (xs[k.saturating_sub(1)], xs[k + 1]),
                    source: LevelSource::GFunction,
                });
                continue;
            }
            if gs[k] * gs[k + 1] < 0.0 {
                let x_zero = refine_bracket(&eval, xs[k], xs[k + 1], gs[k], gs[k + 1], cfg)?;
                out.levels.push(SpectrumLevel {
                    x_zero,
                    energy: x_zero - x_shift,
                    sector,
                    bracket: (xs[k], xs[k + 1]),
                    source: LevelSource::GFunction,
                });
            }
        }
        // tangential dips: local minimum of |G| well below its neighbors
        for k in 1..m - 1 {
            let a = gs[k - 1].abs();
            let b = gs[k].abs();
            let c = gs[k + 1].abs();
            if gs[k - 1] * gs[k] > 0.0
                && gs[k] * gs[k + 1] > 0.0
                && b < a
                && b < c
                && b < 1e-3 * a.min(c)
                && b < 1e-2
            {
                out.warnings.push(TangentWarning {
                    x: xs[k],
                    g_value: gs[k],
                    sector,
                });
            }
        }
    }
    out.levels
        .sort_by(|a, b| a.energy.partial_cmp(&b.energy).unwrap());
    Ok(out)
}

/// Refine a sign-change bracket to `refine_tol` width. Secant proposals are
/// used whenever they fall strictly inside the bracket, bisection otherwise;
/// the bracket never loses its sign change.
pub fn refine_zero(
    params: &ModelParams,
    sector: ParitySector,
    bracket: (f64, f64),
    cfg: &ScanConfig,
) -> Result<f64, ScanError> {
    let eval = |x: f64| -> Result<f64, ScanError> {
        let e = evaluate_g_with(params, sector, x, cfg.g_tol, &cfg.settings)?;
        if !e.converged {
            return Err(ScanError::NotConverged {
                x,
                max_level: e.max_level,
            });
        }
        Ok(e.value)
    };
    let g_lo = eval(bracket.0)?;
    let g_hi = eval(bracket.1)?;
    refine_bracket(&eval, bracket.0, bracket.1, g_lo, g_hi, cfg)
}

fn refine_bracket(
    eval: &dyn Fn(f64) -> Result<f64, ScanError>,
    mut lo: f64,
    mut hi: f64,
    mut g_lo: f64,
    mut g_hi: f64,
    cfg: &ScanConfig,
) -> Result<f64, ScanError> {
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo * g_hi > 0.0 {
        return Err(ScanError::BracketInvalid { lo, hi, g_lo, g_hi });
    }
    let mut use_secant = true;
    for _ in 0..200 {
        if hi - lo <= cfg.refine_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let mut x = if use_secant {
            let s = hi - g_hi * (hi - lo) / (g_hi - g_lo);
            if s.is_finite() && s > lo && s < hi {
                s
            } else {
                mid
            }
        } else {
            mid
        };
        // keep strictly inside
        if x <= lo || x >= hi {
            x = mid;
        }
        let g = eval(x)?;
        if g == 0.0 {
            return Ok(x);
        }
        let old_width = hi - lo;
        if g * g_lo < 0.0 {
            hi = x;
            g_hi = g;
        } else {
            lo = x;
            g_lo = g;
        }
        // alternate to plain bisection when secant stalls
        use_secant = (hi - lo) < 0.75 * old_width;
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn decoupled() -> ModelParams {
        ModelParams::linear(vec![1.0, 0.92], vec![0.0, 0.0], 0.68).unwrap()
    }

    #[test]
    fn decoupled_scan_single_plus_zero() {
        let cfg = ScanConfig::default();
        let s = scan_zeros(&decoupled(), ParitySector::Plus, &cfg).unwrap();
        assert_eq!(s.levels.len(), 1, "{:?}", s.levels);
        let z = &s.levels[0];
        assert!((z.x_zero - 0.68).abs() < 1e-10);
        assert!((z.energy - 0.68).abs() < 1e-10); // x_shift = 0
    }

    #[test]
    fn decoupled_minus_zero_below_window() {
        let cfg = ScanConfig::default(); // window starts at -0.1
        let s = scan_zeros(&decoupled(), ParitySector::Minus, &cfg).unwrap();
        assert!(s.levels.is_empty());
        let wide = ScanConfig {
            x_min: -1.0,
            ..ScanConfig::default()
        };
        let s = scan_zeros(&decoupled(), ParitySector::Minus, &wide).unwrap();
        assert_eq!(s.levels.len(), 1);
        assert!((s.levels[0].x_zero + 0.68).abs() < 1e-10);
    }

    #[test]
    fn refine_stays_inside_and_meets_tol() {
        let cfg = ScanConfig::default();
        let x = refine_zero(&decoupled(), ParitySector::Plus, (0.5, 1.0 - 1e-6), &cfg).unwrap();
        assert!(x > 0.5 && x < 1.0);
        assert!((x - 0.68).abs() < 1e-9);
    }

    #[test]
    fn invalid_bracket_is_reported() {
        let cfg = ScanConfig::default();
        let err = refine_zero(&decoupled(), ParitySector::Plus, (0.7, 0.75), &cfg).unwrap_err();
        assert!(matches!(err, ScanError::BracketInvalid { .. }));
    }

    #[test]
    fn delta_zero_scan_notes_degeneracy() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.3, 0.2], 0.0).unwrap();
        let s = scan_zeros(&p, ParitySector::Plus, &ScanConfig::default()).unwrap();
        assert!(s.levels.is_empty());
        assert!(!s.notes.is_empty());
    }

    #[test]
    fn malformed_ranges_are_config_errors() {
        let p = decoupled();
        let bad = ScanConfig {
            x_min: 2.0,
            x_max: 1.0,
            ..ScanConfig::default()
        };
        assert!(matches!(
            scan_zeros(&p, ParitySector::Plus, &bad),
            Err(ScanError::Config(_))
        ));
        let coarse = ScanConfig {
            grid_per_gap: 4,
            ..ScanConfig::default()
        };
        assert!(matches!(
            scan_zeros(&p, ParitySector::Plus, &coarse),
            Err(ScanError::Config(_))
        ));
        let tight = ScanConfig {
            pole_margin: Some(1e-12),
            ..ScanConfig::default()
        };
        assert!(matches!(
            scan_zeros(&p, ParitySector::Plus, &tight),
            Err(ScanError::Config(_))
        ));
    }

    #[test]
    fn brackets_have_opposite_signs() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.7, 0.78], 0.68).unwrap();
        let cfg = ScanConfig {
            x_min: -0.1,
            x_max: 2.0,
            ..ScanConfig::default()
        };
        let s = scan_zeros(&p, ParitySector::Plus, &cfg).unwrap();
        assert!(!s.levels.is_empty());
        for level in &s.levels {
            let a = crate::gfunction::evaluate_g(&p, level.sector, level.bracket.0, 1e-10)
                .unwrap()
                .value;
            let b = crate::gfunction::evaluate_g(&p, level.sector, level.bracket.1, 1e-10)
                .unwrap()
                .value;
            assert!(a * b < 0.0, "bracket {:?}", level.bracket);
            assert!(level.x_zero > level.bracket.0 && level.x_zero < level.bracket.1);
        }
    }
}
