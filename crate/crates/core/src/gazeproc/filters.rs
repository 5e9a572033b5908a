//! NaN-aware robust filters. NaN cells are invalid: they never contribute to
//! a window statistic and pass through unchanged.

use crate::error::{Error, Result};

/// Median of a scratch buffer (reordered in place). Even counts average the
/// two middle values.
pub fn median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    debug_assert!(n > 0);
    buf.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Half-window in samples for a window of `window_ms` at `fs` Hz.
pub fn hampel_half_window(fs: f64, window_ms: f64) -> usize {
    (window_ms / 1000.0 * fs / 2.0).round() as usize
}

/// Replaces each valid sample deviating from its window median by more than
/// `k` times the raw MAD with that median. With MAD = 0 any deviation at all
/// is replaced.
pub fn hampel(x: &[f64], fs: f64, window_ms: f64, k: f64) -> Vec<f64> {
    let half = hampel_half_window(fs, window_ms);
    let n = x.len();
    let mut out = x.to_vec();
    let mut win = Vec::with_capacity(2 * half + 1);
    let mut dev = Vec::with_capacity(2 * half + 1);
    for i in 0..n {
        if x[i].is_nan() {
            continue;
        }
        win.clear();
        win.extend(x[i.saturating_sub(half)..(i + half + 1).min(n)].iter().copied().filter(|v| !v.is_nan()));
        let m = median(&mut win);
        dev.clear();
        dev.extend(win.iter().map(|v| (v - m).abs()));
        let mad = median(&mut dev);
        let d = (x[i] - m).abs();
        let replace = if mad == 0.0 { d > 0.0 } else { d > k * mad };
        if replace {
            out[i] = m;
        }
    }
    out
}

/// Centered running median over valid samples; edges use truncated windows.
pub fn median_smooth(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Parameter(format!("median window {window} must be odd and positive")));
    }
    let half = window / 2;
    let n = x.len();
    let mut out = x.to_vec();
    let mut win = Vec::with_capacity(window);
    for i in 0..n {
        if x[i].is_nan() {
            continue;
        }
        win.clear();
        win.extend(x[i.saturating_sub(half)..(i + half + 1).min(n)].iter().copied().filter(|v| !v.is_nan()));
        out[i] = median(&mut win);
    }
    Ok(out)
}
