//! EOG preprocessing: outlier interpolation, Hann ramp taper, DC removal,
//! zero-phase Butterworth low-pass, linear detrending, z-scoring and
//! first differences.

mod butterworth;
mod zscore;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use butterworth::{Butterworth, Section};
pub use zscore::{apply_zscore, fit_zscore, fit_zscore_blocks, NormMode, NormParams, STD_FLOOR};

use crate::datamodel::{EogRecording, EOG_CHANNELS, EOG_FS};
use crate::error::{Error, Result};

/// Parameters of the per-channel filter chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub fs: f64,
    pub outlier_k: f64,
    pub ramp_s: f64,
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            fs: EOG_FS,
            outlier_k: 3.0,
            ramp_s: 0.5,
            cutoff_hz: 50.0,
            order: 4,
        }
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Replaces samples more than `k` population standard deviations from the
/// mean by linear interpolation between the nearest inliers. Mean and std
/// are estimated once on the raw series; leading and trailing outliers take
/// the nearest inlier value.
pub fn interpolate_outliers(x: &[f64], k: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Parameter("outlier interpolation needs at least 2 samples".into()));
    }
    let (mean, std) = mean_std(x);
    let limit = k * std;
    let outlier: Vec<bool> = x.iter().map(|v| (v - mean).abs() > limit).collect();
    let inliers: Vec<usize> = (0..x.len()).filter(|&i| !outlier[i]).collect();
    let (Some(&first), Some(&last)) = (inliers.first(), inliers.last()) else {
        return Err(Error::DegenerateSeries);
    };

    let mut out = x.to_vec();
    out[..first].fill(x[first]);
    out[last + 1..].fill(x[last]);
    for pair in inliers.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            let span = (b - a) as f64;
            for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
                let frac = (i - a) as f64 / span;
                *v = x[a] + (x[b] - x[a]) * frac;
            }
        }
    }
    Ok(out)
}

/// Rising half of a Hann window of `ramp` samples: `0.5 (1 - cos(pi i / ramp))`.
fn hann_ramp(ramp: usize) -> Vec<f64> {
    (0..ramp)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp as f64).cos()))
        .collect()
}

/// Tukey-style taper: the first and last `ceil(ramp_s * fs)` samples are
/// scaled by the rising and falling Hann halves.
pub fn taper_ramp(x: &[f64], fs: f64, ramp_s: f64) -> Result<Vec<f64>> {
    let ramp = (ramp_s * fs).ceil() as usize;
    let n = x.len();
    if n <= 2 * ramp {
        return Err(Error::Parameter(format!(
            "series of {n} samples is shorter than two {ramp}-sample ramps"
        )));
    }
    let w = hann_ramp(ramp);
    let mut out = x.to_vec();
    for (i, wi) in w.iter().enumerate() {
        out[i] *= wi;
        out[n - 1 - i] *= wi;
    }
    Ok(out)
}

pub fn remove_dc(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Zero-phase 4th-order Butterworth low-pass.
pub fn lowpass(x: &[f64], fs: f64, cutoff: f64) -> Result<Vec<f64>> {
    Ok(Butterworth::lowpass(4, cutoff, fs)?.filtfilt(x))
}

/// Subtracts the least-squares line over sample index.
pub fn detrend_linear(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Parameter("detrending needs at least 2 samples".into()));
    }
    let mid = (n - 1) as f64 / 2.0;
    let mean = x.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let t = i as f64 - mid;
        sxy += t * (v - mean);
        sxx += t * t;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, v)| v - mean - slope * (i as f64 - mid))
        .collect())
}

/// First differences with a leading zero.
pub fn differentiate(x: &[f64]) -> Vec<f64> {
    let mut d = Vec::with_capacity(x.len());
    if !x.is_empty() {
        d.push(0.0);
        d.extend(x.windows(2).map(|w| w[1] - w[0]));
    }
    d
}

/// The five filter stages in order: outliers → taper → DC → low-pass → detrend.
pub fn filter_channel(x: &[f64], cfg: &FilterConfig) -> Result<Vec<f64>> {
    let x = interpolate_outliers(x, cfg.outlier_k).map_err(|e| Error::stage("interpolate_outliers", e))?;
    let x = taper_ramp(&x, cfg.fs, cfg.ramp_s).map_err(|e| Error::stage("taper_ramp", e))?;
    let x = remove_dc(&x);
    let x = Butterworth::lowpass(cfg.order, cfg.cutoff_hz, cfg.fs)
        .map_err(|e| Error::stage("lowpass", e))?
        .filtfilt(&x);
    detrend_linear(&x).map_err(|e| Error::stage("detrend_linear", e))
}

/// Filters all four channels of a span into an `n × 4` matrix.
pub fn filter_channels(channels: [&[f64]; 4], cfg: &FilterConfig) -> Result<Array2<f64>> {
    let n = channels[0].len();
    let mut out = Array2::zeros((n, 4));
    for (c, ch) in channels.iter().enumerate() {
        let f = filter_channel(ch, cfg).map_err(|e| e.context(EOG_CHANNELS[c]))?;
        out.column_mut(c).assign(&ndarray::ArrayView1::from(&f));
    }
    Ok(out)
}

/// Appends per-column first differences to a normalized `n × 4` block.
pub fn with_differentials(normalized: &Array2<f64>) -> Array2<f64> {
    let (n, c) = normalized.dim();
    let mut out = Array2::zeros((n, 2 * c));
    out.slice_mut(ndarray::s![.., ..c]).assign(normalized);
    for j in 0..c {
        let col: Vec<f64> = normalized.column(j).to_vec();
        out.column_mut(c + j).assign(&ndarray::ArrayView1::from(&differentiate(&col)));
    }
    out
}

/// Column names of the 8-column EOG feature matrix.
pub fn eog_feature_names() -> Vec<String> {
    EOG_CHANNELS
        .iter()
        .map(|c| c.to_string())
        .chain(EOG_CHANNELS.iter().map(|c| format!("d_{c}")))
        .collect()
}

/// Normalized channels followed by their differentials, at the EOG rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EogFeatureMatrix {
    pub timestamps: Vec<f64>,
    pub columns: Array2<f64>,
}

/// Full EOG chain on one recording span. Returns the features and the
/// normalization parameters that were applied.
pub fn preprocess_eog(
    rec: &EogRecording,
    norm: NormMode<'_>,
    cfg: &FilterConfig,
) -> Result<(EogFeatureMatrix, NormParams)> {
    let ch = rec.channels();
    let filtered = filter_channels([&ch[0], &ch[1], &ch[2], &ch[3]], cfg)?;
    let params = match norm {
        NormMode::Fit => fit_zscore(&filtered.view()),
        NormMode::Apply(p) => p.clone(),
    };
    let normalized = apply_zscore(&filtered.view(), &params).map_err(|e| Error::stage("zscore", e))?;
    Ok((
        EogFeatureMatrix {
            timestamps: rec.timestamps().to_vec(),
            columns: with_differentials(&normalized),
        },
        params,
    ))
}
