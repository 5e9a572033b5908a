//! Butterworth low-pass design (bilinear transform, prewarped) and zero-phase
//! second-order-section filtering with steady-state initial conditions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad in direct-form II transposed: `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Section>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Parameter("filter order must be positive".into()));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::Parameter(format!(
                "cutoff {cutoff} Hz must lie in (0, {}) for fs = {fs} Hz",
                fs / 2.0
            )));
        }
        // prewarped analog cutoff, in units where the bilinear map is z = (1 + s) / (1 - s)
        let warped = (PI * cutoff / fs).tan();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 0..order / 2 {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let (re, im) = (warped * theta.cos(), warped * theta.sin());
            // z = (1 + s) / (1 - s) for s = re + i im
            let den = (1.0 - re) * (1.0 - re) + im * im;
            let zr = (1.0 - re * re - im * im) / den;
            let zi = 2.0 * im / den;
            let a1 = -2.0 * zr;
            let a2 = zr * zr + zi * zi;
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Section {
                b: [g, 2.0 * g, g],
                a: [a1, a2],
            });
        }
        if order % 2 == 1 {
            let z = (1.0 - warped) / (1.0 + warped);
            let g = (1.0 - z) / 2.0;
            sections.push(Section {
                b: [g, g, 0.0],
                a: [-z, 0.0],
            });
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Magnitude of the one-pass frequency response at `freq` Hz.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        self.sections
            .iter()
            .map(|s| {
                let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
                let ni = -(s.b[1] * s1 + s.b[2] * s2);
                let dr = 1.0 + s.a[0] * c1 + s.a[1] * c2;
                let di = -(s.a[0] * s1 + s.a[1] * s2);
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }

    fn run(&self, x: &mut [f64]) {
        let first = x[0];
        for s in &self.sections {
            // steady state for a constant input `first`; every section has unit DC gain
            let mut z1 = first * (1.0 - s.b[0]);
            let mut z2 = first * (s.b[2] - s.a[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * y + z2;
                z2 = s.b[2] * xin - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Forward-backward filtering with odd extension at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}
