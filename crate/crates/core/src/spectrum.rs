//! Spectrum inspection: value-distribution histograms of projected
//! coefficients and the summary statistics that inform threshold selection.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::ProjectionSpectrum;

/// Threshold-fraction grid used by [`stats`].
pub const XI_GRID: [f64; 5] = [0.01, 0.03, 0.05, 0.07, 0.09];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide entries by the spectrum's max absolute value; bins span [−1, 1].
    MaxAbs,
    /// Raw entries; bins span [−max_abs, +max_abs].
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumHistogram {
    pub layer_name: String,
    /// bins + 1 uniform edges over the symmetric range.
    pub bin_edges: Vec<f64>,
    /// count / (total · bin_width) per bin; integrates to 1.
    pub densities: Vec<f64>,
    pub normalization: Normalization,
}

impl SpectrumHistogram {
    pub fn bins(&self) -> usize {
        self.densities.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    /// Center of bin `i`.
    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.bin_edges[i] + self.bin_edges[i + 1])
    }

    /// CSV with header `bin,cnt`: one row per bin, bin center and density.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,cnt\n");
        for i in 0..self.bins() {
            out.push_str(&format!("{},{}\n", self.bin_center(i), self.densities[i]));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Bin the spectrum's entries into `bins` uniform bins over the symmetric
/// range. Bins are half-open `[lo, hi)` with the final bin closed; entries
/// zeroed by filtering land in the bin containing 0.
pub fn histogram(
    spec: &ProjectionSpectrum,
    bins: usize,
    normalization: Normalization,
) -> Result<SpectrumHistogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument {
            reason: format!("bins must be >= 2, got {bins}"),
        });
    }
    let max_abs = spec.max_abs();
    if max_abs == 0.0 {
        return Err(Error::Numerical {
            reason: "degenerate spectrum".into(),
        });
    }

    let half_range = match normalization {
        Normalization::MaxAbs => 1.0,
        Normalization::None => max_abs,
    };
    let width = 2.0 * half_range / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| -half_range + i as f64 * width).collect();

    let mut counts = vec![0usize; bins];
    let total = spec.coeffs().numel();
    for &raw in spec.coeffs().data() {
        let value = match normalization {
            Normalization::MaxAbs => raw / max_abs,
            Normalization::None => raw,
        };
        let mut idx = ((value + half_range) / width).floor() as usize;
        if idx >= bins {
            idx = bins - 1; // value exactly at the top edge
        }
        counts[idx] += 1;
    }

    let densities: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (total as f64 * width))
        .collect();

    Ok(SpectrumHistogram {
        layer_name: spec.layer_name().to_string(),
        bin_edges,
        densities,
        normalization,
    })
}

/// Share of entries with `|entry| >= f · max_abs`. Reported as 0 for an
/// all-zero spectrum, by convention.
pub fn fraction_above(spec: &ProjectionSpectrum, f: f64) -> f64 {
    let max_abs = spec.max_abs();
    if max_abs == 0.0 {
        return 0.0;
    }
    let threshold = f * max_abs;
    let kept = spec
        .coeffs()
        .data()
        .iter()
        .filter(|v| v.abs() >= threshold)
        .count();
    kept as f64 / spec.coeffs().numel() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumStats {
    pub layer_name: String,
    pub max_abs: f64,
    pub frobenius: f64,
    /// Keyed by the grid fraction, e.g. "0.03".
    pub fraction_above: BTreeMap<String, f64>,
}

pub fn stats(spec: &ProjectionSpectrum) -> SpectrumStats {
    let mut fractions = BTreeMap::new();
    for f in XI_GRID {
        fractions.insert(format!("{f}"), fraction_above(spec, f));
    }
    SpectrumStats {
        layer_name: spec.layer_name().to_string(),
        max_abs: spec.max_abs(),
        frobenius: spec.coeffs().frobenius_norm(),
        fraction_above: fractions,
    }
}
