//! Desk-scale verification harness: builds matrices with a known singular
//! basis, plants small "general" and large "undesired" coefficient
//! perturbations at chosen positions, and measures how cleanly the
//! project → filter step separates the two populations.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{filter_spectrum, project_delta, thin_svd, Mat};
use crate::tensor::DenseTensor;

/// Positions in the projected coefficient matrix.
pub type SpectrumPositions = BTreeSet<(usize, usize)>;

/// A synthetic weight matrix plus a delta with planted spectral structure.
///
/// Positions index the projected coefficient matrix: planting at (i, j) adds
/// `amp · u_i · v_jᵀ` to the delta, where u/v are the base's singular
/// vectors. Singular values decay strictly (`s_i = 1/(1+i)`) so the basis
/// recovered by SVD matches the planted one up to sign.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedScenario {
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub general_indices: Vec<(usize, usize)>,
    pub undesired_indices: Vec<(usize, usize)>,
    pub amp_general: f64,
    pub amp_undesired: f64,
    pub noise_sigma: f64,
}

impl PlantedScenario {
    pub fn rank(&self) -> usize {
        self.d.min(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidArgument {
                reason: "scenario dimensions must be >= 1".into(),
            });
        }
        if !(self.amp_undesired > self.amp_general && self.amp_general > 0.0) {
            return Err(Error::InvalidArgument {
                reason: format!(
                    "need amp_undesired > amp_general > 0, got {} and {}",
                    self.amp_undesired, self.amp_general
                ),
            });
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument {
                reason: format!(
                    "noise_sigma must be finite and >= 0, got {}",
                    self.noise_sigma
                ),
            });
        }
        let r = self.rank();
        let mut seen = BTreeSet::new();
        for &(i, j) in self.general_indices.iter().chain(&self.undesired_indices) {
            if i >= r || j >= r {
                return Err(Error::InvalidArgument {
                    reason: format!("planted position ({i}, {j}) outside the {r}×{r} spectrum"),
                });
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidArgument {
                    reason: format!("planted position ({i}, {j}) appears twice"),
                });
            }
        }
        Ok(())
    }

    /// The filter threshold cleanly splits the populations when
    /// `amp_undesired · ξ-fraction > amp_general + 5·noise_sigma`.
    pub fn margin_satisfied(&self, xi_fraction: f64) -> bool {
        self.amp_undesired * xi_fraction > self.amp_general + 5.0 * self.noise_sigma
    }
}

/// Gaussian matrix with columns orthonormalized by twice-iterated
/// Gram-Schmidt. Deterministic for a given RNG state.
fn random_orthonormal(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Result<Mat> {
    assert!(cols <= rows);
    let mut q = Mat::zeros(rows, cols);
    let mut col = vec![0.0_f64; rows];
    for j in 0..cols {
        for value in col.iter_mut() {
            *value = StandardNormal.sample(rng);
        }
        for _pass in 0..2 {
            for prev in 0..j {
                let mut dot = 0.0;
                for i in 0..rows {
                    dot += q.at(i, prev) * col[i];
                }
                for i in 0..rows {
                    col[i] -= dot * q.at(i, prev);
                }
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(Error::Numerical {
                reason: "degenerate random draw while building an orthonormal basis".into(),
            });
        }
        for i in 0..rows {
            q.set(i, j, col[i] / norm);
        }
    }
    Ok(q)
}

/// Build the base matrix, the planted delta, and the ground-truth set of
/// undesired positions. Deterministic given the scenario seed.
pub fn build_scenario(
    sc: &PlantedScenario,
) -> Result<(DenseTensor, DenseTensor, SpectrumPositions)> {
    sc.validate()?;
    let r = sc.rank();
    let mut rng = ChaCha12Rng::seed_from_u64(sc.seed);

    let u0 = random_orthonormal(&mut rng, sc.d, r)?;
    let v0 = random_orthonormal(&mut rng, sc.k, r)?;

    // base = U0 · diag(s0) · V0ᵀ with strictly decaying s0.
    let mut base = Mat::zeros(sc.d, sc.k);
    for i in 0..sc.d {
        for j in 0..sc.k {
            let mut acc = 0.0;
            for l in 0..r {
                acc += u0.at(i, l) * (1.0 / (1.0 + l as f64)) * v0.at(j, l);
            }
            base.set(i, j, acc);
        }
    }

    let mut delta = Mat::zeros(sc.d, sc.k);
    let plant = |positions: &[(usize, usize)], amp: f64, delta: &mut Mat| {
        let mut sorted = positions.to_vec();
        sorted.sort();
        for (ci, cj) in sorted {
            for i in 0..sc.d {
                for j in 0..sc.k {
                    let t = delta.at(i, j) + amp * u0.at(i, ci) * v0.at(j, cj);
                    delta.set(i, j, t);
                }
            }
        }
    };
    plant(&sc.general_indices, sc.amp_general, &mut delta);
    plant(&sc.undesired_indices, sc.amp_undesired, &mut delta);

    if sc.noise_sigma > 0.0 {
        for i in 0..sc.d {
            for j in 0..sc.k {
                let g: f64 = StandardNormal.sample(&mut rng);
                let t = delta.at(i, j) + sc.noise_sigma * g;
                delta.set(i, j, t);
            }
        }
    }

    let truth: SpectrumPositions = sc.undesired_indices.iter().copied().collect();
    Ok((base.into_tensor(), delta.into_tensor(), truth))
}

/// Outcome of running SVD → project → filter on a planted scenario.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationRecord {
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub xi_fraction: f64,
    pub xi_value: f64,
    pub margin_satisfied: bool,
    pub kept_count: usize,
    pub truth_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub undesired_energy_kept_fraction: f64,
    pub general_energy_kept_fraction: f64,
}

impl SeparationRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

/// Run the separation pipeline on a scenario and score the kept positions
/// against the planted truth.
pub fn evaluate_separation(sc: &PlantedScenario, xi_fraction: f64) -> Result<SeparationRecord> {
    if xi_fraction.is_nan() || xi_fraction < 0.0 {
        return Err(Error::InvalidArgument {
            reason: format!("xi_fraction must be >= 0, got {xi_fraction}"),
        });
    }
    let (base, delta, truth) = build_scenario(sc)?;
    let basis = thin_svd(&base, "synthetic")?;
    let spectrum = project_delta(&basis, &delta)?;
    let filtered = filter_spectrum(&spectrum, xi_fraction)?;
    let xi_value = xi_fraction * spectrum.max_abs();

    let r = sc.rank();
    let coeff = |t: &DenseTensor, i: usize, j: usize| t.data()[i * r + j];

    let mut kept = BTreeSet::new();
    for i in 0..r {
        for j in 0..r {
            if coeff(spectrum.coeffs(), i, j).abs() >= xi_value {
                kept.insert((i, j));
            }
        }
    }

    let true_kept = kept.intersection(&truth).count();
    let precision = if kept.is_empty() {
        1.0
    } else {
        true_kept as f64 / kept.len() as f64
    };
    let recall = if truth.is_empty() {
        1.0
    } else {
        true_kept as f64 / truth.len() as f64
    };

    let energy = |positions: &[(usize, usize)], t: &DenseTensor| {
        positions
            .iter()
            .map(|&(i, j)| {
                let v = coeff(t, i, j);
                v * v
            })
            .sum::<f64>()
    };
    let und: Vec<(usize, usize)> = truth.iter().copied().collect();
    let und_total = energy(&und, spectrum.coeffs());
    let und_kept = energy(&und, filtered.coeffs());
    let gen_total = energy(&sc.general_indices, spectrum.coeffs());
    let gen_kept = energy(&sc.general_indices, filtered.coeffs());
    let fraction = |kept: f64, total: f64| if total == 0.0 { 0.0 } else { kept / total };

    Ok(SeparationRecord {
        d: sc.d,
        k: sc.k,
        seed: sc.seed,
        xi_fraction,
        xi_value,
        margin_satisfied: sc.margin_satisfied(xi_fraction),
        kept_count: kept.len(),
        truth_count: truth.len(),
        precision,
        recall,
        undesired_energy_kept_fraction: fraction(und_kept, und_total),
        general_energy_kept_fraction: fraction(gen_kept, gen_total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> PlantedScenario {
        PlantedScenario {
            d: 12,
            k: 12,
            seed: 42,
            general_indices: vec![(1, 1), (3, 4), (5, 2)],
            undesired_indices: vec![(0, 0), (2, 5)],
            amp_general: 0.01,
            amp_undesired: 1.0,
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn validation_catches_overlap_and_bad_amps() {
        let mut sc = scenario();
        sc.undesired_indices.push((1, 1));
        assert!(sc.validate().is_err());

        let mut sc = scenario();
        sc.amp_general = 2.0;
        assert!(sc.validate().is_err());

        let mut sc = scenario();
        sc.general_indices.push((20, 0));
        assert!(sc.validate().is_err());
    }

    #[test]
    fn single_planted_component_is_rank_one() {
        let sc = PlantedScenario {
            d: 6,
            k: 6,
            seed: 7,
            general_indices: vec![],
            undesired_indices: vec![(0, 0)],
            amp_general: 0.5,
            amp_undesired: 1.0,
            noise_sigma: 0.0,
        };
        let (_, delta, _) = build_scenario(&sc).unwrap();
        let basis = thin_svd(&delta, "delta").unwrap();
        let s = basis.singular_values();
        assert!((s[0] - 1.0).abs() < 1e-10, "top singular value {}", s[0]);
        for &v in &s[1..] {
            assert!(v < 1e-10, "trailing singular value {v}");
        }
    }

    #[test]
    fn empty_plant_no_noise_gives_zero_delta() {
        let sc = PlantedScenario {
            d: 5,
            k: 7,
            seed: 1,
            general_indices: vec![],
            undesired_indices: vec![(0, 0)],
            amp_general: 0.1,
            amp_undesired: 1.0,
            noise_sigma: 0.0,
        };
        // build once to sanity-check, then strip the planting
        let stripped = PlantedScenario {
            undesired_indices: vec![],
            general_indices: vec![],
            ..sc
        };
        // validate() requires amp ordering only; empty index sets are fine
        let (_, delta, truth) = build_scenario(&stripped).unwrap();
        assert!(truth.is_empty());
        assert!(delta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let sc = scenario();
        let (b1, d1, _) = build_scenario(&sc).unwrap();
        let (b2, d2, _) = build_scenario(&sc).unwrap();
        assert_eq!(b1.data(), b2.data());
        assert_eq!(d1.data(), d2.data());
    }

    #[test]
    fn coefficient_structure_survives_reseeding() {
        // Different seeds give different bases but the same planted
        // coefficient magnitudes after projection.
        for seed in [42, 1234] {
            let sc = PlantedScenario { seed, ..scenario() };
            let (base, delta, _) = build_scenario(&sc).unwrap();
            let basis = thin_svd(&base, "base").unwrap();
            let spectrum = project_delta(&basis, &delta).unwrap();
            let r = sc.rank();
            for &(i, j) in &sc.undesired_indices {
                let c = spectrum.coeffs().data()[i * r + j].abs();
                assert!(
                    (c - sc.amp_undesired).abs() < 1e-9,
                    "seed {seed}: |coeff| = {c}"
                );
            }
            for &(i, j) in &sc.general_indices {
                let c = spectrum.coeffs().data()[i * r + j].abs();
                assert!(
                    (c - sc.amp_general).abs() < 1e-9,
                    "seed {seed}: |coeff| = {c}"
                );
            }
        }
    }

    #[test]
    fn noise_free_separation_is_perfect() {
        let record = evaluate_separation(&scenario(), 0.03).unwrap();
        assert!(record.margin_satisfied);
        assert_eq!(record.precision, 1.0);
        assert_eq!(record.recall, 1.0);
        assert_eq!(record.undesired_energy_kept_fraction, 1.0);
        assert_eq!(record.general_energy_kept_fraction, 0.0);
    }

    #[test]
    fn zero_fraction_keeps_everything() {
        let sc = scenario();
        let record = evaluate_separation(&sc, 0.0).unwrap();
        let r2 = (sc.rank() * sc.rank()) as f64;
        assert_eq!(record.recall, 1.0);
        assert!((record.precision - record.truth_count as f64 / r2).abs() < 1e-12);
        assert_eq!(record.kept_count, sc.rank() * sc.rank());
    }

    #[test]
    fn rectangular_scenarios_work() {
        let sc = PlantedScenario {
            d: 9,
            k: 14,
            ..scenario()
        };
        let record = evaluate_separation(&sc, 0.03).unwrap();
        assert_eq!(record.precision, 1.0);
        assert_eq!(record.recall, 1.0);
    }
}
