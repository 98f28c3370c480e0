//! Top-share thresholds, group selection rates and the excess selection rate
//! between a model trained on observed features and a reference model.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datamodel::{check_grid, check_share, ExcessSelectionResult};
use crate::error::{Error, Result};

/// A threshold selecting a top share, with the resulting selected count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// `⌊n·C⌋`, the count a tie-free ranking selects.
    pub target_count: usize,
    pub selected: usize,
    /// More than `target_count` rows sit at or above `value` because of ties.
    pub tie_flag: bool,
}

/// Predictions sorted once for repeated thresholding.
struct Ranked {
    desc: Vec<f64>,
}

impl Ranked {
    fn new(predictions: &[f64]) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::InvalidArgument("no predictions to threshold".into()));
        }
        if let Some(i) = predictions.iter().position(|p| p.is_nan()) {
            return Err(Error::InvalidArgument(format!("prediction {i} is NaN")));
        }
        let mut desc = predictions.to_vec();
        desc.sort_by(|a, b| b.total_cmp(a));
        Ok(Ranked { desc })
    }

    fn threshold(&self, c: f64) -> Threshold {
        let n = self.desc.len();
        // tolerance keeps n·C = 2 from flooring to 1 when C carries rounding error
        let k = libm::floor(n as f64 * c + 1e-9) as usize;
        if k == 0 {
            return Threshold {
                value: f64::INFINITY,
                target_count: 0,
                selected: 0,
                tie_flag: false,
            };
        }
        let value = self.desc[k - 1];
        let selected = self.desc.partition_point(|&p| p >= value);
        Threshold {
            value,
            target_count: k,
            selected,
            tie_flag: selected > k,
        }
    }
}

/// Smallest observed prediction (or `+∞`) whose upper set holds at most
/// `⌊n·C⌋` rows, all ties at the threshold included.
pub fn threshold_for_rate(predictions: &[f64], c: f64) -> Result<Threshold> {
    check_share(c)?;
    Ok(Ranked::new(predictions)?.threshold(c))
}

/// Share of each group with a prediction at or above `t`.
pub fn selection_rates(predictions: &[f64], groups: &[u8], t: f64) -> Result<[f64; 2]> {
    if predictions.len() != groups.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} group labels",
            predictions.len(),
            groups.len()
        )));
    }
    let mut hits = [0usize; 2];
    let mut sizes = [0usize; 2];
    for (&p, &g) in predictions.iter().zip(groups) {
        if g > 1 {
            return Err(Error::InvalidArgument(format!("group {g} is not binary")));
        }
        sizes[usize::from(g)] += 1;
        if p >= t {
            hits[usize::from(g)] += 1;
        }
    }
    for g in 0..2u8 {
        if sizes[usize::from(g)] == 0 {
            return Err(Error::EmptyGroup(g));
        }
    }
    Ok([hits[0] as f64 / sizes[0] as f64, hits[1] as f64 / sizes[1] as f64])
}

fn excess_from_ranked(
    corrupted: (&[f64], &Ranked),
    reference: (&[f64], &Ranked),
    groups: &[u8],
    c: f64,
) -> Result<ExcessSelectionResult> {
    let tc = corrupted.1.threshold(c);
    let tr = reference.1.threshold(c);
    let rc = selection_rates(corrupted.0, groups, tc.value)?;
    let rr = selection_rates(reference.0, groups, tr.value)?;
    let n = groups.len() as f64;
    Ok(ExcessSelectionResult {
        c,
        delta: [rc[0] - rr[0], rc[1] - rr[1]],
        rate_corrupted: rc,
        rate_reference: rr,
        threshold_corrupted: tc.value,
        threshold_reference: tr.value,
        tie_flag: tc.tie_flag || tr.tie_flag,
        group_share: groups.iter().filter(|&&g| g == 1).count() as f64 / n,
        selected_share: [tc.selected as f64 / n, tr.selected as f64 / n],
    })
}

fn aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "{} corrupted predictions but {} reference predictions",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `Δ(g, C)`: group selection rate when the top share `C` is chosen by
/// `pred_corrupted`, minus the rate when chosen by `pred_reference`. Each
/// vector gets its own threshold.
pub fn excess_selection_rate(
    pred_corrupted: &[f64],
    pred_reference: &[f64],
    groups: &[u8],
    c: f64,
) -> Result<ExcessSelectionResult> {
    check_share(c)?;
    aligned(pred_corrupted, pred_reference)?;
    let a = Ranked::new(pred_corrupted)?;
    let b = Ranked::new(pred_reference)?;
    excess_from_ranked((pred_corrupted, &a), (pred_reference, &b), groups, c)
}

/// [`excess_selection_rate`] over an increasing grid of shares.
pub fn excess_curve(
    pred_corrupted: &[f64],
    pred_reference: &[f64],
    groups: &[u8],
    grid: &[f64],
) -> Result<Vec<ExcessSelectionResult>> {
    check_grid(grid)?;
    aligned(pred_corrupted, pred_reference)?;
    let a = Ranked::new(pred_corrupted)?;
    let b = Ranked::new(pred_reference)?;
    grid.iter()
        .map(|&c| excess_from_ranked((pred_corrupted, &a), (pred_reference, &b), groups, c))
        .collect()
}

/// `r·Δ(1,C) + (1-r)·Δ(0,C)`; zero up to the tie slack.
pub fn mass_balance(res: &ExcessSelectionResult) -> f64 {
    res.group_share * res.delta[1] + (1.0 - res.group_share) * res.delta[0]
}

/// How far the mass balance may drift: the difference of the two selected
/// shares, which is non-zero only when ties push one of them above `⌊n·C⌋/n`.
pub fn mass_balance_slack(res: &ExcessSelectionResult) -> f64 {
    libm::fabs(res.selected_share[0] - res.selected_share[1])
}

/// Sign of `Δ(g,C) - Δ(1-g,C)` for populations where features are
/// independent of the group.
pub fn independent_case_sign(res: &ExcessSelectionResult, g: u8) -> i8 {
    let g = usize::from(g.min(1));
    let diff = res.delta[g] - res.delta[1 - g];
    if diff > 0.0 {
        1
    } else if diff < 0.0 {
        -1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, standard_normal, uniform};
    use proptest::prelude::*;

    #[test]
    fn distinct_values() {
        let p: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = threshold_for_rate(&p, 0.2).unwrap();
        assert_eq!((t.value, t.selected, t.tie_flag), (9.0, 2, false));
    }

    #[test]
    fn total_tie() {
        let t = threshold_for_rate(&[3.0; 10], 0.2).unwrap();
        assert_eq!((t.value, t.selected, t.tie_flag), (3.0, 10, true));
    }

    #[test]
    fn tiny_share_selects_nothing() {
        let t = threshold_for_rate(&[1.0, 2.0, 3.0], 0.2).unwrap();
        assert_eq!(t.value, f64::INFINITY);
        assert_eq!(selection_rates(&[1.0, 2.0, 3.0], &[0, 1, 1], t.value).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(threshold_for_rate(&[], 0.2).is_err());
        assert!(threshold_for_rate(&[1.0], 1.0).is_err());
        assert_eq!(selection_rates(&[1.0, 2.0], &[0, 0], 0.0), Err(Error::EmptyGroup(1)));
        assert!(excess_selection_rate(&[1.0, 2.0], &[1.0], &[0, 1], 0.5).is_err());
    }

    #[test]
    fn extreme_thresholds() {
        let p = [0.1, 0.5, 0.9, 0.3];
        let g = [0, 1, 0, 1];
        assert_eq!(selection_rates(&p, &g, -1.0).unwrap(), [1.0, 1.0]);
        assert_eq!(selection_rates(&p, &g, 2.0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn normal_quantile_threshold() {
        let mut rng = seeded_rng(21);
        let p: Vec<f64> = (0..1_000_000).map(|_| standard_normal(&mut rng)).collect();
        let t = threshold_for_rate(&p, 0.05).unwrap();
        assert!((t.value - 1.644_853_6).abs() < 0.01);
    }

    #[test]
    fn identical_predictions_give_zero_curve() {
        let mut rng = seeded_rng(2);
        let p: Vec<f64> = (0..1000).map(|_| standard_normal(&mut rng)).collect();
        let g: Vec<u8> = (0..1000).map(|i| (i % 3 == 0) as u8).collect();
        let curve = excess_curve(&p, &p, &g, &crate::datamodel::SelectionPolicy::decile_grid()).unwrap();
        assert_eq!(curve.len(), 9);
        assert!(curve.iter().all(|r| r.delta == [0.0, 0.0]));
        let single = excess_curve(&p, &p, &g, &[0.3]).unwrap();
        assert_eq!(single[0], excess_selection_rate(&p, &p, &g, 0.3).unwrap());
    }

    proptest! {
        #[test]
        fn mass_balance_within_slack(seed in any::<u64>(), c in 0.01f64..0.99, ties in any::<bool>()) {
            let mut rng = seeded_rng(seed);
            let n = 300;
            let round = |v: f64| if ties { libm::round(v * 2.0) } else { v };
            let a: Vec<f64> = (0..n).map(|_| round(standard_normal(&mut rng))).collect();
            let b: Vec<f64> = (0..n).map(|_| round(standard_normal(&mut rng))).collect();
            let g: Vec<u8> = (0..n).map(|i| u8::from(i < 2 || (i >= 4 && uniform(&mut rng) < 0.4))).collect();
            let res = excess_selection_rate(&a, &b, &g, c).unwrap();
            let slack = mass_balance_slack(&res);
            prop_assert!((mass_balance(&res) - (res.selected_share[0] - res.selected_share[1])).abs() < 1e-12);
            prop_assert!(mass_balance(&res).abs() <= slack + 1e-12);
            if !res.tie_flag {
                prop_assert!(mass_balance(&res).abs() < 1e-12);
            }
            for d in res.delta {
                prop_assert!((-1.0..=1.0).contains(&d));
            }
        }

        #[test]
        fn selected_fraction_near_share(seed in any::<u64>(), c in 0.01f64..0.99) {
            let mut rng = seeded_rng(seed);
            let p: Vec<f64> = (0..257).map(|_| libm::round(standard_normal(&mut rng) * 4.0)).collect();
            let t = threshold_for_rate(&p, c).unwrap();
            let n = p.len() as f64;
            let tie_mass = p.iter().filter(|&&v| v == t.value).count() as f64 / n;
            prop_assert!((t.selected as f64 / n - c).abs() <= tie_mass.max(1.0 / n) + 1e-12);
            prop_assert!(t.selected as f64 <= n * c + 1e-9 || t.tie_flag);
        }

        #[test]
        fn rates_non_increasing_in_threshold(seed in any::<u64>(), t1 in -3.0f64..3.0, dt in 0.0f64..2.0) {
            let mut rng = seeded_rng(seed);
            let p: Vec<f64> = (0..200).map(|_| standard_normal(&mut rng)).collect();
            let g: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
            let lo = selection_rates(&p, &g, t1).unwrap();
            let hi = selection_rates(&p, &g, t1 + dt).unwrap();
            prop_assert!(hi[0] <= lo[0] && hi[1] <= lo[1]);
        }
    }

    #[test]
    fn independent_sign() {
        let res = ExcessSelectionResult {
            c: 0.2,
            delta: [0.01, -0.03],
            rate_corrupted: [0.0; 2],
            rate_reference: [0.0; 2],
            threshold_corrupted: 0.0,
            threshold_reference: 0.0,
            tie_flag: false,
            group_share: 0.25,
            selected_share: [0.2, 0.2],
        };
        assert_eq!(independent_case_sign(&res, 1), -1);
        assert_eq!(independent_case_sign(&res, 0), 1);
    }
}
