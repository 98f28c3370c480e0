//! Group-dependent under-reporting and seeded train/test splits.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datamodel::{Dataset, UnderReportingConfig};
use crate::error::{Error, Result};
use crate::matrix::Mask;
use crate::rng::{seeded_rng, CellStream};

/// Zeroes entries of one feature column independently per row, with the
/// probability set by the row's group.
///
/// The pre-corruption values are kept in `Z` (the current `X` is promoted
/// when `Z` is absent). A previously stored mask is combined with the new
/// draws, so repeated application only ever hides more cells. The draw for
/// row `i` is a pure function of `(seed, column, i)`.
pub fn inject_underreporting(d: &Dataset, cfg: &UnderReportingConfig) -> Result<Dataset> {
    cfg.validate_for(d)?;
    if d.g.len() != d.n() {
        return Err(Error::Dimension(format!("{} groups for {} rows", d.g.len(), d.n())));
    }
    let j = cfg.feature_index;
    let mut out = d.clone();
    let z = out.z.get_or_insert_with(|| d.x.clone()).clone();
    let mask = out.xi_mask.get_or_insert_with(|| Mask::ones(d.n(), d.d()));
    let mut stream = CellStream::new(cfg.seed, j as u64);
    for i in 0..d.n() {
        let rate = cfg.rate(d.g[i]);
        let keep = stream.uniform(i as u64) >= rate;
        if !keep {
            mask.set(i, j, 0);
        }
        out.x.set(i, j, z.get(i, j) * f64::from(mask.get(i, j)));
    }
    let key = format!("corruption.{j}");
    out.provenance.insert(
        key,
        format!("rate_g0={},rate_g1={},seed={}", cfg.rate_g0, cfg.rate_g1, cfg.seed),
    );
    Ok(out)
}

/// Number of training rows: `⌈n·(1 - test_frac)⌉`.
pub fn train_size(n: usize, test_frac: f64) -> Result<usize> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction {test_frac} outside (0,1)")));
    }
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, have: n });
    }
    // the small offset keeps exact products such as 10·0.8 from rounding up
    let n_train = libm::ceil(n as f64 * (1.0 - test_frac) - 1e-9) as usize;
    Ok(n_train.clamp(1, n - 1))
}

/// Sorted train and test row indices from a seeded uniform shuffle.
pub fn split_indices(n: usize, test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = train_size(n, test_frac)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(d: &Dataset, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(d.n(), test_frac, seed)?;
    let mut a = d.select_rows(&train);
    let mut b = d.select_rows(&test);
    a.provenance.insert("split".to_string(), format!("train,test_frac={test_frac},seed={seed}"));
    b.provenance.insert("split".to_string(), format!("test,test_frac={test_frac},seed={seed}"));
    Ok((a, b))
}
