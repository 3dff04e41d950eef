use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Image-level random partition; returns ascending `(train, test)` index lists.
///
/// The training side gets `round(ratio * n)` images and both sides must be nonempty.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Size(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Size(format!("{n} samples cannot be split {ratio}:{} with both sides nonempty", 1.0 - ratio)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_dataset<S: Clone>(samples: &[S], ratio: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    let (train, test) = split_indices(samples.len(), ratio, seed)?;
    Ok((train.iter().map(|&i| samples[i].clone()).collect(), test.iter().map(|&i| samples[i].clone()).collect()))
}
