use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lira::{ObservationScale, MIN_SIDE};
use crate::dataset::Dataset;
use crate::diff_models::{train_report, Architecture, DiffModel, LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_SHADOWS: usize = 8;

/// What every shadow (and the audited target) is trained as.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub arch: Architecture,
    pub loss: LossKind,
    pub train: TrainConfig,
}

impl ModelTemplate {
    /// Trains on `data`, initializing from `seed`. Non-convergence is an error.
    pub fn train_on(&self, data: &Dataset, seed: u64) -> Result<DiffModel> {
        let init = DiffModel::init(self.arch.clone(), seed)?;
        let out = train_report(&init, self.loss, data, &self.train)?;
        if !out.converged {
            return Err(Error::NonConvergence {
                what: "training",
                iterations: out.epochs,
                achieved: out.model.meta.grad_norm.unwrap_or(f64::NAN),
            });
        }
        Ok(out.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowEnsemble {
    /// `membership[s][i]`: sample `i` in shadow `s`'s training set.
    pub membership: Vec<Vec<bool>>,
    /// `losses[s][i]`: shadow `s`'s loss on sample `i`.
    pub losses: Vec<Vec<f64>>,
    pub fraction: f64,
    pub seed: u64,
    /// Shadows discarded after failing to converge.
    pub dropped: usize,
}

impl ShadowEnsemble {
    pub fn k(&self) -> usize {
        self.membership.len()
    }

    pub fn n(&self) -> usize {
        self.membership.first().map_or(0, Vec::len)
    }

    pub fn in_count(&self, i: usize) -> usize {
        self.membership.iter().filter(|m| m[i]).count()
    }

    /// Transformed in- and out-observations for sample `i`, optionally
    /// skipping one shadow.
    pub fn observations(&self, i: usize, scale: ObservationScale, skip: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (s, (m, l)) in self.membership.iter().zip(&self.losses).enumerate() {
            if Some(s) == skip {
                continue;
            }
            let v = scale.apply(l[i]);
            if m[i] {
                ins.push(v);
            } else {
                outs.push(v);
            }
        }
        (ins, outs)
    }
}

/// `k` subsets of size `round(fraction·n)`, adjusted until every sample is
/// in at least three and out of at least three. Independent draws are
/// repaired by membership swaps inside a shadow, which keep every subset the
/// same size.
pub fn membership_masks(n: usize, k: usize, fraction: f64, seed: u64) -> Result<Vec<Vec<bool>>> {
    let size = (fraction * n as f64).round() as usize;
    if size == 0 || size >= n {
        return Err(Error::InvalidArgument(format!("fraction {fraction} leaves an empty side for n = {n}")));
    }
    let infeasible = || Error::InvalidArgument(format!("cannot give every sample {MIN_SIDE} in and out of {k} shadows"));
    if k < 2 * MIN_SIDE || size * k < MIN_SIDE * n || (n - size) * k < MIN_SIDE * n {
        return Err(infeasible());
    }
    let base = rng::derive_seed(seed, "mia_audit.masks");
    let mut masks: Vec<Vec<bool>> = (0..k)
        .map(|s| {
            let mut r = rng::stream(base, "draw", s as u64);
            let mut m = vec![false; n];
            for i in sample(&mut r, n, size) {
                m[i] = true;
            }
            m
        })
        .collect();
    let mut count: Vec<usize> = (0..n).map(|i| masks.iter().filter(|m| m[i]).count()).collect();
    let mut r = rng::stream(base, "repair", 0);
    for i in 0..n {
        while count[i] < MIN_SIDE || k - count[i] < MIN_SIDE {
            let want_in = count[i] < MIN_SIDE;
            let mut shadows: Vec<usize> = (0..k).filter(|s| masks[*s][i] != want_in).collect();
            shadows.shuffle(&mut r);
            let start = r.random_range(0..n);
            let swap = shadows.iter().find_map(|&s| {
                (0..n).map(|o| (start + o) % n).find(|&j| {
                    j != i
                        && masks[s][j] == want_in
                        && if want_in { count[j] > MIN_SIDE } else { k - count[j] > MIN_SIDE }
                }).map(|j| (s, j))
            });
            let Some((s, j)) = swap else {
                return Err(infeasible());
            };
            masks[s][i] = want_in;
            masks[s][j] = !want_in;
            if want_in {
                count[i] += 1;
                count[j] -= 1;
            } else {
                count[i] -= 1;
                count[j] += 1;
            }
        }
    }
    Ok(masks)
}

/// Trains `k` shadows on random subsets and records every per-sample loss.
pub fn train_shadows(data: &Dataset, template: &ModelTemplate, k: usize, fraction: f64, seed: u64) -> Result<ShadowEnsemble> {
    if k < MIN_SHADOWS {
        return Err(Error::TooFewShadows {
            survived: k,
            required: MIN_SHADOWS,
        });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let masks = membership_masks(data.n(), k, fraction, seed)?;
    let trained: Vec<Result<Option<Vec<f64>>>> = masks
        .par_iter()
        .enumerate()
        .map(|(s, mask)| {
            let idx: Vec<usize> = (0..data.n()).filter(|i| mask[*i]).collect();
            let init_seed = rng::derive_seed(seed, &format!("mia_audit.shadow.{s}"));
            match template.train_on(&data.subset(&idx), init_seed) {
                Ok(model) => Ok(Some(model.sample_losses(template.loss, data)?)),
                Err(Error::NonConvergence { achieved, .. }) => {
                    log::warn!("shadow {s} did not converge (gradient norm {achieved:e}); dropped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut membership = Vec::new();
    let mut losses = Vec::new();
    let mut dropped = 0;
    for (mask, r) in masks.into_iter().zip(trained) {
        match r? {
            Some(l) => {
                membership.push(mask);
                losses.push(l);
            }
            None => dropped += 1,
        }
    }
    if membership.len() < MIN_SHADOWS {
        return Err(Error::TooFewShadows {
            survived: membership.len(),
            required: MIN_SHADOWS,
        });
    }
    Ok(ShadowEnsemble {
        membership,
        losses,
        fraction,
        seed,
        dropped,
    })
}
