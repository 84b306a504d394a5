use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ls_estimate, synth_channel, ComplexGrid, LinkConfig, ProfileSpec};
use crate::error::{Error, Result};

/// A clean channel, its LS estimate, and how they were generated.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub h_clean: ComplexGrid,
    pub h_ls: ComplexGrid,
    pub snr_db: f64,
    pub profile_name: String,
    pub n_rb: usize,
    /// Seconds.
    pub delay_spread: f64,
    pub seed: u64,
}

impl ChannelSample {
    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            profile: self.profile_name.clone(),
            n_rb: self.n_rb,
            snr_db: OrderedFloat(self.snr_db),
        }
    }

    pub fn config_tuple(&self) -> ConfigTuple {
        ConfigTuple {
            profile: self.profile_name.clone(),
            n_rb: self.n_rb,
            delay_spread: OrderedFloat(self.delay_spread),
        }
    }
}

/// Reporting group: (profile, RB count, SNR).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub profile: String,
    pub n_rb: usize,
    pub snr_db: OrderedFloat<f64>,
}

/// Channel configuration that decides whether an evaluation is zero-shot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigTuple {
    pub profile: String,
    pub n_rb: usize,
    pub delay_spread: OrderedFloat<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<ChannelSample>,
    summary: BTreeMap<GroupKey, usize>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<ChannelSample>) -> Self {
        let mut summary = BTreeMap::new();
        for s in &samples {
            *summary.entry(s.group_key()).or_insert(0) += 1;
        }
        Self { samples, summary }
    }

    pub fn samples(&self) -> &[ChannelSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ChannelSample> {
        self.samples
    }

    pub fn summary(&self) -> &BTreeMap<GroupKey, usize> {
        &self.summary
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn config_tuples(&self) -> BTreeSet<ConfigTuple> {
        self.samples.iter().map(ChannelSample::config_tuple).collect()
    }

    /// Splits off roughly one sample in ten for validation, chosen by a hash
    /// of the sample seed so the split is independent of ordering.
    pub fn split_validation(&self) -> (Dataset, Dataset) {
        let (val, train): (Vec<_>, Vec<_>) = self.samples.iter().cloned().partition(|s| is_validation_seed(s.seed));
        (Dataset::from_samples(train), Dataset::from_samples(val))
    }
}

pub fn is_validation_seed(seed: u64) -> bool {
    splitmix64(seed ^ 0x5851_F42D_4C95_7F2D).is_multiple_of(10)
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `counter`-th sample (0-based, profile-major then link then
/// repetition): the `counter + 1`-th output of a SplitMix64 stream started
/// at `master_seed`.
pub fn sample_seed(master_seed: u64, counter: u64) -> u64 {
    splitmix64(master_seed.wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Generates one sample from its own seed.
pub fn generate_sample(profile: &ProfileSpec, link: &LinkConfig, seed: u64) -> Result<ChannelSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_clean = synth_channel(profile, link, &mut rng)?;
    let h_ls = ls_estimate(&h_clean, link.snr_db, &mut rng)?;
    Ok(ChannelSample {
        h_clean,
        h_ls,
        snr_db: link.snr_db,
        profile_name: profile.name.clone(),
        n_rb: link.n_rb,
        delay_spread: profile.delay_spread,
        seed,
    })
}

/// Cartesian product of profiles x links, `samples_per_config` each.
pub fn build_dataset(
    profiles: &[ProfileSpec],
    links: &[LinkConfig],
    samples_per_config: usize,
    master_seed: u64,
) -> Result<Dataset> {
    if samples_per_config == 0 {
        return Err(Error::config("channel.samples_per_config", "must be positive"));
    }
    if profiles.is_empty() || links.is_empty() {
        return Err(Error::config("channel", "profile and link lists must be non-empty"));
    }
    for p in profiles {
        p.validate()?;
    }
    for l in links {
        l.validate()?;
    }
    let jobs: Vec<(usize, usize, u64)> = profiles
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| (0..links.len()).map(move |li| (pi, li)))
        .flat_map(|(pi, li)| (0..samples_per_config).map(move |r| (pi, li, r as u64)))
        .enumerate()
        .map(|(counter, (pi, li, _))| (pi, li, sample_seed(master_seed, counter as u64)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(pi, li, seed)| generate_sample(&profiles[pi], &links[li], seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_samples(samples))
}
