//! Stratified train/test splitting by sample id.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::manifest::{Entry, Manifest};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Stratum of an entry: its patch class, else its label vector.
pub fn class_key(e: &Entry) -> String {
    match e.class {
        Some(c) => format!("class-{c}"),
        None => e.labels.iter().map(|l| l.to_string()).collect(),
    }
}

/// Splits indices `0..keys.len()` so each stratum sends
/// `round(fraction · size)` members to the test side.
pub fn stratified_indices(keys: &[String], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction {fraction} is not in (0, 1)")));
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        strata.entry(k.as_str()).or_default().push(i);
    }
    let mut rng = seeded(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (key, mut members) in strata {
        if members.len() < 2 {
            return Err(Error::config(format!("class {key:?} has fewer than 2 samples")));
        }
        members.shuffle(&mut rng);
        let n_test = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(manifest: &Manifest, fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    let keys: Vec<String> = manifest.entries.iter().map(class_key).collect();
    let (train, test) = stratified_indices(&keys, fraction, seed)?;
    let pick = |idx: &[usize]| Manifest {
        manifest_version: manifest.manifest_version,
        metadata: manifest.metadata.clone(),
        entries: idx.iter().map(|&i| manifest.entries[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&test)))
}
