//! Domain adaptation by label transfer through the transport map.
//!
//! Target points become atoms with uniform masses; the source points form
//! the source measure. After training, every source point is mapped to a
//! target atom and inherits that atom's ground-truth label; accuracy is the
//! fraction of source points whose inherited label matches their own. Label
//! transfer is nearest-atom by construction: the map is piecewise constant
//! onto atoms.

use rand::Rng;

use crate::envelope::assign_cells;
use crate::error::{invalid_input, Result};
use crate::rng::stream_rng;
use crate::solver::{predict_heights, train_height_net, TrainConfig, TrainOutcome};
use crate::source::SourceSpec;
use crate::synth::LabeledPoints;
use crate::target::DiscreteTarget;

#[derive(Debug, Clone, Default)]
pub struct DomainAdaptOptions {
    pub train: TrainConfig,
    /// Seed for choosing the trained subset in the partial variant.
    pub subset_seed: u64,
}

#[derive(Debug)]
pub struct AdaptOutcome {
    /// Fraction of source points whose transferred label matches their own.
    pub accuracy: f64,
    /// Mapped coordinates of every source point, flat row-major.
    pub mapped_points: Vec<f64>,
    /// Transferred label per source point.
    pub transferred_labels: Vec<usize>,
    pub train: TrainOutcome,
}

#[derive(Debug)]
pub struct PartialAdaptOutcome {
    /// Accuracy of the map over the trained atom subset only.
    pub accuracy_part: f64,
    /// Accuracy after predicting heights for every target atom.
    pub accuracy_all: f64,
    /// Indices of the trained atoms within the target set.
    pub trained_indices: Vec<usize>,
    pub train: TrainOutcome,
}

fn check_domains(source: &LabeledPoints, target: &LabeledPoints) -> Result<()> {
    if source.is_empty() || target.is_empty() {
        return Err(invalid_input("source and target must be non-empty"));
    }
    if source.points.len() != source.labels.len() * 2
        || target.points.len() != target.labels.len() * 2
    {
        return Err(invalid_input("labeled point sets must be 2D with one label per point"));
    }
    Ok(())
}

fn label_accuracy(
    source: &LabeledPoints,
    target_labels: &[usize],
    winners: &[usize],
) -> (f64, Vec<usize>) {
    let transferred: Vec<usize> = winners.iter().map(|&w| target_labels[w]).collect();
    let hits = transferred
        .iter()
        .zip(&source.labels)
        .filter(|(t, s)| t == s)
        .count();
    (hits as f64 / source.labels.len() as f64, transferred)
}

/// Adapt `source` onto `target`: train heights for the target atoms, map
/// every source point, transfer labels, score.
pub fn domain_adapt(
    source: &LabeledPoints,
    target: &LabeledPoints,
    opts: &DomainAdaptOptions,
) -> Result<AdaptOutcome> {
    check_domains(source, target)?;
    let atoms = DiscreteTarget::with_uniform_masses(target.points.clone(), 2)?;
    let measure = SourceSpec::explicit(source.points.clone(), 2)?;
    let train = train_height_net(&atoms, &measure, &opts.train)?;
    let winners = assign_cells(&source.points, &atoms, &train.heights)?;
    let (accuracy, transferred_labels) = label_accuracy(source, &target.labels, &winners);
    let mut mapped_points = Vec::with_capacity(source.points.len());
    for &w in &winners {
        mapped_points.extend_from_slice(atoms.atom(w));
    }
    Ok(AdaptOutcome { accuracy, mapped_points, transferred_labels, train })
}

/// Train on a random `ratio` fraction of the target atoms, then score both
/// the partial map (trained atoms only) and the full map with predicted
/// heights over every atom.
pub fn domain_adapt_partial(
    source: &LabeledPoints,
    target: &LabeledPoints,
    ratio: f64,
    opts: &DomainAdaptOptions,
) -> Result<PartialAdaptOutcome> {
    check_domains(source, target)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid_input(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    let n = target.labels.len();
    let subset_len = (ratio * n as f64).round() as usize;
    if subset_len < 2 {
        return Err(invalid_input(format!(
            "ratio {ratio} keeps {subset_len} of {n} atoms; at least 2 are required"
        )));
    }
    let trained_indices = sample_indices(n, subset_len, opts.subset_seed);

    let full_atoms = DiscreteTarget::with_uniform_masses(target.points.clone(), 2)?;
    let part_atoms = full_atoms.subset(&trained_indices)?;
    let part_labels: Vec<usize> = trained_indices.iter().map(|&i| target.labels[i]).collect();
    let measure = SourceSpec::explicit(source.points.clone(), 2)?;

    let train = train_height_net(&part_atoms, &measure, &opts.train)?;

    let winners_part = assign_cells(&source.points, &part_atoms, &train.heights)?;
    let (accuracy_part, _) = label_accuracy(source, &part_labels, &winners_part);

    let full_heights = predict_heights(&train.net, &full_atoms)?;
    let winners_all = assign_cells(&source.points, &full_atoms, &full_heights)?;
    let (accuracy_all, _) = label_accuracy(source, &target.labels, &winners_all);

    Ok(PartialAdaptOutcome { accuracy_part, accuracy_all, trained_indices, train })
}

/// `k` distinct indices out of `n`, by seeded partial Fisher-Yates.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0x5e1ec7);
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut picked = order[..k.min(n)].to_vec();
    picked.sort_unstable();
    picked
}
