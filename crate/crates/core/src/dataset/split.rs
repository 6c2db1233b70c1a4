use super::{DatasetError, Label, Manifest, SampleRecord, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Test-set size for `n` items: `round(fraction * n)`, halves rounded up.
pub fn test_count(n: usize, test_fraction: f64) -> usize {
    ((test_fraction * n as f64) + 0.5).floor() as usize
}

fn check_fraction(test_fraction: f64) -> Result<(), DatasetError> {
    if test_fraction > 0.0 && test_fraction < 1.0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )))
    }
}

fn assign(records: impl IntoIterator<Item = SampleRecord>, split: Split) -> Vec<SampleRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.split = Some(split);
            r
        })
        .collect()
}

/// Shuffles records with a seeded generator and cuts off the test set.
/// Returns `(train, test)`.
pub fn split(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<(Manifest, Manifest), DatasetError> {
    check_fraction(test_fraction)?;
    if manifest.records.iter().any(|r| r.split.is_some()) {
        return Err(DatasetError::AlreadySplit);
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = test_count(manifest.len(), test_fraction);
    let (test_idx, train_idx) = order.split_at(n_test);
    let pick = |idx: &[usize], s: Split| assign(idx.iter().map(|&i| manifest.records[i].clone()), s);
    let mut train = manifest.with_records(pick(train_idx, Split::Train));
    let mut test = manifest.with_records(pick(test_idx, Split::Test));
    train.seed = seed;
    test.seed = seed;
    Ok((train, test))
}

/// Like [`split`], but whole participants go to one side so no speaker
/// appears in both sets. The test fraction applies to participants.
pub fn split_by_participant(
    manifest: &Manifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest), DatasetError> {
    check_fraction(test_fraction)?;
    if manifest.records.iter().any(|r| r.split.is_some()) {
        return Err(DatasetError::AlreadySplit);
    }
    let mut participants: Vec<&str> = Vec::new();
    for r in &manifest.records {
        if !participants.contains(&r.participant_id.as_str()) {
            participants.push(&r.participant_id);
        }
    }
    participants.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = test_count(participants.len(), test_fraction);
    let test_ids: std::collections::HashSet<&str> = participants[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = manifest
        .records
        .iter()
        .cloned()
        .partition(|r| test_ids.contains(r.participant_id.as_str()));
    let mut train = manifest.with_records(assign(train, Split::Train));
    let mut test = manifest.with_records(assign(test, Split::Test));
    train.seed = seed;
    test.seed = seed;
    Ok((train, test))
}

/// Duplicates randomly chosen minority-class records until both classes have
/// equal counts. Original records keep their order and come first.
pub fn oversample_minority(train: &Manifest, seed: u64) -> Result<Manifest, DatasetError> {
    let pos = train.count(Label::Depressed);
    let neg = train.count(Label::NonDepressed);
    if pos == 0 || neg == 0 {
        let present = if pos == 0 { Label::NonDepressed } else { Label::Depressed };
        return Err(DatasetError::SingleClass(present));
    }
    let minority = if pos < neg { Label::Depressed } else { Label::NonDepressed };
    let deficit = pos.abs_diff(neg);
    let pool: Vec<&SampleRecord> = train.records.iter().filter(|r| r.label == minority).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = train.records.clone();
    for _ in 0..deficit {
        records.push(pool[rng.gen_range(0..pool.len())].clone());
    }
    Ok(train.with_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(n_pos: usize, n_neg: usize) -> Manifest {
        let records = (0..n_pos + n_neg)
            .map(|i| SampleRecord::new(format!("{i}"), format!("{i}.png"), if i < n_pos { 15 } else { 3 }))
            .collect();
        Manifest::new(records)
    }

    #[test]
    fn rounding_reproduces_reported_test_sizes() {
        assert_eq!(test_count(107, 0.25), 27);
        assert_eq!(test_count(2568, 0.25), 642);
        let (train, test) = split(&manifest(30, 77), 0.25, 7).unwrap();
        assert_eq!((train.len(), test.len()), (80, 27));
    }

    #[test]
    fn deterministic_for_seed() {
        let m = manifest(10, 30);
        assert_eq!(split(&m, 0.3, 42).unwrap(), split(&m, 0.3, 42).unwrap());
        assert_ne!(split(&m, 0.3, 42).unwrap().1, split(&m, 0.3, 43).unwrap().1);
    }

    #[test]
    fn already_split_rejected() {
        let (train, _) = split(&manifest(3, 3), 0.5, 1).unwrap();
        assert!(matches!(split(&train, 0.5, 1), Err(DatasetError::AlreadySplit)));
        assert!(split(&manifest(3, 3), 1.0, 1).is_err());
    }

    #[test]
    fn participant_split_keeps_speakers_together() {
        let mut records = Vec::new();
        for p in 0..20 {
            for s in 0..4 {
                records.push(SampleRecord::new(format!("P{p}"), format!("P{p}_{s}.png"), (p % 24) as u8));
            }
        }
        let (train, test) = split_by_participant(&Manifest::new(records), 0.25, 3).unwrap();
        assert_eq!(test.len(), 5 * 4);
        for r in &test.records {
            assert!(train.records.iter().all(|t| t.participant_id != r.participant_id));
        }
    }

    #[test]
    fn oversampling_table_counts() {
        let out = oversample_minority(&manifest(720, 1848), 9).unwrap();
        assert_eq!(out.count(Label::Depressed), 1848);
        assert_eq!(out.count(Label::NonDepressed), 1848);
        assert_eq!(&out.records[..2568], &manifest(720, 1848).records[..]);
    }

    #[test]
    fn oversampling_small_and_balanced() {
        let out = oversample_minority(&manifest(1, 3), 0).unwrap();
        assert_eq!(out.records.iter().filter(|r| r.participant_id == "0").count(), 3);
        let balanced = manifest(4, 4);
        assert_eq!(oversample_minority(&balanced, 0).unwrap(), balanced);
        assert!(matches!(oversample_minority(&manifest(0, 4), 0), Err(DatasetError::SingleClass(_))));
    }

    proptest! {
        #[test]
        fn split_is_exact_partition(n in 1usize..300, f in 0.01f64..0.99, seed in any::<u64>()) {
            let m = manifest(n / 3, n - n / 3);
            let (train, test) = split(&m, f, seed).unwrap();
            prop_assert_eq!(test.len(), test_count(n, f));
            prop_assert_eq!(train.len() + test.len(), n);
            let mut ids: Vec<String> = train.records.iter().chain(&test.records).map(|r| r.participant_id.clone()).collect();
            ids.sort();
            let mut expected: Vec<String> = m.records.iter().map(|r| r.participant_id.clone()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
        }
    }
}
