mod common;

use std::collections::HashSet;

use common::{random_set, rng};
use proptest::prelude::*;
use sethash::io::{load_dataset, read_csv, save_dataset, write_csv};
use sethash::kernels::cache::KernelCache;
use sethash::kernels::{prepare_all, KernelConfig, KernelId};
use sethash::synth::{generate, SynthConfig};
use sethash::trainer::train_with;
use sethash::{split_qr, CodeIndex, Error, HashCode, HashModel, Label, PointSet, SetDataset, SetId, Side, TrainerConfig};

fn small_data(seed: u64) -> SetDataset {
    generate(&SynthConfig { classes: 3, sets_per_class: 6, points_per_set: 8, dim: 4, center_scale: 3.0, seed, ..Default::default() })
        .unwrap()
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(1);
    let bin = dir.path().join("d.shds");
    save_dataset(&data, &bin).unwrap();
    let back = load_dataset(&bin).unwrap();
    assert_eq!(back.ids(), data.ids());
    for (a, b) in back.sets().iter().zip(data.sets()) {
        assert_eq!(a.label(), b.label());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*x, f64::from(*y as f32));
        }
    }
    let csv = dir.path().join("d.csv");
    write_csv(&back, std::fs::File::create(&csv).unwrap()).unwrap();
    assert_eq!(load_dataset(&csv).unwrap().sets(), back.sets());
    assert!(matches!(load_dataset(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn model_file_round_trips_and_encodes_identically() {
    let data = small_data(2);
    let split = split_qr(&data, 0.5, 2, true).unwrap();
    let cfg = TrainerConfig { bits: 4, rounds: 4, seed: 2, ..Default::default() };
    let (model, _) = train_with(&split, &cfg, None).unwrap();
    let mut bytes = Vec::new();
    model.write(&mut bytes).unwrap();
    let back = HashModel::read(&bytes[..]).unwrap();
    let mut again = Vec::new();
    back.write(&mut again).unwrap();
    assert_eq!(bytes, again);
    assert_eq!(back.config(), model.config());
    for side in [Side::Query, Side::Database] {
        assert_eq!(back.encode_all(side, data.sets()).unwrap(), model.encode_all(side, data.sets()).unwrap());
    }

    let mut future = bytes.clone();
    future[4] = 2;
    assert!(matches!(HashModel::read(&future[..]), Err(Error::Version { found: 2, .. })));
    assert!(matches!(HashModel::read(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    let mut foreign = bytes.clone();
    foreign[0] = b'X';
    assert!(HashModel::read(&foreign[..]).is_err());

    let wide = PointSet::new(SetId(0), 8, vec![0.0; 16], None).unwrap();
    assert!(matches!(model.encode(Side::Query, &wide), Err(Error::DimensionMismatch { expected: 4, found: 8 })));
}

#[test]
fn code_files_round_trip() {
    let codes: Vec<HashCode> = (0..5u32).map(|i| HashCode::from_bits((0..70).map(|b| (b * i) % 3 == 0))).collect();
    let ids: Vec<SetId> = (10..15).map(SetId).collect();
    let labels: Vec<Option<Label>> = vec![Some(1), None, Some(2), Some(1), None];
    let index = CodeIndex::build(70, &codes, &ids, &labels).unwrap();
    let mut bytes = Vec::new();
    index.write(&mut bytes).unwrap();
    assert!(sethash::index::is_code_file(&bytes));
    let back = CodeIndex::read(&bytes[..]).unwrap();
    assert_eq!(back.codes(), codes);
    assert_eq!(back.ids(), &ids[..]);
    assert_eq!(back.labels(), &labels[..]);
    bytes[4] = 9;
    assert!(matches!(CodeIndex::read(&bytes[..]), Err(Error::Version { found: 9, .. })));
}

#[test]
fn kernel_cache_reuses_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    let sets: Vec<PointSet> = (0..6).map(|i| random_set(&mut r, i, 5, 3, None)).collect();
    let refs: Vec<&PointSet> = sets.iter().collect();
    let params = KernelConfig::default().resolve(&refs, 0).unwrap();
    let prepared = prepare_all(&refs, &params).unwrap();
    let cache = KernelCache::new(dir.path()).unwrap();
    let first = cache.get_or_compute(&prepared, &prepared, KernelId::Structural, &params).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let second = cache.get_or_compute(&prepared, &prepared, KernelId::Structural, &params).unwrap();
    assert_eq!(first, second);
    let other = sethash::kernels::KernelParams { gamma_g: params.gamma_g * 2.0, ..params };
    let third = cache.get_or_compute(&prepared, &prepared, KernelId::Structural, &other).unwrap();
    assert_ne!(first, third);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn synthetic_data_is_reproducible() {
    let a = small_data(5);
    assert_eq!(a.sets(), small_data(5).sets());
    assert_ne!(a.sets(), small_data(6).sets());
    let mut buf = Vec::new();
    write_csv(&a, &mut buf).unwrap();
    assert_eq!(read_csv(&buf[..]).unwrap().len(), 18);
}

fn labeled(labels: &[Label]) -> SetDataset {
    let sets = labels
        .iter()
        .enumerate()
        .map(|(i, l)| PointSet::new(SetId(i as u64 * 3), 1, vec![i as f64], Some(*l)).unwrap())
        .collect();
    SetDataset::new(sets).unwrap()
}

proptest! {
    #[test]
    fn split_is_a_partition(labels in prop::collection::vec(1u32..5, 2..60), fraction in 0.1f64..0.9, seed in any::<u64>(), stratified in any::<bool>()) {
        let data = labeled(&labels);
        let s = split_qr(&data, fraction, seed, stratified).unwrap();
        prop_assert!(!s.q.is_empty() && !s.r.is_empty());
        prop_assert_eq!(s.q.len() + s.r.len(), data.len());
        let q: HashSet<SetId> = s.q.ids().into_iter().collect();
        let r: HashSet<SetId> = s.r.ids().into_iter().collect();
        prop_assert!(q.is_disjoint(&r));
        let all: HashSet<SetId> = data.ids().into_iter().collect();
        prop_assert_eq!(&q | &r, all);
        for side in [&s.q, &s.r] {
            let keys: Vec<(Option<Label>, SetId)> = side.sets().iter().map(|x| (x.label(), x.id())).collect();
            prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        }
        if stratified {
            for l in 1..5u32 {
                let count = labels.iter().filter(|x| **x == l).count();
                if count >= 2 {
                    prop_assert!(s.q.sets().iter().any(|x| x.label() == Some(l)));
                    prop_assert!(s.r.sets().iter().any(|x| x.label() == Some(l)));
                }
            }
        }
        let again = split_qr(&data, fraction, seed, stratified).unwrap();
        prop_assert_eq!(again.q.ids(), s.q.ids());
    }
}
