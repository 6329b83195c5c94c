mod common;

use std::collections::HashSet;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use sethash::eval::*;
use sethash::{hamming_distance, CodeIndex, HashCode, Label, PointSet, SetId};

fn random_code(r: &mut impl Rng, bits: usize) -> HashCode {
    HashCode::from_bits((0..bits).map(|_| r.random_bool(0.5)))
}

fn random_index(r: &mut impl Rng, n: usize, bits: usize, classes: u32) -> CodeIndex {
    let codes: Vec<HashCode> = (0..n).map(|_| random_code(r, bits)).collect();
    // sparse, unordered ids
    let mut ids: Vec<SetId> = (0..n as u64).map(|i| SetId(i * 7 + 3)).collect();
    for i in (1..n).rev() {
        ids.swap(i, r.random_range(0..=i));
    }
    let labels: Vec<Option<Label>> = (0..n).map(|_| Some(r.random_range(1..=classes))).collect();
    CodeIndex::build(bits, &codes, &ids, &labels).unwrap()
}

fn brute_ranking(index: &CodeIndex, q: &HashCode) -> Vec<(u32, SetId)> {
    let mut all: Vec<(u32, SetId)> = (0..index.len())
        .map(|i| (hamming_distance(&index.code(i), q).unwrap(), index.ids()[i]))
        .collect();
    all.sort();
    all
}

/// AP as the mean, over relevant items, of the precision of the shortest
/// prefix containing that item.
fn ap_oracle(ranked: &[SetId], relevant: &HashSet<SetId>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (pos, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            let prefix = &ranked[..=pos];
            total += prefix.iter().filter(|x| relevant.contains(x)).count() as f64 / prefix.len() as f64;
        }
    }
    total / relevant.len() as f64
}

#[test]
fn rank_and_radius_match_brute_force() {
    for seed in 0..500u64 {
        let mut r = rng(seed);
        let n = r.random_range(0..=200);
        let bits = r.random_range(1..=64);
        let index = random_index(&mut r, n, bits, 4);
        let q = random_code(&mut r, bits);
        let want = brute_ranking(&index, &q);
        let k = r.random_range(0..=n + 5);
        let got: Vec<(u32, SetId)> = index.rank(&q, k).unwrap().iter().map(|x| (x.distance, x.id)).collect();
        assert_eq!(got, want[..k.min(n)], "seed {seed}");
        for (i, x) in index.rank(&q, k).unwrap().iter().enumerate() {
            assert_eq!(x.rank, i + 1);
        }
        let radius = r.random_range(0..=bits as u32);
        let got: Vec<(u32, SetId)> = index.lookup_radius(&q, radius).unwrap().iter().map(|x| (x.distance, x.id)).collect();
        let filtered: Vec<(u32, SetId)> = want.iter().copied().filter(|x| x.0 <= radius).collect();
        assert_eq!(got, filtered, "seed {seed}");
    }
}

#[test]
fn average_precision_matches_prefix_oracle() {
    for seed in 0..500u64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=200);
        let bits = r.random_range(1..=64);
        let index = random_index(&mut r, n, bits, 3);
        let q = random_code(&mut r, bits);
        let label = r.random_range(1..=3);
        let relevant: HashSet<SetId> = index
            .ids()
            .iter()
            .zip(index.labels())
            .filter(|(_, l)| **l == Some(label))
            .map(|(id, _)| *id)
            .collect();
        let ranking = index.rank(&q, n).unwrap();
        let ids: Vec<SetId> = ranking.iter().map(|x| x.id).collect();
        let got = average_precision(&ranking, &relevant);
        assert!((got - ap_oracle(&ids, &relevant)).abs() <= 1e-12, "seed {seed}");
    }
}

#[test]
fn hand_average_precision() {
    let ranking: Vec<sethash::RankedResult> = (0..3)
        .map(|i| sethash::RankedResult { id: SetId(i), distance: i as u32, rank: i as usize + 1 })
        .collect();
    let rel: HashSet<SetId> = [SetId(0), SetId(2)].into();
    assert!((average_precision(&ranking, &rel) - 5.0 / 6.0).abs() < 1e-15);
    let none: HashSet<SetId> = [SetId(9)].into();
    assert_eq!(average_precision(&ranking, &none), 0.0);
}

proptest! {
    #[test]
    fn radius_results_nest(seed in any::<u64>(), bits in 1usize..40) {
        let mut r = rng(seed);
        let index = random_index(&mut r, 60, bits, 3);
        let q = random_code(&mut r, bits);
        let mut prev: HashSet<SetId> = HashSet::new();
        for radius in 0..=bits as u32 {
            let cur: HashSet<SetId> = index.lookup_radius(&q, radius).unwrap().iter().map(|x| x.id).collect();
            prop_assert!(prev.is_subset(&cur));
            prev = cur;
        }
        let all: HashSet<SetId> = index.rank(&q, index.len()).unwrap().iter().map(|x| x.id).collect();
        prop_assert_eq!(prev, all);
    }

    #[test]
    fn map_ignores_id_relabeling(seed in any::<u64>()) {
        let mut r = rng(seed);
        let bits = 12;
        let n = 80;
        let codes: Vec<HashCode> = (0..n).map(|_| random_code(&mut r, bits)).collect();
        let labels: Vec<Option<Label>> = (0..n).map(|i| Some(1 + (i % 4) as u32)).collect();
        let ids: Vec<SetId> = (0..n as u64).map(SetId).collect();
        let a = CodeIndex::build(bits, &codes, &ids, &labels).unwrap();
        // ties break by id, so the relabeling keeps id order
        let moved: Vec<SetId> = ids.iter().map(|x| SetId(500 + x.0 * x.0 * 13)).collect();
        let b = CodeIndex::build(bits, &codes, &moved, &labels).unwrap();
        let queries: Vec<(HashCode, Label)> = (0..10).map(|i| (random_code(&mut r, bits), 1 + i % 4)).collect();
        let cfg = EvalConfig { cutoffs: vec![5, 20], ..Default::default() };
        let ra = evaluate(&a, &queries, &cfg).unwrap();
        let rb = evaluate(&b, &queries, &cfg).unwrap();
        prop_assert!((ra.map - rb.map).abs() < 1e-12);
    }

    #[test]
    fn report_values_are_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let index = random_index(&mut r, 50, 8, 3);
        let queries: Vec<(HashCode, Label)> = (0..6).map(|i| (random_code(&mut r, 8), 1 + i % 3)).collect();
        let cfg = EvalConfig { cutoffs: vec![1, 5, 10, 50, 100], radii: vec![0, 1, 2], ..Default::default() };
        let rep = evaluate(&index, &queries, &cfg).unwrap();
        let vals = std::iter::once(rep.map)
            .chain(rep.precision_at_k.iter().map(|x| x.1))
            .chain(rep.recall_at_k.iter().map(|x| x.1))
            .chain(rep.precision_at_radius.iter().map(|x| x.1));
        for v in vals {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(rep.recall_at_k.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-15));
    }
}

#[test]
fn random_codes_score_the_class_prior() {
    let mut maps = Vec::new();
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let n = 1000;
        let codes: Vec<HashCode> = (0..n).map(|_| random_code(&mut r, 24)).collect();
        let ids: Vec<SetId> = (0..n as u64).map(SetId).collect();
        let labels: Vec<Option<Label>> = (0..n).map(|i| Some(1 + (i % 10) as u32)).collect();
        let index = CodeIndex::build(24, &codes, &ids, &labels).unwrap();
        let queries: Vec<(HashCode, Label)> = (0..100).map(|i| (random_code(&mut r, 24), 1 + i % 10)).collect();
        maps.push(evaluate(&index, &queries, &EvalConfig::default()).unwrap().map);
    }
    let mean = maps.iter().sum::<f64>() / maps.len() as f64;
    assert!((mean - 0.1).abs() <= 0.03, "mean MAP {mean}");
}

#[test]
fn perfect_codes_score_one() {
    let codes: Vec<HashCode> = (0..30).map(|i| HashCode::from_bits((0..9).map(|b| b / 3 == i % 3))).collect();
    let ids: Vec<SetId> = (0..30).map(SetId).collect();
    let labels: Vec<Option<Label>> = (0..30).map(|i| Some(1 + (i % 3) as u32)).collect();
    let index = CodeIndex::build(9, &codes, &ids, &labels).unwrap();
    let queries: Vec<(HashCode, Label)> = codes.iter().zip(&labels).map(|(c, l)| (c.clone(), l.unwrap())).collect();
    let rep = evaluate(&index, &queries, &EvalConfig { cutoffs: vec![10], ..Default::default() }).unwrap();
    assert_eq!(rep.map, 1.0);
    assert_eq!(rep.precision_at_k, vec![(10, 1.0)]);
    assert_eq!(rep.precision_at_radius, vec![(2, 1.0)]);
}

#[test]
fn index_edge_cases() {
    let empty = CodeIndex::build(16, &[], &[], &[]).unwrap();
    assert!(empty.rank(&HashCode::zeros(16), 5).unwrap().is_empty());
    let mut r = rng(1577);
    let big = random_index(&mut r, 1577, 24, 10);
    assert_eq!(big.len(), 1577);
    assert_eq!(big.rank(&random_code(&mut r, 24), 1600).unwrap().len(), 1577);
    let stored = big.code(17);
    let top = &big.rank(&stored, 1).unwrap()[0];
    assert_eq!(top.distance, 0);
    let c = HashCode::zeros(4);
    assert!(CodeIndex::build(4, &[c.clone(), c.clone()], &[SetId(1), SetId(1)], &[]).is_err());
    assert!(empty.rank(&HashCode::zeros(8), 1).is_err());
}

#[test]
fn lsh_codes_follow_set_means() {
    let lsh = LshBaseline::new(3, 16, 4).unwrap();
    let a = PointSet::from_rows(SetId(0), &[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]], None).unwrap();
    let swapped = PointSet::from_rows(SetId(1), &[vec![-1.0, 0.5, 2.0], vec![1.0, 2.0, 3.0]], None).unwrap();
    let neg = PointSet::from_rows(SetId(2), &[vec![0.0, -1.25, -2.5]], None).unwrap();
    let (ca, cs, cn) = (lsh.encode(&a).unwrap(), lsh.encode(&swapped).unwrap(), lsh.encode(&neg).unwrap());
    assert_eq!(ca, cs);
    assert_eq!(hamming_distance(&ca, &cn).unwrap(), 16);
    assert!(lsh.encode(&PointSet::from_rows(SetId(3), &[vec![1.0]], None).unwrap()).is_err());
}

#[test]
fn curves_round_trip() {
    let mut r = rng(8);
    let index = random_index(&mut r, 40, 10, 2);
    let queries: Vec<(HashCode, Label)> = (0..5).map(|i| (random_code(&mut r, 10), 1 + i % 2)).collect();
    let cfg = EvalConfig { cutoffs: vec![5, 10, 20], ..Default::default() };
    let rep = evaluate(&index, &queries, &cfg).unwrap();
    let mut buf = Vec::new();
    write_curves(&rep, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("precision_at_k,")).count(), 3);
    assert_eq!(text.lines().filter(|l| l.starts_with("recall_at_k,")).count(), 3);
    let back = read_curves(&buf[..]).unwrap();
    assert_eq!(back.map, rep.map);
    assert_eq!(back.precision_at_k, rep.precision_at_k);
    assert_eq!(back.recall_at_k, rep.recall_at_k);
}
