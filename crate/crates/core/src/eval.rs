//! Retrieval metrics and a set-mean LSH baseline.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::code::HashCode;
use crate::data::{Label, PointSet, SetDataset, SetId};
use crate::error::{Error, Result};
use crate::index::{CodeIndex, RankedResult};
use crate::rng::{self, Stage};

/// `(1/|relevant|) Σ_{relevant hits} precision@rank` over the given ranking.
///
/// Returns 0 when `relevant` is empty.
pub fn average_precision(ranking: &[RankedResult], relevant: &HashSet<SetId>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, r) in ranking.iter().enumerate() {
        if relevant.contains(&r.id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Retrieved-count cutoffs for precision and recall.
    pub cutoffs: Vec<usize>,
    pub radii: Vec<u32>,
    /// Count a query whose radius bucket is empty as precision 0; when false
    /// such queries are left out of that radius' mean.
    pub empty_bucket_as_zero: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoffs: vec![100, 200, 400, 800, 1600],
            radii: vec![2],
            empty_bucket_as_zero: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    /// `None` when the database holds nothing relevant to the query.
    pub average_precision: Option<f64>,
    pub relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub map: f64,
    pub precision_at_k: Vec<(usize, f64)>,
    pub recall_at_k: Vec<(usize, f64)>,
    pub precision_at_radius: Vec<(u32, f64)>,
    pub per_query: Vec<QueryMetrics>,
}

struct QueryResult {
    metrics: QueryMetrics,
    precision: Vec<f64>,
    recall: Option<Vec<f64>>,
    radius: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Hamming-ranking metrics for labeled queries against a labeled index.
/// Relevance is label equality.
pub fn evaluate(index: &CodeIndex, queries: &[(HashCode, Label)], cfg: &EvalConfig) -> Result<MetricReport> {
    let db_labels: Vec<Label> = index
        .labels()
        .iter()
        .zip(index.ids())
        .map(|(l, id)| l.ok_or(Error::Unlabeled(*id)))
        .collect::<Result<_>>()?;
    let n = index.len();
    let results = queries
        .par_iter()
        .map(|(code, label)| {
            let ranking = index.rank(code, n)?;
            let relevant: HashSet<SetId> = index
                .ids()
                .iter()
                .zip(&db_labels)
                .filter(|(_, l)| *l == label)
                .map(|(id, _)| *id)
                .collect();
            let is_rel: Vec<bool> = ranking.iter().map(|r| relevant.contains(&r.id)).collect();
            let hits_at = |k: usize| is_rel[..k.min(n)].iter().filter(|&&b| b).count();
            let precision = cfg
                .cutoffs
                .iter()
                .map(|&k| {
                    let retrieved = k.min(n);
                    if retrieved == 0 {
                        0.0
                    } else {
                        hits_at(k) as f64 / retrieved as f64
                    }
                })
                .collect();
            let recall = (!relevant.is_empty()).then(|| {
                cfg.cutoffs
                    .iter()
                    .map(|&k| hits_at(k) as f64 / relevant.len() as f64)
                    .collect()
            });
            let radius = cfg
                .radii
                .iter()
                .map(|&r| {
                    let bucket: Vec<bool> = ranking
                        .iter()
                        .zip(&is_rel)
                        .take_while(|(x, _)| x.distance <= r)
                        .map(|(_, &b)| b)
                        .collect();
                    if bucket.is_empty() {
                        cfg.empty_bucket_as_zero.then_some(0.0)
                    } else {
                        Some(bucket.iter().filter(|&&b| b).count() as f64 / bucket.len() as f64)
                    }
                })
                .collect();
            Ok(QueryResult {
                metrics: QueryMetrics {
                    average_precision: (!relevant.is_empty())
                        .then(|| average_precision(&ranking, &relevant)),
                    relevant: relevant.len(),
                },
                precision,
                recall,
                radius,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let map = mean(results.iter().filter_map(|r| r.metrics.average_precision));
    let precision_at_k = cfg
        .cutoffs
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, mean(results.iter().map(|r| r.precision[i]))))
        .collect();
    let recall_at_k = cfg
        .cutoffs
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, mean(results.iter().filter_map(|r| r.recall.as_ref().map(|v| v[i])))))
        .collect();
    let precision_at_radius = cfg
        .radii
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, mean(results.iter().filter_map(|q| q.radius[i]))))
        .collect();
    Ok(MetricReport {
        map,
        precision_at_k,
        recall_at_k,
        precision_at_radius,
        per_query: results.into_iter().map(|r| r.metrics).collect(),
    })
}

/// Random-hyperplane LSH on set means.
#[derive(Debug, Clone, PartialEq)]
pub struct LshBaseline {
    dim: usize,
    /// `bits × dim`, row-major.
    planes: Vec<f64>,
}

impl LshBaseline {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if dim == 0 || bits == 0 {
            return Err(Error::invalid("LSH needs dim >= 1 and bits >= 1"));
        }
        let mut rng = rng::stream(seed, Stage::Lsh, 0);
        let planes = (0..dim * bits).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self { dim, planes })
    }

    pub fn bits(&self) -> usize {
        self.planes.len() / self.dim
    }

    pub fn encode(&self, set: &PointSet) -> Result<HashCode> {
        if set.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: set.dim(),
            });
        }
        let m = set.mean();
        Ok(HashCode::from_bits(self.planes.chunks(self.dim).map(|w| {
            let dot: f64 = w.iter().zip(&m).map(|(a, b)| a * b).sum();
            dot >= 0.0
        })))
    }

    pub fn encode_all(&self, sets: &[PointSet]) -> Result<Vec<HashCode>> {
        sets.iter().map(|s| self.encode(s)).collect()
    }
}

pub fn lsh_baseline_train(data: &SetDataset, bits: usize, seed: u64) -> Result<LshBaseline> {
    LshBaseline::new(data.dim(), bits, seed)
}

/// CSV with columns `metric,x,y`. The map row uses x = 0.
pub fn write_curves<W: Write>(report: &MetricReport, mut w: W) -> Result<()> {
    let mut out = String::from("metric,x,y\n");
    writeln!(out, "map,0,{}", report.map).expect("string write");
    for (k, v) in &report.precision_at_k {
        writeln!(out, "precision_at_k,{k},{v}").expect("string write");
    }
    for (k, v) in &report.recall_at_k {
        writeln!(out, "recall_at_k,{k},{v}").expect("string write");
    }
    for (r, v) in &report.precision_at_radius {
        writeln!(out, "precision_at_radius,{r},{v}").expect("string write");
    }
    w.write_all(out.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn emit_curves(report: &MetricReport, path: &Path) -> Result<()> {
    write_curves(report, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Parses the output of [`write_curves`]; per-query details are not stored.
pub fn read_curves<R: BufRead>(r: R) -> Result<MetricReport> {
    let bad = |line: usize, why: &str| Error::format("curve", format!("line {line}: {why}"));
    let mut report = MetricReport::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "metric,x,y" {
                return Err(bad(1, "expected header metric,x,y"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [metric, x, y] = fields[..] else {
            return Err(bad(i + 1, "expected three fields"));
        };
        let y: f64 = y.parse().map_err(|_| bad(i + 1, "bad y value"))?;
        let x_usize = || x.parse::<usize>().map_err(|_| bad(i + 1, "bad x value"));
        match metric {
            "map" => report.map = y,
            "precision_at_k" => report.precision_at_k.push((x_usize()?, y)),
            "recall_at_k" => report.recall_at_k.push((x_usize()?, y)),
            "precision_at_radius" => report
                .precision_at_radius
                .push((x.parse().map_err(|_| bad(i + 1, "bad radius"))?, y)),
            _ => return Err(bad(i + 1, "unknown metric")),
        }
    }
    Ok(report)
}
