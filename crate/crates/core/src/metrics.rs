//! Per-region overlap and surface-distance metrics and cohort statistics.
//!
//! Conventions: Dice is 1 when both masks are empty and 0 when exactly one is.
//! Sensitivity is 1 for an empty reference, specificity is 1 when the
//! reference covers the whole grid. HD95 is 0 for two empty masks and the
//! physical grid diagonal when exactly one is empty.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::volume::{derive_region_masks, Dims, LabelVolume, Mask, Region};

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            expected: b.dims(),
            found: a.dims(),
        });
    }
    Ok(())
}

/// Confusion counts `(tp, fp, fn, tn)` of `pred` against `gt`.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<(u64, u64, u64, u64)> {
    check_dims(pred, gt)?;
    let mut c = (0, 0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    Ok(c)
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (tp, fp, fn_, _) = confusion(pred, gt)?;
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

pub fn sensitivity_specificity(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    let (tp, fp, fn_, tn) = confusion(pred, gt)?;
    let sens = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let spec = if tn + fp == 0 { 1.0 } else { tn as f64 / (tn + fp) as f64 };
    Ok((sens, spec))
}

/// Set voxels with an unset 6-neighbour or lying on the grid border.
pub fn surface_voxels(mask: &Mask) -> Vec<(usize, usize, usize)> {
    let (d, h, w) = mask.dims();
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(z, y, x) {
                    continue;
                }
                let border = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                if border
                    || !mask.get(z - 1, y, x)
                    || !mask.get(z + 1, y, x)
                    || !mask.get(z, y - 1, x)
                    || !mask.get(z, y + 1, x)
                    || !mask.get(z, y, x - 1)
                    || !mask.get(z, y, x + 1)
                {
                    out.push((z, y, x));
                }
            }
        }
    }
    out
}

/// Exact 1D squared distance transform of samples `f` spaced `s` apart
/// (lower envelope of parabolas); infinite entries are not sites.
fn edt_1d(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, zs: &mut Vec<f64>) {
    v.clear();
    zs.clear();
    let key = |q: usize| f[q] + (q as f64 * s).powi(2);
    for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
        loop {
            let Some(&top) = v.last() else {
                v.push(q);
                zs.push(f64::NEG_INFINITY);
                break;
            };
            let cross = (key(q) - key(top)) / (2.0 * s * s * (q - top) as f64);
            if cross <= *zs.last().expect("one boundary per site") {
                v.pop();
                zs.pop();
            } else {
                v.push(q);
                zs.push(cross);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pp = p as f64;
        while k + 1 < v.len() && zs[k + 1] < pp {
            k += 1;
        }
        let q = v[k];
        *o = ((pp - q as f64) * s).powi(2) + f[q];
    }
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest site.
pub fn squared_distance_transform(sites: &[(usize, usize, usize)], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let (d, h, w) = dims;
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut g = vec![f64::INFINITY; d * h * w];
    for &(z, y, x) in sites {
        g[idx(z, y, x)] = 0.0;
    }
    let (mut v, mut zs) = (Vec::new(), Vec::new());
    let longest = d.max(h).max(w);
    let (mut line, mut out) = (vec![0.0; longest], vec![0.0; longest]);
    for z in 0..d {
        for y in 0..h {
            let base = idx(z, y, 0);
            line[..w].copy_from_slice(&g[base..base + w]);
            edt_1d(&line[..w], spacing[2], &mut out[..w], &mut v, &mut zs);
            g[base..base + w].copy_from_slice(&out[..w]);
        }
    }
    for z in 0..d {
        for x in 0..w {
            for y in 0..h {
                line[y] = g[idx(z, y, x)];
            }
            edt_1d(&line[..h], spacing[1], &mut out[..h], &mut v, &mut zs);
            for y in 0..h {
                g[idx(z, y, x)] = out[y];
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for z in 0..d {
                line[z] = g[idx(z, y, x)];
            }
            edt_1d(&line[..d], spacing[0], &mut out[..d], &mut v, &mut zs);
            for z in 0..d {
                g[idx(z, y, x)] = out[z];
            }
        }
    }
    g
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

fn percentile_sorted(v: &[f64], q: f64) -> f64 {
    assert!(!v.is_empty(), "percentile of nothing");
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Physical length of the grid diagonal in mm.
pub fn grid_diagonal(dims: Dims, spacing: [f64; 3]) -> f64 {
    let (d, h, w) = dims;
    ((d as f64 * spacing[0]).powi(2) + (h as f64 * spacing[1]).powi(2) + (w as f64 * spacing[2]).powi(2)).sqrt()
}

fn directed_hd95(from: &[(usize, usize, usize)], to_dt: &[f64], dims: Dims) -> f64 {
    let (_, h, w) = dims;
    let d: Vec<f64> = from.iter().map(|&(z, y, x)| to_dt[(z * h + y) * w + x].sqrt()).collect();
    percentile(&d, 95.0)
}

/// Symmetric 95th-percentile surface distance in mm.
pub fn hausdorff95(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<f64> {
    check_dims(pred, gt)?;
    let dims = gt.dims();
    let (sp, sg) = (surface_voxels(pred), surface_voxels(gt));
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(grid_diagonal(dims, spacing)),
        _ => {}
    }
    let dt_g = squared_distance_transform(&sg, dims, spacing);
    let dt_p = squared_distance_transform(&sp, dims, spacing);
    Ok(directed_hd95(&sp, &dt_g, dims).max(directed_hd95(&sg, &dt_p, dims)))
}

/// Metric kinds in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dice,
    Sensitivity,
    Specificity,
    Hd95,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Dice, Metric::Sensitivity, Metric::Specificity, Metric::Hd95];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Hd95 => "hd95",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RegionScores {
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub hd95: f64,
}

impl RegionScores {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Dice => self.dice,
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::Hd95 => self.hd95,
        }
    }
}

/// Scores of one case, indexed in [`Region::ALL`] order (ET, WT, TC).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub case_id: String,
    pub scores: [RegionScores; 3],
}

impl RegionMetrics {
    pub fn region(&self, r: Region) -> &RegionScores {
        &self.scores[Region::ALL.iter().position(|&x| x == r).expect("known region")]
    }
}

pub fn region_scores(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<RegionScores> {
    let (sensitivity, specificity) = sensitivity_specificity(pred, gt)?;
    Ok(RegionScores {
        dice: dice(pred, gt)?,
        sensitivity,
        specificity,
        hd95: hausdorff95(pred, gt, spacing)?,
    })
}

/// All four metrics for ET, WT and TC.
pub fn evaluate_case(case_id: &str, pred: &LabelVolume, gt: &LabelVolume, spacing: [f64; 3]) -> Result<RegionMetrics> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    let (p, g) = (derive_region_masks(pred), derive_region_masks(gt));
    let mut scores = [RegionScores::default(); 3];
    for (s, r) in scores.iter_mut().zip(Region::ALL) {
        *s = region_scores(p.get(r), g.get(r), spacing)?;
    }
    Ok(RegionMetrics {
        case_id: case_id.to_string(),
        scores,
    })
}

/// Evaluation input: case id, prediction, reference, spacing.
pub type EvalItem = (String, LabelVolume, LabelVolume, [f64; 3]);

/// Evaluates many cases (in parallel), keeping input order.
pub fn evaluate_cohort(items: &[EvalItem], exec: Execution) -> Result<Vec<RegionMetrics>> {
    exec.map(items, |(id, p, g, s)| evaluate_case(id, p, g, *s)).into_iter().collect()
}

/// Boxplot statistics of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyCohort);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let (q1, median, q3) = (percentile_sorted(&v, 25.0), percentile_sorted(&v, 50.0), percentile_sorted(&v, 75.0));
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let whisker_low = v.iter().copied().find(|&x| x >= lo).unwrap_or(v[0]);
        let whisker_high = v.iter().rev().copied().find(|&x| x <= hi).unwrap_or(v[n - 1]);
        Ok(Self {
            n,
            mean,
            std,
            min: v[0],
            q1,
            median,
            q3,
            max: v[n - 1],
            whisker_low,
            whisker_high,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub region: &'static str,
    pub metric: Metric,
    pub stats: BoxStats,
}

/// Cohort statistics per region and metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub n: usize,
    pub entries: Vec<SummaryEntry>,
}

impl CohortSummary {
    pub fn get(&self, region: Region, metric: Metric) -> &BoxStats {
        &self
            .entries
            .iter()
            .find(|e| e.region == region.name() && e.metric == metric)
            .expect("every region/metric pair is present")
            .stats
    }
}

pub fn aggregate(cases: &[RegionMetrics]) -> Result<CohortSummary> {
    if cases.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut entries = Vec::new();
    for metric in Metric::ALL {
        for (i, region) in Region::ALL.iter().enumerate() {
            let values: Vec<f64> = cases.iter().map(|c| c.scores[i].get(metric)).collect();
            entries.push(SummaryEntry {
                region: region.name(),
                metric,
                stats: BoxStats::from_values(&values)?,
            });
        }
    }
    Ok(CohortSummary { n: cases.len(), entries })
}

/// `case_id,region,metric,value`, one row per case, region and metric.
pub fn per_case_csv(cases: &[RegionMetrics]) -> String {
    let mut s = String::from("case_id,region,metric,value\n");
    for c in cases {
        for (i, r) in Region::ALL.iter().enumerate() {
            for m in Metric::ALL {
                let _ = writeln!(s, "{},{},{},{}", c.case_id, r.name(), m.name(), c.scores[i].get(m));
            }
        }
    }
    s
}

/// One row per statistic; columns follow the table layout
/// (Dice, HD95, sensitivity, specificity; each for ET, WT, TC).
pub fn summary_csv(summary: &CohortSummary) -> String {
    let order = [Metric::Dice, Metric::Hd95, Metric::Sensitivity, Metric::Specificity];
    let mut s = String::from("statistic");
    for m in order {
        for r in Region::ALL {
            let _ = write!(s, ",{}_{}", m.name(), r.name().to_ascii_lowercase());
        }
    }
    s.push('\n');
    type Pick = fn(&BoxStats) -> f64;
    let rows: [(&str, Pick); 5] = [
        ("mean", |b| b.mean),
        ("std", |b| b.std),
        ("median", |b| b.median),
        ("q1", |b| b.q1),
        ("q3", |b| b.q3),
    ];
    for (name, pick) in rows {
        s.push_str(name);
        for m in order {
            for r in Region::ALL {
                let _ = write!(s, ",{:.6}", pick(summary.get(r, m)));
            }
        }
        s.push('\n');
    }
    s
}

pub fn boxplot_json(summary: &CohortSummary) -> Result<String> {
    serde_json::to_string_pretty(summary).map_err(|e| Error::Serde(e.to_string()))
}

/// Writes `per_case.csv`, `summary.csv` and `boxplot.json` into `dir`.
pub fn write_reports(dir: &Path, cases: &[RegionMetrics]) -> Result<CohortSummary> {
    let summary = aggregate(cases)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [
        ("per_case.csv", per_case_csv(cases)),
        ("summary.csv", summary_csv(&summary)),
        ("boxplot.json", boxplot_json(&summary)?),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(summary)
}
