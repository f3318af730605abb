//! Command-line pipeline: `phantom`, `preprocess`, `train`, `predict`,
//! `evaluate` and `report`.
//!
//! Exit codes: 0 on success, 1 for domain errors, 2 for usage errors. Failures
//! print one line, `error[<Code>]: <message>`, on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{init_thread_pool, Execution};
use crate::inference::{ensemble_predict, ModelSet};
use crate::io::nifti::DT_UINT8;
use crate::io::{read_case, read_labels, write_case, write_labels, CaseLayout, NiftiHeader};
use crate::metrics::{aggregate, evaluate_cohort, write_reports, CohortSummary, EvalItem, Metric, RegionMetrics, RegionScores};
use crate::nn::NetworkConfig;
use crate::phantom::{generate_case, PhantomSpec};
use crate::preprocess::{class_distribution, extract_patches, load_patches, normalize_case, save_patches, PatchSample};
use crate::train::{train_regime, TrainConfig, ViewRegime};
use crate::volume::{MultiModalCase, Region, View};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub data_root: Option<PathBuf>,
    pub patch_store: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub prediction_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Everything a pipeline run needs; loaded from TOML (or JSON) and then
/// overridden by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// When set, replaces the seeds of every seeded component.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        match toml::from_str(text) {
            Ok(c) => Ok(c),
            Err(te) => serde_json::from_str(text).map_err(|je| Error::Serde(format!("not TOML ({te}) nor JSON ({je})"))),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    /// Pushes the global seed into the components and validates them.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.phantom.seed = s;
        }
        self.network.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config is always serialisable");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Parser, Debug)]
#[command(name = "resunet", version, about = "Brain-tumour segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Pipeline config file (TOML, or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic labelled cases.
    Phantom {
        #[arg(long)]
        n: usize,
        /// Cube side, or `DxHxW`.
        #[arg(long)]
        dims: Option<String>,
        /// Index of the first case.
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Normalise cases and extract tumour patches for every view.
    Preprocess {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the model set of a view regime from a patch store.
    Train {
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `single_view(<view>)`, `mixed_views` or `per_view_ensemble`.
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Segment every case of a data directory.
    Predict {
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against reference segmentations.
    Evaluate {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render cohort tables from an evaluation directory.
    Report {
        /// Directory holding `per_case.csv`.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Output file (default `<eval>/report.md`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[UsageError]: {first}");
            return 2;
        }
    };
    init_thread_pool();
    match run(cli.command) {
        Ok(()) => 0,
        Err(Usage(msg)) => {
            eprintln!("error[UsageError]: {msg}");
            2
        }
        Err(Domain(e)) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            1
        }
    }
}

enum Failure {
    Usage(String),
    Domain(Error),
}
use Failure::{Domain, Usage};

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Domain(e)
    }
}

fn config_for(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Usage(format!("--{name} is required (or set it under [paths] in the config)")))
}

/// Refuses a non-empty output directory unless `force`.
fn guard_dir(dir: &Path, force: bool) -> Result<()> {
    if !force {
        if let Ok(mut entries) = std::fs::read_dir(dir) {
            if entries.next().is_some() {
                return Err(Error::OutputExists(dir.to_path_buf()));
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config_hash: String,
    config: &'a PipelineConfig,
    details: serde_json::Value,
}

fn write_manifest(dir: &Path, command: &str, cfg: &PipelineConfig, details: serde_json::Value) -> Result<()> {
    let m = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg,
        details,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), Failure> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    let nums: std::result::Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match nums.as_deref() {
        Ok([n]) => Ok((*n, *n, *n)),
        Ok([d, h, w]) => Ok((*d, *h, *w)),
        _ => Err(Usage(format!("--dims expects N or DxHxW, got '{s}'"))),
    }
}

/// Case directories of a data root, sorted by name.
pub fn case_dirs(root: &Path) -> Result<Vec<CaseLayout>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(CaseLayout::from_dir).collect())
}

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Phantom { n, dims, start, out, common } => {
            let mut cfg = config_for(&common)?;
            if let Some(d) = dims {
                cfg.phantom.dims = parse_dims(&d)?;
            }
            let cfg = cfg.resolve()?;
            cfg.phantom.validate()?;
            let out = required(out, &cfg.paths.data_root, "out")?;
            guard_dir(&out, common.force)?;
            let cases: Vec<usize> = (start..start + n).collect();
            let written: Result<Vec<String>> = Execution::from_env()
                .map(&cases, |&i| {
                    let case = generate_case(&cfg.phantom, i)?;
                    write_case(&case, &out.join(&case.case_id))?;
                    Ok(case.case_id)
                })
                .into_iter()
                .collect();
            let ids = written?;
            write_manifest(&out, "phantom", &cfg, serde_json::json!({ "cases": ids }))?;
            log(format!("wrote {} phantom cases to {}", ids.len(), out.display()));
            Ok(())
        }
        Command::Preprocess { data, out, patch_size, common } => {
            let mut cfg = config_for(&common)?;
            if let Some(s) = patch_size {
                cfg.train.patch_size = s;
            }
            let cfg = cfg.resolve()?;
            let data = required(data, &cfg.paths.data_root, "data")?;
            let out = required(out, &cfg.paths.patch_store, "out")?;
            guard_dir(&out, common.force)?;
            let layouts = case_dirs(&data)?;
            let size = cfg.train.patch_size;
            let per_case: Result<Vec<(MultiModalCase, Vec<Vec<PatchSample>>)>> = Execution::from_env()
                .map(&layouts, |l| {
                    let (case, _) = read_case(l)?;
                    if case.labels().is_none() {
                        return Err(Error::MissingLabels(case.case_id.clone()));
                    }
                    let norm = normalize_case(&case)?;
                    let patches = View::ALL
                        .iter()
                        .map(|&v| extract_patches(&norm, v, size))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((case, patches))
                })
                .into_iter()
                .collect();
            let per_case = per_case?;
            let mut counts = serde_json::Map::new();
            for (vi, view) in View::ALL.iter().enumerate() {
                let patches: Vec<PatchSample> = per_case.iter().flat_map(|(_, p)| p[vi].iter().cloned()).collect();
                save_patches(&out.join(view.name()), &patches)?;
                counts.insert(view.name().into(), patches.len().into());
            }
            let dist = class_distribution(per_case.iter().filter_map(|(c, _)| c.labels()));
            write_manifest(
                &out,
                "preprocess",
                &cfg,
                serde_json::json!({
                    "cases": per_case.len(),
                    "patch_size": size,
                    "patches": counts,
                    "class_distribution": { "0": dist[0], "1": dist[1], "2": dist[2], "4": dist[3] },
                }),
            )?;
            log(format!("extracted patches from {} cases into {}", per_case.len(), out.display()));
            Ok(())
        }
        Command::Train { patches, out, regime, epochs, batch_size, common } => {
            let mut cfg = config_for(&common)?;
            if let Some(r) = regime {
                cfg.train.view_regime = r.parse::<ViewRegime>().map_err(|e| Usage(e.to_string()))?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            let cfg = cfg.resolve()?;
            let store = required(patches, &cfg.paths.patch_store, "patches")?;
            let out = required(out, &cfg.paths.checkpoint_dir, "out")?;
            guard_dir(&out, common.force)?;
            let set = train_regime(
                &cfg.network,
                &cfg.train,
                Execution::from_env(),
                &mut |v| load_patches(&store.join(v.name())),
                &mut |v, r| {
                    log(format!(
                        "train view={v} epoch={}/{} train_loss={:.6} val_loss={} ({:.1}s)",
                        r.epoch,
                        cfg.train.epochs,
                        r.train_loss,
                        r.val_loss.map_or("-".into(), |x| format!("{x:.6}")),
                        r.seconds
                    ))
                },
            )?;
            let checkpoints = set.save(&out)?;
            for m in set.members() {
                m.history.write_csv(&out.join(format!("history_{}.csv", m.view)))?;
            }
            let params = set.members().first().map_or(0, |m| m.net.parameter_count());
            write_manifest(
                &out,
                "train",
                &cfg,
                serde_json::json!({
                    "regime": set.regime().to_string(),
                    "checkpoints": checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy()).collect::<Vec<_>>(),
                    "parameters_per_model": params,
                }),
            )?;
            log(format!("saved {} model(s) to {}", set.members().len(), out.display()));
            Ok(())
        }
        Command::Predict { models, data, out, common } => {
            let cfg = config_for(&common)?.resolve()?;
            let models = required(models, &cfg.paths.checkpoint_dir, "models")?;
            let data = required(data, &cfg.paths.data_root, "data")?;
            let out = required(out, &cfg.paths.prediction_dir, "out")?;
            let set = ModelSet::load(&models)?;
            guard_dir(&out, common.force)?;
            let layouts = case_dirs(&data)?;
            for l in &layouts {
                let (case, header) = read_case(l)?;
                let labels = ensemble_predict(&set, &normalize_case(&case)?)?;
                let reference = header.unwrap_or_else(|| NiftiHeader::new_3d(case.dims(), case.spacing, DT_UINT8));
                write_labels(&labels, &out.join(format!("{}.nii.gz", case.case_id)), &reference)?;
            }
            write_manifest(
                &out,
                "predict",
                &cfg,
                serde_json::json!({ "regime": set.regime().to_string(), "cases": layouts.len() }),
            )?;
            log(format!("predicted {} cases into {}", layouts.len(), out.display()));
            Ok(())
        }
        Command::Evaluate { pred, gt, out, common } => {
            let cfg = config_for(&common)?.resolve()?;
            let pred = required(pred, &cfg.paths.prediction_dir, "pred")?;
            let gt = required(gt, &cfg.paths.data_root, "gt")?;
            let out = required(out, &cfg.paths.report_dir, "out")?;
            guard_dir(&out, common.force)?;
            let mut items: Vec<EvalItem> = Vec::new();
            for l in case_dirs(&gt)? {
                let (case, _) = read_case(&l)?;
                let reference = case.labels().cloned().ok_or_else(|| Error::MissingLabels(case.case_id.clone()))?;
                let p = [".nii.gz", ".nii", ".bin"]
                    .iter()
                    .map(|ext| pred.join(format!("{}{ext}", case.case_id)))
                    .find(|p| p.exists())
                    .unwrap_or_else(|| pred.join(format!("{}.nii.gz", case.case_id)));
                items.push((case.case_id.clone(), read_labels(&p)?, reference, case.spacing));
            }
            let results = evaluate_cohort(&items, Execution::from_env())?;
            let summary = write_reports(&out, &results)?;
            write_manifest(&out, "evaluate", &cfg, serde_json::json!({ "cases": results.len() }))?;
            log(format!(
                "evaluated {} cases: mean Dice ET {:.4} WT {:.4} TC {:.4}",
                results.len(),
                summary.get(Region::Et, Metric::Dice).mean,
                summary.get(Region::Wt, Metric::Dice).mean,
                summary.get(Region::Tc, Metric::Dice).mean
            ));
            Ok(())
        }
        Command::Report { eval, out, common } => {
            let cfg = config_for(&common)?.resolve()?;
            let eval = required(eval, &cfg.paths.report_dir, "eval")?;
            let out = out.unwrap_or_else(|| eval.join("report.md"));
            if out.exists() && !common.force {
                return Err(Error::OutputExists(out).into());
            }
            let path = eval.join("per_case.csv");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let cases = parse_per_case_csv(&text)?;
            let report = render_report(&aggregate(&cases)?);
            crate::io::create_parent(&out)?;
            std::fs::write(&out, &report).map_err(|e| Error::io(&out, e))?;
            print!("{report}");
            Ok(())
        }
    }
}

/// Inverse of [`crate::metrics::per_case_csv`].
pub fn parse_per_case_csv(text: &str) -> Result<Vec<RegionMetrics>> {
    let mut out: Vec<RegionMetrics> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Serde(format!("per-case CSV line {}: '{line}'", lineno + 1));
        let f: Vec<&str> = line.split(',').collect();
        let [id, region, metric, value] = f[..] else {
            return Err(bad());
        };
        let ri = Region::ALL.iter().position(|r| r.name() == region).ok_or_else(bad)?;
        let m = Metric::ALL.into_iter().find(|m| m.name() == metric).ok_or_else(bad)?;
        let v: f64 = value.parse().map_err(|_| bad())?;
        if out.last().is_none_or(|c| c.case_id != id) {
            out.push(RegionMetrics {
                case_id: id.to_string(),
                scores: [RegionScores::default(); 3],
            });
        }
        let s = &mut out.last_mut().expect("pushed above").scores[ri];
        match m {
            Metric::Dice => s.dice = v,
            Metric::Sensitivity => s.sensitivity = v,
            Metric::Specificity => s.specificity = v,
            Metric::Hd95 => s.hd95 = v,
        }
    }
    Ok(out)
}

/// Markdown tables of cohort means (with standard deviations) per region.
pub fn render_report(summary: &CohortSummary) -> String {
    let mut s = format!("# Evaluation report ({} cases)\n\n", summary.n);
    let tables = [
        ("Dice", Metric::Dice),
        ("HD95 (mm)", Metric::Hd95),
        ("Sensitivity", Metric::Sensitivity),
        ("Specificity", Metric::Specificity),
    ];
    s.push_str("| Metric | ET | WT | TC |\n|---|---|---|---|\n");
    for (name, m) in tables {
        s.push_str(&format!("| {name} |"));
        for r in Region::ALL {
            let b = summary.get(r, m);
            s.push_str(&format!(" {:.4} ± {:.4} |", b.mean, b.std));
        }
        s.push('\n');
    }
    s.push_str("\n| Dice | min | q1 | median | q3 | max |\n|---|---|---|---|---|---|\n");
    for r in Region::ALL {
        let b = summary.get(r, Metric::Dice);
        s.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.name(),
            b.min,
            b.q1,
            b.median,
            b.q3,
            b.max
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["resunet"]), 2);
        assert_eq!(dispatch(["resunet", "bogus"]), 2);
        assert_eq!(dispatch(["resunet", "phantom", "--n", "notanumber"]), 2);
        assert_eq!(dispatch(["resunet", "phantom", "--n", "1"]), 2);
        assert_eq!(dispatch(["resunet", "--help"]), 0);
    }

    #[test]
    fn domain_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert_eq!(
            dispatch(["resunet", "evaluate", "--pred", "x", "--gt", missing.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]),
            1
        );
        let out = dir.path().join("d");
        let args = ["resunet", "phantom", "--n", "1", "--dims", "8", "--out", out.to_str().unwrap()];
        assert_eq!(dispatch(args), 1);
    }

    #[test]
    fn phantom_refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let o = out.to_str().unwrap();
        assert_eq!(dispatch(["resunet", "phantom", "--n", "2", "--dims", "32", "--seed", "3", "--out", o]), 0);
        assert_eq!(case_dirs(&out).unwrap().len(), 2);
        assert!(out.join(MANIFEST).exists());
        assert_eq!(dispatch(["resunet", "phantom", "--n", "2", "--dims", "32", "--out", o]), 1);
        assert_eq!(dispatch(["resunet", "phantom", "--n", "2", "--dims", "32", "--out", o, "--force"]), 0);
    }

    #[test]
    fn config_parsing_and_seed_propagation() {
        let cfg = PipelineConfig::parse(
            "seed = 11\n[network]\nbase_filters = 4\n[train]\nepochs = 2\nview_regime = \"mixed_views\"\n[paths]\ndata_root = \"d\"\n",
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!((cfg.train.seed, cfg.phantom.seed), (11, 11));
        assert_eq!(cfg.network.base_filters, 4);
        assert_eq!(cfg.paths.data_root.as_deref(), Some(Path::new("d")));
        let json = PipelineConfig::parse(r#"{"seed": 11, "network": {"base_filters": 4}, "train": {"epochs": 2, "view_regime": "mixed_views"}, "paths": {"data_root": "d"}}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(json.hash(), cfg.hash());
        assert_ne!(PipelineConfig::default().hash(), cfg.hash());
        assert!(PipelineConfig::parse("[network]\ndepth = 0\n").unwrap().resolve().is_err());
    }

    #[test]
    fn per_case_csv_round_trips() {
        let rm = |id: &str, v: f64| RegionMetrics {
            case_id: id.into(),
            scores: [RegionScores {
                dice: v,
                sensitivity: v / 2.0,
                specificity: 1.0,
                hd95: 3.5,
            }; 3],
        };
        let cases = vec![rm("a", 0.25), rm("b", 0.875)];
        let back = parse_per_case_csv(&crate::metrics::per_case_csv(&cases)).unwrap();
        assert_eq!(back, cases);
        assert!(render_report(&aggregate(&back).unwrap()).contains("| Dice |"));
    }

    #[test]
    fn dims_flag() {
        assert_eq!(parse_dims("64").ok(), Some((64, 64, 64)));
        assert_eq!(parse_dims("32x40x48").ok(), Some((32, 40, 48)));
        assert!(parse_dims("3x4").is_err());
    }
}
