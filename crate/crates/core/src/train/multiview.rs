use super::trainer::{train_model_with, EpochRecord};
use super::{TrainConfig, ViewRegime};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{ModelMember, ModelSet};
use crate::nn::{build_network, NetworkConfig};
use crate::preprocess::{extract_all, split_with, PatchSample};
use crate::volume::{MultiModalCase, View};

/// Tumour-bearing patches of every case along `view`; cases must carry labels
/// and be normalised already.
pub fn view_patches(cases: &[MultiModalCase], view: View, patch_size: usize, exec: Execution) -> Result<Vec<PatchSample>> {
    if let Some(c) = cases.iter().find(|c| c.labels().is_none()) {
        return Err(Error::MissingLabels(c.case_id.clone()));
    }
    extract_all(cases, view, patch_size, exec)
}

/// Trains the model set a regime calls for. `patches_for(view)` supplies the
/// patch set of one view; every model uses `cfg.seed` for initialisation,
/// splitting and augmentation, so each ensemble member equals the
/// corresponding single-view model.
pub fn train_regime(
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    exec: Execution,
    patches_for: &mut dyn FnMut(View) -> Result<Vec<PatchSample>>,
    on_epoch: &mut dyn FnMut(View, &EpochRecord),
) -> Result<ModelSet> {
    cfg.validate()?;
    let jobs: Vec<(View, Vec<PatchSample>)> = match cfg.view_regime {
        ViewRegime::SingleView(v) => vec![(v, patches_for(v)?)],
        ViewRegime::PerViewEnsemble => View::ALL
            .iter()
            .map(|&v| Ok((v, patches_for(v)?)))
            .collect::<Result<_>>()?,
        ViewRegime::MixedViews => {
            let mut pooled = Vec::new();
            for v in View::ALL {
                pooled.extend(patches_for(v)?);
            }
            vec![(View::Axial, pooled)]
        }
    };
    let mut members = Vec::with_capacity(jobs.len());
    for (view, patches) in jobs {
        let split = split_with(cfg.split_mode, patches, cfg.train_fraction, cfg.seed)?;
        let mut net = build_network(net_cfg, cfg.seed)?;
        net.set_execution(exec);
        let (net, history) = train_model_with(net, &split, cfg, &mut |r| on_epoch(view, r))?;
        members.push(ModelMember { view, net, history });
    }
    ModelSet::new(cfg.view_regime, members)
}

/// Extracts patches from labelled, normalised cases and trains per `cfg.view_regime`.
pub fn train_multiview(cases: &[MultiModalCase], net_cfg: &NetworkConfig, cfg: &TrainConfig) -> Result<ModelSet> {
    let exec = Execution::from_env();
    train_regime(
        net_cfg,
        cfg,
        exec,
        &mut |v| view_patches(cases, v, cfg.patch_size, exec),
        &mut |_, _| {},
    )
}
