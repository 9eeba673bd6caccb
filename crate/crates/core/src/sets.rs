//! Post-evolution pipeline: per-task Pareto candidates are fine-tuned into
//! specialist models, re-filtered on held-out metrics, and assembled into
//! the exported union of per-task Pareto sets.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolver::Individual;
use crate::genome::{GroupedMask, GroupingMap, GroupingSpec};
use crate::net::{self, Architecture, ReferenceNet, TrainHyper};
use crate::pareto::{self, ObjectivePoint};
use crate::taskbed::{JatBaseline, Task};

/// Where a specialist came from, embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub origin_generation: usize,
    pub individual_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub retained_params: usize,
    pub train_loss_before: f64,
    pub train_loss_after: f64,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
}

/// A fine-tuned subnetwork specialized for one task.
#[derive(Debug, Clone)]
pub struct SpecialistModel {
    pub task_id: usize,
    pub mask: GroupedMask,
    /// Fine-tuned parameters; pruned positions are exactly zero.
    pub params: Vec<f64>,
    pub metrics: ModelMetrics,
    pub provenance: Provenance,
    /// Byte size of the serialized checkpoint.
    pub size_bytes: usize,
}

/// Sparse on-disk form: only the retained parameter values plus the mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub task_id: usize,
    pub mask_hex: String,
    pub unmasked_params: Vec<f64>,
    pub arch: Architecture,
    pub grouping: GroupingSpec,
    pub metrics: ModelMetrics,
    pub provenance: Provenance,
}

impl SpecialistModel {
    pub fn to_checkpoint(&self, arch: &Architecture) -> ModelCheckpoint {
        let multipliers = self.mask.expand();
        let unmasked_params = self
            .params
            .iter()
            .zip(multipliers.iter())
            .filter(|(_, &m)| m == 1.0)
            .map(|(&p, _)| p)
            .collect();
        ModelCheckpoint {
            task_id: self.task_id,
            mask_hex: self.mask.to_hex(),
            unmasked_params,
            arch: arch.clone(),
            grouping: self.mask.grouping().spec(),
            metrics: self.metrics.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn checkpoint_json(&self, arch: &Architecture) -> String {
        serde_json::to_string(&self.to_checkpoint(arch))
            .expect("model serialization cannot fail")
    }
}

/// Rebuild the dense net and mask from a sparse checkpoint.
pub fn load_model_checkpoint(text: &str) -> Result<(ReferenceNet, GroupedMask, ModelCheckpoint)> {
    let cp: ModelCheckpoint = serde_json::from_str(text)?;
    let grouping = std::sync::Arc::new(GroupingMap::from_spec(&cp.grouping)?);
    let mask = GroupedMask::from_hex(&cp.mask_hex, grouping)?;
    let multipliers = mask.expand();
    let mut params = vec![0.0; cp.arch.total_params()];
    let mut values = cp.unmasked_params.iter();
    for (i, &m) in multipliers.iter().enumerate() {
        if m == 1.0 {
            params[i] = *values.next().ok_or_else(|| {
                Error::MaskShape("checkpoint has fewer values than retained positions".to_string())
            })?;
        }
    }
    if values.next().is_some() {
        return Err(Error::MaskShape(
            "checkpoint has more values than retained positions".to_string(),
        ));
    }
    let net = ReferenceNet::new(cp.arch.clone(), params)?;
    Ok((net, mask, cp))
}

/// Front 0 of an evolved population, deduplicated by mask bits (lowest id
/// wins), in id order.
pub fn extract_candidates(population: &[Individual]) -> Vec<Individual> {
    let points: Vec<ObjectivePoint> = population.iter().map(Individual::point).collect();
    let fronts = pareto::nondominated_sort(&points);
    let mut front: Vec<&Individual> = fronts[0].iter().map(|&i| &population[i]).collect();
    front.sort_by_key(|ind| ind.id);
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    front
        .into_iter()
        .filter(|ind| seen.insert(ind.mask.bits().to_vec()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub individual_id: u64,
    pub reason: String,
}

pub struct FinetuneOutcome {
    /// The task's Pareto set after fine-tuning and re-filtering.
    pub models: Vec<SpecialistModel>,
    pub dropped: Vec<DroppedCandidate>,
}

fn is_recoverable_training_failure(err: &Error) -> bool {
    matches!(err, Error::Divergence(_) | Error::Numeric(_))
}

/// Fine-tune every candidate's masked copy of the shared net on the task's
/// full training data (mask frozen, restricted head), measure it on held-out
/// data, and keep the non-dominated subset on (retained parameters, test
/// loss). Diverged candidates are dropped, not fatal. A zero-epoch budget
/// skips training and just measures the evolved masks.
pub fn finetune_all(
    candidates: &[Individual],
    jat: &ReferenceNet,
    task: &Task,
    hyper: &TrainHyper,
    config_hash: &str,
) -> Result<FinetuneOutcome> {
    let arch = jat.arch();
    let outcomes: Vec<std::result::Result<SpecialistModel, (u64, Error)>> = candidates
        .par_iter()
        .map(|cand| {
            let head = Some(task.label_subspace.as_slice());
            let before =
                net::loss_with_head(jat, Some(&cand.mask), &task.train, task.loss_kind, head)
                    .map_err(|e| (cand.id, e))?;
            let tuned = if hyper.epochs == 0 {
                ReferenceNet::new(
                    arch.clone(),
                    jat.masked_params(Some(&cand.mask)).map_err(|e| (cand.id, e))?,
                )
                .map_err(|e| (cand.id, e))?
            } else {
                let per_candidate = TrainHyper {
                    seed: hyper.seed.wrapping_add(cand.id),
                    ..hyper.clone()
                };
                net::train_with_head(jat, Some(&cand.mask), &task.train, &per_candidate, head)
                    .map_err(|e| (cand.id, e))?
            };
            let after = net::loss_with_head(&tuned, None, &task.train, task.loss_kind, head)
                .map_err(|e| (cand.id, e))?;
            let test_loss = net::loss_with_head(&tuned, None, &task.test, task.loss_kind, head)
                .map_err(|e| (cand.id, e))?;
            let test_accuracy = match task.loss_kind {
                net::LossKind::CrossEntropy => Some(
                    crate::taskbed::restricted_accuracy(
                        &tuned,
                        None,
                        &task.test,
                        &task.label_subspace,
                    )
                    .map_err(|e| (cand.id, e))?,
                ),
                net::LossKind::Mse => None,
            };
            let mut model = SpecialistModel {
                task_id: task.id,
                mask: cand.mask.clone(),
                params: tuned.params().to_vec(),
                metrics: ModelMetrics {
                    retained_params: cand.mask.retained_parameter_count(),
                    train_loss_before: before,
                    train_loss_after: after,
                    test_loss,
                    test_accuracy,
                },
                provenance: Provenance {
                    seed: hyper.seed,
                    config_hash: config_hash.to_string(),
                    origin_generation: cand.born_gen,
                    individual_id: cand.id,
                },
                size_bytes: 0,
            };
            model.size_bytes = model.checkpoint_json(arch).len();
            Ok(model)
        })
        .collect();

    let mut models = Vec::new();
    let mut dropped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(model) => models.push(model),
            Err((id, err)) if is_recoverable_training_failure(&err) => {
                dropped.push(DroppedCandidate {
                    individual_id: id,
                    reason: err.to_string(),
                });
            }
            Err((_, err)) => return Err(err),
        }
    }

    Ok(FinetuneOutcome {
        models: pareto_filter(models),
        dropped,
    })
}

fn deployment_point(m: &SpecialistModel) -> ObjectivePoint {
    ObjectivePoint::new(
        m.metrics.retained_params as f64,
        m.metrics.test_loss,
        m.provenance.individual_id,
    )
}

/// Non-dominated subset on (retained parameters, test loss), in a
/// deterministic order.
fn pareto_filter(models: Vec<SpecialistModel>) -> Vec<SpecialistModel> {
    if models.is_empty() {
        return models;
    }
    let points: Vec<ObjectivePoint> = models.iter().map(deployment_point).collect();
    let fronts = pareto::nondominated_sort(&points);
    let mut kept: Vec<SpecialistModel> = fronts[0]
        .iter()
        .map(|&i| models[i].clone())
        .collect();
    kept.sort_by(|a, b| {
        a.metrics
            .retained_params
            .cmp(&b.metrics.retained_params)
            .then(a.metrics.test_loss.partial_cmp(&b.metrics.test_loss).unwrap())
            .then(a.provenance.individual_id.cmp(&b.provenance.individual_id))
    });
    kept
}

/// The union of per-task Pareto sets together with the shared net's own
/// per-task reference metrics.
pub struct SetOfSets {
    pub per_task: Vec<Vec<SpecialistModel>>,
    pub jat_reference: Vec<JatBaseline>,
}

impl SetOfSets {
    /// Flat view of the union.
    pub fn members(&self) -> impl Iterator<Item = &SpecialistModel> {
        self.per_task.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.per_task.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Membership audit: every member must be non-dominated, on its own
    /// task, among all members evaluated on that task.
    pub fn membership_holds(&self) -> bool {
        self.per_task.iter().all(|set| {
            set.iter().all(|m| {
                !set.iter().any(|other| {
                    !std::ptr::eq(m, other)
                        && pareto::dominates(&deployment_point(other), &deployment_point(m))
                })
            })
        })
    }
}

/// Apply the membership rule: within each task keep the non-dominated
/// subset (a model belongs iff no other model evaluated on that task
/// dominates it in size and loss), collapse duplicate (task, mask) entries,
/// and take the union.
pub fn assemble(
    per_task: Vec<Vec<SpecialistModel>>,
    jat_reference: Vec<JatBaseline>,
) -> SetOfSets {
    let per_task = per_task
        .into_iter()
        .map(|set| {
            let mut seen: HashSet<Vec<u8>> = HashSet::new();
            let deduped: Vec<SpecialistModel> = set
                .into_iter()
                .filter(|m| seen.insert(m.mask.bits().to_vec()))
                .collect();
            pareto_filter(deduped)
        })
        .collect();
    SetOfSets {
        per_task,
        jat_reference,
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    task_id: usize,
    file: String,
    mask_hex: String,
    retained_params: usize,
    size_bytes: usize,
    train_loss_before: f64,
    train_loss_after: f64,
    test_loss: f64,
    test_accuracy: Option<f64>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: serde_json::Value,
    config_hash: String,
    seed: u64,
    jat_reference: Vec<JatBaseline>,
    models: Vec<ManifestRecord>,
}

/// Write per-model checkpoints, per-task front CSVs, and the manifest.
/// Returns the manifest path.
pub fn export(
    set: &SetOfSets,
    arch: &Architecture,
    out_dir: &Path,
    config_echo: serde_json::Value,
    config_hash: &str,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(set.len());
    for (t, task_set) in set.per_task.iter().enumerate() {
        let task_id = t + 1;
        let mut csv = String::new();
        csv.push_str(&format!("# config_hash={config_hash},seed={seed}\n"));
        csv.push_str("task_id,retained_params,size_bytes,train_loss,test_loss,test_accuracy\n");
        for (idx, model) in task_set.iter().enumerate() {
            let file = format!("model_t{task_id}_{idx:03}.json");
            std::fs::write(out_dir.join(&file), model.checkpoint_json(arch))?;
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                model.task_id,
                model.metrics.retained_params,
                model.size_bytes,
                model.metrics.train_loss_after,
                model.metrics.test_loss,
                model
                    .metrics
                    .test_accuracy
                    .map(|a| a.to_string())
                    .unwrap_or_default(),
            ));
            records.push(ManifestRecord {
                task_id: model.task_id,
                file,
                mask_hex: model.mask.to_hex(),
                retained_params: model.metrics.retained_params,
                size_bytes: model.size_bytes,
                train_loss_before: model.metrics.train_loss_before,
                train_loss_after: model.metrics.train_loss_after,
                test_loss: model.metrics.test_loss,
                test_accuracy: model.metrics.test_accuracy,
                provenance: model.provenance.clone(),
            });
        }
        std::fs::write(out_dir.join(format!("front_task_{task_id}.csv")), csv)?;
    }
    let manifest = Manifest {
        config: config_echo,
        config_hash: config_hash.to_string(),
        seed,
        jat_reference: set.jat_reference.clone(),
        models: records,
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{build_grouping, Granularity};
    use crate::net::{Activation, Batch, Labels, OutputKind};
    use crate::taskbed::{generate_suite, pretrain_jat, GeneratorKind, Suite, SuiteSpec};
    use std::sync::Arc;

    fn tiny_setup() -> (ReferenceNet, Suite, Arc<GroupingMap>) {
        let suite = generate_suite(&SuiteSpec {
            generator: GeneratorKind::GaussianClusters,
            n_classes: 4,
            samples_per_class: 15,
            input_dim: 6,
            cluster_spread: 0.35,
            task_splits: vec![vec![0, 1], vec![2, 3]],
            seed: 21,
            csv_path: None,
        })
        .unwrap();
        let arch = Architecture::new(
            vec![6, 10, 4],
            Activation::Relu,
            OutputKind::SoftmaxLogits,
        );
        let jat = pretrain_jat(
            &arch,
            &suite.full_train,
            &TrainHyper {
                lr: 0.05,
                lr_decay: 0.99,
                epochs: 40,
                batch_size: 16,
                seed: 22,
            },
        )
        .unwrap();
        let grouping = Arc::new(build_grouping(&arch, Granularity::PerNeuron).unwrap());
        (jat, suite, grouping)
    }

    fn individual(id: u64, mask: GroupedMask, phi1: f64, phi2: f64) -> Individual {
        Individual {
            id,
            task: 0,
            mask,
            phi1,
            phi2,
            parents: None,
            transfer: false,
            born_gen: 3,
        }
    }

    fn distinct_mask(grouping: &Arc<GroupingMap>, index: usize) -> GroupedMask {
        // Binary-encode the index so every mask pattern is unique.
        let bits = (0..grouping.bit_count())
            .map(|j| ((index >> j) & 1) as u8)
            .collect();
        GroupedMask::new(bits, grouping.clone()).unwrap()
    }

    #[test]
    fn extract_keeps_only_the_dominator() {
        let (_, _, grouping) = tiny_setup();
        let pop = vec![
            individual(0, distinct_mask(&grouping, 0), 0.5, 0.5),
            individual(1, distinct_mask(&grouping, 1), 0.1, 0.1),
            individual(2, distinct_mask(&grouping, 2), 0.8, 0.9),
        ];
        let got = extract_candidates(&pop);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, 1);
    }

    #[test]
    fn extract_keeps_all_mutually_nondominated() {
        let (_, _, grouping) = tiny_setup();
        let pop = vec![
            individual(0, distinct_mask(&grouping, 0), 0.1, 0.9),
            individual(1, distinct_mask(&grouping, 1), 0.5, 0.5),
            individual(2, distinct_mask(&grouping, 2), 0.9, 0.1),
        ];
        assert_eq!(extract_candidates(&pop).len(), 3);
    }

    #[test]
    fn extract_deduplicates_identical_masks() {
        let (_, _, grouping) = tiny_setup();
        let shared = distinct_mask(&grouping, 0);
        let pop = vec![
            individual(0, shared.clone(), 0.1, 0.9),
            individual(1, shared, 0.1, 0.9),
            individual(2, distinct_mask(&grouping, 2), 0.9, 0.1),
        ];
        let got = extract_candidates(&pop);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].id, 0);
    }

    #[test]
    fn extract_matches_pairwise_oracle() {
        let (_, _, grouping) = tiny_setup();
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let pop: Vec<Individual> = (0..40)
            .map(|i| {
                individual(
                    i,
                    distinct_mask(&grouping, i as usize),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let got: Vec<u64> = extract_candidates(&pop).iter().map(|c| c.id).collect();
        let mut want: Vec<u64> = pop
            .iter()
            .filter(|a| {
                !pop.iter().any(|b| {
                    pareto::dominates(&b.point(), &a.point())
                })
            })
            .map(|a| a.id)
            .collect();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    fn finetune_hyper(epochs: usize) -> TrainHyper {
        TrainHyper {
            lr: 0.005,
            lr_decay: 0.97,
            epochs,
            batch_size: 16,
            seed: 900,
        }
    }

    #[test]
    fn zero_epoch_budget_measures_evolved_masks() {
        let (jat, suite, grouping) = tiny_setup();
        let task = &suite.tasks[0];
        let cands = vec![
            individual(0, GroupedMask::all_ones(grouping.clone()), 1.0, 0.1),
            individual(1, distinct_mask(&grouping, 3), 0.9, 0.2),
        ];
        let out = finetune_all(&cands, &jat, task, &finetune_hyper(0), "hash").unwrap();
        assert!(out.dropped.is_empty());
        // No training happened: post-tune train loss equals the masked
        // net's loss.
        for model in &out.models {
            let cand = cands
                .iter()
                .find(|c| c.id == model.provenance.individual_id)
                .unwrap();
            let direct = net::loss_with_head(
                &jat,
                Some(&cand.mask),
                &task.train,
                task.loss_kind,
                Some(&task.label_subspace),
            )
            .unwrap();
            assert_eq!(model.metrics.train_loss_before, direct);
            assert_eq!(model.metrics.train_loss_after, direct);
        }
    }

    #[test]
    fn full_mask_candidate_stays_close_to_the_jat() {
        let (jat, suite, grouping) = tiny_setup();
        let task = &suite.tasks[0];
        let cands = vec![individual(0, GroupedMask::all_ones(grouping), 1.0, 0.0)];
        let out = finetune_all(&cands, &jat, task, &finetune_hyper(20), "hash").unwrap();
        assert_eq!(out.models.len(), 1);
        let jat_test = net::loss_with_head(
            &jat,
            None,
            &task.test,
            task.loss_kind,
            Some(&task.label_subspace),
        )
        .unwrap();
        assert!(
            out.models[0].metrics.test_loss <= jat_test + 0.05,
            "specialist {} vs jat {}",
            out.models[0].metrics.test_loss,
            jat_test
        );
    }

    #[test]
    fn finetuned_params_respect_the_mask() {
        let (jat, suite, grouping) = tiny_setup();
        let task = &suite.tasks[1];
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mask = GroupedMask::random(grouping, 0.6, &mut rng).repair(0.125);
        let cands = vec![individual(0, mask.clone(), 0.5, 0.5)];
        let out = finetune_all(&cands, &jat, task, &finetune_hyper(15), "hash").unwrap();
        for model in &out.models {
            assert_eq!(model.params, mask.apply(&model.params));
        }
    }

    fn stub_model(
        grouping: &Arc<GroupingMap>,
        task_id: usize,
        mask_seed: usize,
        retained: usize,
        test_loss: f64,
        id: u64,
    ) -> SpecialistModel {
        SpecialistModel {
            task_id,
            mask: distinct_mask(grouping, mask_seed),
            params: vec![0.0; grouping.total_params()],
            metrics: ModelMetrics {
                retained_params: retained,
                train_loss_before: 1.0,
                train_loss_after: 0.5,
                test_loss,
                test_accuracy: Some(0.9),
            },
            provenance: Provenance {
                seed: 0,
                config_hash: "h".to_string(),
                origin_generation: 0,
                individual_id: id,
            },
            size_bytes: 100,
        }
    }

    #[test]
    fn assemble_unions_disjoint_sets() {
        let (_, _, grouping) = tiny_setup();
        let ps1 = vec![
            stub_model(&grouping, 1, 0, 10, 0.5, 0),
            stub_model(&grouping, 1, 1, 20, 0.3, 1),
        ];
        let ps2 = vec![stub_model(&grouping, 2, 2, 15, 0.4, 2)];
        let set = assemble(vec![ps1, ps2], Vec::new());
        assert_eq!(set.len(), 3);
        assert!(set.membership_holds());
    }

    #[test]
    fn assemble_collapses_duplicates() {
        let (_, _, grouping) = tiny_setup();
        let ps1 = vec![
            stub_model(&grouping, 1, 0, 10, 0.5, 0),
            stub_model(&grouping, 1, 0, 10, 0.5, 1),
        ];
        let set = assemble(vec![ps1], Vec::new());
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn assemble_excludes_an_injected_dominated_model() {
        let (_, _, grouping) = tiny_setup();
        let ps1 = vec![
            stub_model(&grouping, 1, 0, 10, 0.5, 0),
            stub_model(&grouping, 1, 1, 30, 0.2, 1),
            // Dominated: bigger and worse than model 0.
            stub_model(&grouping, 1, 2, 40, 0.9, 2),
        ];
        let set = assemble(vec![ps1], Vec::new());
        assert_eq!(set.len(), 2);
        assert!(set
            .members()
            .all(|m| m.provenance.individual_id != 2));
        // Pairwise dominance oracle over the survivors.
        assert!(set.membership_holds());
    }

    #[test]
    fn export_of_empty_set_is_valid_json() {
        let dir = tempfile::tempdir().unwrap();
        let set = SetOfSets {
            per_task: vec![Vec::new(), Vec::new()],
            jat_reference: Vec::new(),
        };
        let arch = Architecture::new(
            vec![6, 10, 4],
            Activation::Relu,
            OutputKind::SoftmaxLogits,
        );
        let path = export(
            &set,
            &arch,
            dir.path(),
            serde_json::json!({}),
            "hash",
            0,
        )
        .unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(manifest["models"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn exported_model_reloads_with_identical_outputs() {
        let (jat, suite, grouping) = tiny_setup();
        let task = &suite.tasks[0];
        let cands = vec![individual(4, distinct_mask(&grouping, 4), 0.9, 0.2)];
        let out = finetune_all(&cands, &jat, task, &finetune_hyper(10), "hash").unwrap();
        let model = &out.models[0];
        let text = model.checkpoint_json(jat.arch());
        let (net_back, mask_back, cp) = load_model_checkpoint(&text).unwrap();
        assert_eq!(net_back.params(), &model.params[..]);
        assert_eq!(mask_back.bits(), model.mask.bits());
        assert_eq!(cp.task_id, task.id);

        let probe = Batch::new(
            vec![0.1, -0.2, 0.4, 0.9, -0.5, 0.3],
            1,
            6,
            Labels::Classes(vec![0]),
        )
        .unwrap();
        let direct = net::forward(
            &ReferenceNet::new(jat.arch().clone(), model.params.clone()).unwrap(),
            None,
            probe.inputs(),
            1,
        )
        .unwrap();
        let reloaded = net::forward(&net_back, None, probe.inputs(), 1).unwrap();
        assert_eq!(direct, reloaded);
    }

    #[test]
    fn pruned_checkpoints_are_substantially_smaller() {
        let (jat, _, grouping) = tiny_setup();
        let full = GroupedMask::all_ones(grouping.clone());
        // Half the groups off.
        let bits: Vec<u8> = (0..grouping.bit_count()).map(|i| (i % 2) as u8).collect();
        let half = GroupedMask::new(bits, grouping.clone()).unwrap();

        let build = |mask: &GroupedMask| {
            let mut m = stub_model(&grouping, 1, 0, mask.retained_parameter_count(), 0.5, 0);
            m.mask = mask.clone();
            m.params = mask.apply(jat.params());
            m.checkpoint_json(jat.arch()).len()
        };
        let full_size = build(&full);
        let half_size = build(&half);
        assert!(
            (half_size as f64) < 0.6 * full_size as f64,
            "half {half_size} vs full {full_size}"
        );
    }
}
