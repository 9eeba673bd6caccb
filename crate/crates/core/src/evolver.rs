//! The multitask neuroevolution engine.
//!
//! K populations of grouped binary masks evolve simultaneously over one
//! shared net. Every generation runs `population_size * K / 2` pairing
//! iterations over the pooled parent sets: same-task pairs recombine
//! normally, cross-task pairs recombine with the configured transfer
//! probability (each offspring landing on one parent's task), and declined
//! cross-task pairs fall back to two independent within-task recombinations
//! so every iteration yields exactly two evaluated offspring. Elitist
//! truncation then rebuilds each population.
//!
//! In singletask mode the transfer branch is disabled outright, which makes
//! the engine an independent elitist bi-objective search per task at the
//! exact same evaluation budget.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{self, GroupedMask, GroupingMap};
use crate::net::ReferenceNet;
use crate::pareto::{
    self, HypervolumeTrend, ObjectiveBounds, ObjectivePoint, HV_REFERENCE,
};
use crate::taskbed::{self, Task};

pub const DEFAULT_TRANSFER_PROBABILITY: f64 = 0.3;

/// Initial mask densities are drawn per individual from this range.
pub const INIT_DENSITY_RANGE: (f64, f64) = (0.3, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Multitask,
    Singletask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub k: usize,
    /// Population size per task; even, at least 4.
    pub population_size: usize,
    pub generations: usize,
    /// Symmetric K x K cross-task recombination probabilities; the diagonal
    /// is ignored.
    pub transfer: Vec<Vec<f64>>,
    /// Per-bit flip probability; `None` means 1/D.
    pub mutation_rate: Option<f64>,
    pub min_active_fraction: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl EngineConfig {
    pub fn uniform_transfer(k: usize, p: f64) -> Vec<Vec<f64>> {
        vec![vec![p; k]; k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("engine.k", "need at least one task"));
        }
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return Err(Error::validation(
                "engine.population_size",
                "population size must be even and >= 4",
            ));
        }
        if self.generations == 0 {
            return Err(Error::validation(
                "engine.generations",
                "need at least 1 generation",
            ));
        }
        if self.transfer.len() != self.k
            || self.transfer.iter().any(|row| row.len() != self.k)
        {
            return Err(Error::validation(
                "engine.transfer_matrix",
                format!("matrix must be {k} x {k}", k = self.k),
            ));
        }
        for a in 0..self.k {
            for b in 0..self.k {
                let p = self.transfer[a][b];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::validation(
                        "engine.transfer_matrix",
                        format!("p[{a}][{b}] = {p} outside [0, 1]"),
                    ));
                }
                if a != b && self.transfer[a][b] != self.transfer[b][a] {
                    return Err(Error::validation(
                        "engine.transfer_matrix",
                        "matrix must be symmetric",
                    ));
                }
            }
        }
        if let Some(rate) = self.mutation_rate {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::validation(
                    "engine.mutation_rate",
                    "rate must be in [0, 1]",
                ));
            }
        }
        if !(self.min_active_fraction > 0.0 && self.min_active_fraction <= 1.0) {
            return Err(Error::validation(
                "engine.min_active_fraction",
                "fraction must be in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// One evaluated candidate: a mask bound to a task, with both objectives.
#[derive(Debug, Clone)]
pub struct Individual {
    /// Monotone counter, unique within a run.
    pub id: u64,
    /// 0-based task index (the skill factor).
    pub task: usize,
    pub mask: GroupedMask,
    /// Normalized size objective.
    pub phi1: f64,
    /// Loss objective on the task's evaluation subset.
    pub phi2: f64,
    pub parents: Option<(u64, u64)>,
    /// True when the parents came from two different tasks.
    pub transfer: bool,
    pub born_gen: usize,
}

impl Individual {
    pub fn point(&self) -> ObjectivePoint {
        ObjectivePoint::new(self.phi1, self.phi2, self.id)
    }
}

/// One audit-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub gen: usize,
    pub per_task_hv: Vec<f64>,
    pub evals: u64,
    pub transfer_events: u64,
    pub elapsed_ms: u64,
}

pub struct EngineState {
    pub populations: Vec<Vec<Individual>>,
    pub trends: Vec<HypervolumeTrend>,
    pub generation: usize,
    pub eval_count: u64,
    /// All-time non-dominated objective points per task; hypervolume is
    /// measured on this archive so the trend is exactly non-decreasing.
    archives: Vec<Vec<ObjectivePoint>>,
    /// Normalization frozen at generation 0: f1 is already in [0, 1], the
    /// f2 ceiling is the worst initial loss of the task.
    bounds: Vec<ObjectiveBounds>,
    grouping: Arc<GroupingMap>,
    rng: ChaCha8Rng,
    next_id: u64,
}

fn evaluate_jobs(
    jobs: &[(usize, GroupedMask)],
    jat: &ReferenceNet,
    tasks: &[Task],
) -> Result<Vec<f64>> {
    jobs.par_iter()
        .map(|(task, mask)| taskbed::evaluate(mask, jat, &tasks[*task]))
        .collect()
}

fn insert_into_archive(archive: &mut Vec<ObjectivePoint>, new_points: &[ObjectivePoint]) {
    archive.extend_from_slice(new_points);
    let fronts = pareto::nondominated_sort(archive);
    let mut kept: Vec<ObjectivePoint> = fronts[0].iter().map(|&i| archive[i]).collect();
    // Exact objective-space duplicates add nothing to the hypervolume.
    kept.sort_by(|a, b| {
        a.f1.partial_cmp(&b.f1)
            .unwrap()
            .then(a.f2.partial_cmp(&b.f2).unwrap())
            .then(a.owner.cmp(&b.owner))
    });
    kept.dedup_by(|a, b| a.f1 == b.f1 && a.f2 == b.f2);
    *archive = kept;
}

fn archive_hypervolume(archive: &[ObjectivePoint], bounds: &ObjectiveBounds) -> f64 {
    let normalized: Vec<ObjectivePoint> = archive.iter().map(|p| bounds.apply(p)).collect();
    pareto::hypervolume_2d(&normalized, HV_REFERENCE)
}

/// Build and evaluate the K random initial populations and record the
/// generation-0 hypervolume.
pub fn init(
    config: &EngineConfig,
    jat: &ReferenceNet,
    tasks: &[Task],
    grouping: Arc<GroupingMap>,
) -> Result<EngineState> {
    config.validate()?;
    if tasks.len() != config.k {
        return Err(Error::validation(
            "engine.k",
            format!("{} tasks given but k = {}", tasks.len(), config.k),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut next_id = 0u64;
    let mut jobs = Vec::with_capacity(config.k * config.population_size);
    for task in 0..config.k {
        for _ in 0..config.population_size {
            let density = rng.random_range(INIT_DENSITY_RANGE.0..=INIT_DENSITY_RANGE.1);
            let mask = GroupedMask::random(grouping.clone(), density, &mut rng)
                .repair(config.min_active_fraction);
            jobs.push((task, mask));
        }
    }
    let losses = evaluate_jobs(&jobs, jat, tasks)?;

    let mut populations: Vec<Vec<Individual>> = vec![Vec::new(); config.k];
    for ((task, mask), phi2) in jobs.into_iter().zip(losses) {
        let phi1 = mask.size_objective();
        populations[task].push(Individual {
            id: next_id,
            task,
            mask,
            phi1,
            phi2,
            parents: None,
            transfer: false,
            born_gen: 0,
        });
        next_id += 1;
    }

    let mut archives = Vec::with_capacity(config.k);
    let mut bounds = Vec::with_capacity(config.k);
    let mut trends = Vec::with_capacity(config.k);
    for (task, pop) in populations.iter().enumerate() {
        let worst = pop.iter().map(|ind| ind.phi2).fold(f64::NEG_INFINITY, f64::max);
        let b = ObjectiveBounds {
            f1: (0.0, 1.0),
            f2: (0.0, worst.max(1e-12)),
        };
        let mut archive = Vec::new();
        let points: Vec<ObjectivePoint> = pop.iter().map(Individual::point).collect();
        insert_into_archive(&mut archive, &points);
        let mut trend = HypervolumeTrend::new(task + 1);
        trend.push(0, archive_hypervolume(&archive, &b));
        archives.push(archive);
        bounds.push(b);
        trends.push(trend);
    }

    Ok(EngineState {
        populations,
        trends,
        generation: 0,
        eval_count: (config.k * config.population_size) as u64,
        archives,
        bounds,
        grouping,
        rng,
        next_id,
    })
}

/// Audit line for the freshly initialized state.
pub fn init_record(state: &EngineState, config: &EngineConfig, elapsed_ms: u64) -> GenerationRecord {
    GenerationRecord {
        gen: 0,
        per_task_hv: state
            .trends
            .iter()
            .map(|t| t.final_hv().unwrap())
            .collect(),
        evals: (config.k * config.population_size) as u64,
        transfer_events: 0,
        elapsed_ms,
    }
}

/// Binary-tournament parent selection: sample two with replacement, prefer
/// lower front rank, then higher crowding distance; a full tie keeps the
/// first contestant so indifferent selection stays unbiased.
pub fn select_parents<R: Rng + ?Sized>(
    population: &[Individual],
    rng: &mut R,
) -> Vec<Individual> {
    let n = population.len();
    let points: Vec<ObjectivePoint> = population.iter().map(Individual::point).collect();
    let fronts = pareto::nondominated_sort(&points);
    let mut rank = vec![0usize; n];
    let mut crowd = vec![0.0f64; n];
    for (r, front) in fronts.iter().enumerate() {
        let front_points: Vec<ObjectivePoint> = front.iter().map(|&i| points[i]).collect();
        let d = pareto::crowding_distance(&front_points);
        for (w, &i) in front.iter().enumerate() {
            rank[i] = r;
            crowd[i] = d[w];
        }
    }

    let mut parents = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let winner = if rank[b] < rank[a] || (rank[b] == rank[a] && crowd[b] > crowd[a]) {
            b
        } else {
            a
        };
        parents.push(population[winner].clone());
    }
    parents
}

struct OffspringPlan {
    task: usize,
    mask: GroupedMask,
    parents: (u64, u64),
    transfer: bool,
}

/// One generation: parent selection, pooled pairing with optional cross-task
/// recombination, offspring evaluation, elitist truncation, archive and
/// trend update.
pub fn generation_step(
    state: &mut EngineState,
    config: &EngineConfig,
    jat: &ReferenceNet,
    tasks: &[Task],
) -> Result<GenerationRecord> {
    let start = Instant::now();
    let gamma = config.population_size;
    let k = config.k;
    let mutation_rate = config
        .mutation_rate
        .unwrap_or(1.0 / state.grouping.bit_count() as f64);

    let parent_sets: Vec<Vec<Individual>> = (0..k)
        .map(|i| select_parents(&state.populations[i], &mut state.rng))
        .collect();

    let mut plans: Vec<OffspringPlan> = Vec::with_capacity(gamma * k);
    let mut transfer_events = 0u64;
    let vary = |mask: GroupedMask, rng: &mut ChaCha8Rng| -> GroupedMask {
        genome::mutate(&mask, mutation_rate, rng).repair(config.min_active_fraction)
    };

    for _ in 0..gamma * k / 2 {
        let pick1 = state.rng.random_range(0..gamma * k);
        let pick2 = state.rng.random_range(0..gamma * k);
        let (ta, pa) = (pick1 / gamma, pick1 % gamma);
        let (tb, pb) = (pick2 / gamma, pick2 % gamma);
        let a = &parent_sets[ta][pa];
        let b = &parent_sets[tb][pb];

        if ta == tb {
            let (c1, c2) = genome::crossover(&a.mask, &b.mask, &mut state.rng)?;
            let c1 = vary(c1, &mut state.rng);
            let c2 = vary(c2, &mut state.rng);
            plans.push(OffspringPlan {
                task: ta,
                mask: c1,
                parents: (a.id, b.id),
                transfer: false,
            });
            plans.push(OffspringPlan {
                task: ta,
                mask: c2,
                parents: (a.id, b.id),
                transfer: false,
            });
        } else if config.mode == Mode::Multitask
            && state.rng.random::<f64>() < config.transfer[ta][tb]
        {
            transfer_events += 1;
            let (c1, c2) = genome::crossover(&a.mask, &b.mask, &mut state.rng)?;
            let c1 = vary(c1, &mut state.rng);
            let c2 = vary(c2, &mut state.rng);
            // Each offspring is evaluated on exactly one of the two tasks.
            let (first, second) = if state.rng.random::<f64>() < 0.5 {
                (ta, tb)
            } else {
                (tb, ta)
            };
            plans.push(OffspringPlan {
                task: first,
                mask: c1,
                parents: (a.id, b.id),
                transfer: true,
            });
            plans.push(OffspringPlan {
                task: second,
                mask: c2,
                parents: (a.id, b.id),
                transfer: true,
            });
        } else {
            // Declined transfer: one extra parent per side, two
            // within-task recombinations, one offspring each.
            let extra_a = &parent_sets[ta][state.rng.random_range(0..gamma)];
            let (c1, _) = genome::crossover(&a.mask, &extra_a.mask, &mut state.rng)?;
            let c1 = vary(c1, &mut state.rng);
            plans.push(OffspringPlan {
                task: ta,
                mask: c1,
                parents: (a.id, extra_a.id),
                transfer: false,
            });
            let extra_b = &parent_sets[tb][state.rng.random_range(0..gamma)];
            let (d1, _) = genome::crossover(&b.mask, &extra_b.mask, &mut state.rng)?;
            let d1 = vary(d1, &mut state.rng);
            plans.push(OffspringPlan {
                task: tb,
                mask: d1,
                parents: (b.id, extra_b.id),
                transfer: false,
            });
        }
    }

    let jobs: Vec<(usize, GroupedMask)> = plans
        .iter()
        .map(|p| (p.task, p.mask.clone()))
        .collect();
    let losses = evaluate_jobs(&jobs, jat, tasks)?;
    state.eval_count += jobs.len() as u64;

    let mut offspring: Vec<Vec<Individual>> = vec![Vec::new(); k];
    for (plan, phi2) in plans.into_iter().zip(losses) {
        let phi1 = plan.mask.size_objective();
        offspring[plan.task].push(Individual {
            id: state.next_id,
            task: plan.task,
            mask: plan.mask,
            phi1,
            phi2,
            parents: Some(plan.parents),
            transfer: plan.transfer,
            born_gen: state.generation + 1,
        });
        state.next_id += 1;
    }

    state.generation += 1;
    let mut per_task_hv = Vec::with_capacity(k);
    for task in 0..k {
        let new_points: Vec<ObjectivePoint> =
            offspring[task].iter().map(Individual::point).collect();

        let mut union = std::mem::take(&mut state.populations[task]);
        union.append(&mut offspring[task]);
        let union_points: Vec<ObjectivePoint> = union.iter().map(Individual::point).collect();
        let picked = pareto::environmental_select(&union_points, gamma)?;
        let mut keep = vec![false; union.len()];
        for &i in &picked {
            keep[i] = true;
        }
        let mut next: Vec<Individual> = union
            .into_iter()
            .zip(keep)
            .filter_map(|(ind, k)| k.then_some(ind))
            .collect();
        next.sort_by_key(|ind| ind.id);
        debug_assert_eq!(next.len(), gamma);
        state.populations[task] = next;

        insert_into_archive(&mut state.archives[task], &new_points);
        let hv = archive_hypervolume(&state.archives[task], &state.bounds[task]);
        debug_assert!(
            hv + 1e-15 >= state.trends[task].final_hv().unwrap_or(0.0),
            "archive hypervolume regressed"
        );
        state.trends[task].push(state.generation, hv);
        per_task_hv.push(hv);
    }

    Ok(GenerationRecord {
        gen: state.generation,
        per_task_hv,
        evals: jobs.len() as u64,
        transfer_events,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

pub struct RunOutput {
    pub populations: Vec<Vec<Individual>>,
    pub trends: Vec<HypervolumeTrend>,
    pub audit: Vec<GenerationRecord>,
    pub eval_count: u64,
}

/// Full run: init plus `generations` steps. `on_generation` sees every
/// audit record as soon as it exists, so partial logs survive a failure.
pub fn run<F>(
    config: &EngineConfig,
    jat: &ReferenceNet,
    tasks: &[Task],
    grouping: Arc<GroupingMap>,
    mut on_generation: F,
) -> Result<RunOutput>
where
    F: FnMut(&GenerationRecord) -> Result<()>,
{
    let start = Instant::now();
    let mut state = init(config, jat, tasks, grouping)?;
    let mut audit = Vec::with_capacity(config.generations + 1);
    let first = init_record(&state, config, start.elapsed().as_millis() as u64);
    on_generation(&first)?;
    audit.push(first);
    for _ in 0..config.generations {
        let record = generation_step(&mut state, config, jat, tasks)?;
        on_generation(&record)?;
        audit.push(record);
    }
    Ok(RunOutput {
        populations: state.populations,
        trends: state.trends,
        audit,
        eval_count: state.eval_count,
    })
}
