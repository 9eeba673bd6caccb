//! Pareto dominance, non-dominated sorting, crowding distance, elitist
//! environmental selection, and exact two-objective hypervolume.
//!
//! Everything here minimizes both objectives. Populations stay small (a few
//! hundred points), so the dominance-count sort is the plain O(n^2) one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference point used for hypervolume in normalized objective space,
/// slightly outside the unit square so boundary solutions contribute area.
pub const HV_REFERENCE: (f64, f64) = (1.05, 1.05);

/// One individual's objective pair. `owner` is the individual id, used for
/// deterministic tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectivePoint {
    pub f1: f64,
    pub f2: f64,
    pub owner: u64,
}

impl ObjectivePoint {
    pub fn new(f1: f64, f2: f64, owner: u64) -> Self {
        ObjectivePoint { f1, f2, owner }
    }
}

/// Strict Pareto dominance: no worse in both objectives, better in at least
/// one.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    a.f1 <= b.f1 && a.f2 <= b.f2 && (a.f1 < b.f1 || a.f2 < b.f2)
}

/// Fast non-dominated sorting by dominance counts. Returns fronts of
/// indices into `points`; front 0 is dominated by nothing.
pub fn nondominated_sort(points: &[ObjectivePoint]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if dominates(&points[i], &points[j]) {
                dominated_by[i].push(j);
            } else if dominates(&points[j], &points[i]) {
                count[i] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// NSGA-II crowding distance for one front, aligned with the input order.
/// Boundary points get infinity; when an objective has zero range it
/// contributes nothing.
pub fn crowding_distance(front: &[ObjectivePoint]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n == 0 {
        return distance;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for objective in 0..2 {
        let value = |i: usize| match objective {
            0 => front[i].f1,
            _ => front[i].f2,
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            value(a)
                .partial_cmp(&value(b))
                .unwrap()
                .then(a.cmp(&b))
        });
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let span = value(order[n - 1]) - value(order[0]);
        if span > 0.0 {
            for w in 1..n - 1 {
                let gap = value(order[w + 1]) - value(order[w - 1]);
                distance[order[w]] += gap / span;
            }
        }
    }
    distance
}

/// Elitist truncation to `gamma` members: admit whole fronts in rank order,
/// then split the last front by descending crowding distance, ties broken
/// by lower owner id. Returns indices into `union`.
pub fn environmental_select(union: &[ObjectivePoint], gamma: usize) -> Result<Vec<usize>> {
    if union.len() < gamma {
        return Err(Error::UndersizedUnion {
            need: gamma,
            have: union.len(),
        });
    }
    let fronts = nondominated_sort(union);
    let mut selected = Vec::with_capacity(gamma);
    for front in fronts {
        if selected.len() == gamma {
            break;
        }
        if selected.len() + front.len() <= gamma {
            selected.extend(front);
            continue;
        }
        let pts: Vec<ObjectivePoint> = front.iter().map(|&i| union[i]).collect();
        let crowd = crowding_distance(&pts);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| {
            crowd[b]
                .partial_cmp(&crowd[a])
                .unwrap()
                .then(union[front[a]].owner.cmp(&union[front[b]].owner))
        });
        for w in order.into_iter().take(gamma - selected.len()) {
            selected.push(front[w]);
        }
    }
    Ok(selected)
}

/// Exact dominated area relative to `reference`: the union of the boxes
/// `[f1, r1] x [f2, r2]`, computed as disjoint slabs after sorting the
/// non-dominated points by f1. Points at or beyond the reference in either
/// coordinate contribute nothing.
pub fn hypervolume_2d(points: &[ObjectivePoint], reference: (f64, f64)) -> f64 {
    let (r1, r2) = reference;
    let mut inside: Vec<&ObjectivePoint> = points
        .iter()
        .filter(|p| p.f1 < r1 && p.f2 < r2)
        .collect();
    inside.sort_by(|a, b| a.f1.partial_cmp(&b.f1).unwrap().then(a.f2.partial_cmp(&b.f2).unwrap()));

    let mut hv = 0.0;
    let mut best_f2 = r2;
    for p in inside {
        if p.f2 < best_f2 {
            hv += (r1 - p.f1) * (best_f2 - p.f2);
            best_f2 = p.f2;
        }
    }
    hv
}

/// Fixed per-run normalization bounds, one (min, max) pair per objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBounds {
    pub f1: (f64, f64),
    pub f2: (f64, f64),
}

impl ObjectiveBounds {
    pub fn validate(&self) -> Result<()> {
        if self.f1.1 <= self.f1.0 || self.f2.1 <= self.f2.0 {
            return Err(Error::DegenerateBounds(format!(
                "f1 {:?}, f2 {:?}",
                self.f1, self.f2
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: &ObjectivePoint) -> ObjectivePoint {
        let norm = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        ObjectivePoint {
            f1: norm(p.f1, self.f1),
            f2: norm(p.f2, self.f2),
            owner: p.owner,
        }
    }
}

/// Affine map of raw objective pairs into the unit square, clipped.
pub fn normalize_for_hv(
    points: &[ObjectivePoint],
    bounds: &ObjectiveBounds,
) -> Result<Vec<ObjectivePoint>> {
    bounds.validate()?;
    Ok(points.iter().map(|p| bounds.apply(p)).collect())
}

/// Per-task hypervolume time series in normalized objective space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypervolumeTrend {
    pub task_id: usize,
    pub reference: (f64, f64),
    /// (generation, hypervolume), generations strictly increasing.
    pub entries: Vec<(usize, f64)>,
}

impl HypervolumeTrend {
    pub fn new(task_id: usize) -> Self {
        HypervolumeTrend {
            task_id,
            reference: HV_REFERENCE,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, generation: usize, hv: f64) {
        if let Some(&(last, _)) = self.entries.last() {
            assert!(generation > last, "generations must strictly increase");
        }
        assert!(
            hv >= 0.0 && hv <= self.reference.0 * self.reference.1,
            "hypervolume {hv} outside normalized range"
        );
        self.entries.push((generation, hv));
    }

    pub fn final_hv(&self) -> Option<f64> {
        self.entries.last().map(|&(_, hv)| hv)
    }

    pub fn at_generation(&self, generation: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|&&(g, _)| g == generation)
            .map(|&(_, hv)| hv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(f1: f64, f2: f64, owner: u64) -> ObjectivePoint {
        ObjectivePoint::new(f1, f2, owner)
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&pt(0.2, 0.5, 0), &pt(0.3, 0.6, 1)));
        assert!(!dominates(&pt(0.2, 0.5, 0), &pt(0.2, 0.5, 1)));
        assert!(!dominates(&pt(0.2, 0.9, 0), &pt(0.9, 0.2, 1)));
        assert!(!dominates(&pt(0.9, 0.2, 0), &pt(0.2, 0.9, 1)));
    }

    #[test]
    fn single_point_is_one_front() {
        let fronts = nondominated_sort(&[pt(1.0, 2.0, 0)]);
        assert_eq!(fronts, vec![vec![0]]);
    }

    #[test]
    fn dominance_chain_gives_singleton_fronts() {
        let fronts = nondominated_sort(&[pt(3.0, 3.0, 2), pt(1.0, 1.0, 0), pt(2.0, 2.0, 1)]);
        assert_eq!(fronts, vec![vec![1], vec![2], vec![0]]);
    }

    /// O(n^3)-ish reference: peel fronts by repeated pairwise dominance scans.
    fn brute_force_fronts(points: &[ObjectivePoint]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = (0..points.len()).collect();
        let mut fronts = Vec::new();
        while !remaining.is_empty() {
            let front: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| {
                    !remaining
                        .iter()
                        .any(|&j| j != i && dominates(&points[j], &points[i]))
                })
                .collect();
            remaining.retain(|i| !front.contains(i));
            fronts.push(front);
        }
        fronts
    }

    #[test]
    fn sorting_matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let points: Vec<ObjectivePoint> = (0..200)
                .map(|k| pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), k))
                .collect();
            assert_eq!(nondominated_sort(&points), brute_force_fronts(&points));
        }
    }

    #[test]
    fn crowding_front_of_two_is_infinite() {
        let d = crowding_distance(&[pt(0.1, 0.9, 0), pt(0.9, 0.1, 1)]);
        assert!(d.iter().all(|&x| x.is_infinite()));
    }

    #[test]
    fn crowding_middle_of_three_colinear_points() {
        let d = crowding_distance(&[pt(0.0, 1.0, 0), pt(0.5, 0.5, 1), pt(1.0, 0.0, 2)]);
        assert!(d[0].is_infinite());
        assert!(d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn crowding_identical_points_degenerate_rule() {
        let d = crowding_distance(&[pt(0.4, 0.4, 0), pt(0.4, 0.4, 1), pt(0.4, 0.4, 2)]);
        assert!(d[0].is_infinite());
        assert!(d[2].is_infinite());
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn select_exact_size_returns_union() {
        let union = vec![pt(0.1, 0.9, 0), pt(0.9, 0.1, 1), pt(0.5, 0.5, 2)];
        let mut got = environmental_select(&union, 3).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn select_one_takes_a_boundary_point_of_front_zero() {
        let union = vec![
            pt(0.5, 0.5, 0),
            pt(0.1, 0.9, 1),
            pt(0.9, 0.1, 2),
            pt(0.95, 0.95, 3),
        ];
        let got = environmental_select(&union, 1).unwrap();
        assert_eq!(got.len(), 1);
        // Front 0 = {0,1,2}; boundary points 1 and 2 carry infinite
        // crowding, tie broken by lower owner id.
        assert_eq!(got[0], 1);
    }

    /// Selection oracle built from the brute-force front peeling plus an
    /// independent crowding computation.
    fn brute_force_select(union: &[ObjectivePoint], gamma: usize) -> Vec<usize> {
        let fronts = brute_force_fronts(union);
        let mut selected = Vec::new();
        for front in fronts {
            if selected.len() == gamma {
                break;
            }
            if selected.len() + front.len() <= gamma {
                selected.extend(front);
                continue;
            }
            let pts: Vec<ObjectivePoint> = front.iter().map(|&i| union[i]).collect();
            let crowd = crowding_distance(&pts);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| {
                crowd[b]
                    .partial_cmp(&crowd[a])
                    .unwrap()
                    .then(union[front[a]].owner.cmp(&union[front[b]].owner))
            });
            for w in order.into_iter().take(gamma - selected.len()) {
                selected.push(front[w]);
            }
        }
        selected
    }

    #[test]
    fn selection_matches_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let union: Vec<ObjectivePoint> = (0..120)
                .map(|k| pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), k))
                .collect();
            let mut got = environmental_select(&union, 60).unwrap();
            let mut want = brute_force_select(&union, 60);
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn selection_keeps_a_global_dominator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut union: Vec<ObjectivePoint> = (0..40)
            .map(|k| pt(rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), k))
            .collect();
        union.push(pt(0.01, 0.01, 99));
        let got = environmental_select(&union, 10).unwrap();
        assert!(got.contains(&40));
    }

    #[test]
    fn undersized_union_is_rejected() {
        assert!(matches!(
            environmental_select(&[pt(0.0, 0.0, 0)], 2),
            Err(Error::UndersizedUnion { .. })
        ));
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume_2d(&[pt(0.0, 0.0, 0)], (1.0, 1.0)), 1.0);
        assert_eq!(hypervolume_2d(&[pt(0.5, 0.5, 0)], (1.0, 1.0)), 0.25);
        let hv = hypervolume_2d(&[pt(0.2, 0.6, 0), pt(0.6, 0.2, 1)], (1.0, 1.0));
        assert!((hv - 0.48).abs() < 1e-12);
    }

    #[test]
    fn hypervolume_ignores_points_beyond_reference() {
        let hv = hypervolume_2d(
            &[pt(0.5, 0.5, 0), pt(1.2, 0.1, 1), pt(0.1, 1.0, 2)],
            (1.0, 1.0),
        );
        assert_eq!(hv, 0.25);
    }

    /// Monte-Carlo estimate of the dominated area inside [0, r1] x [0, r2].
    fn mc_hypervolume(points: &[ObjectivePoint], reference: (f64, f64), samples: usize) -> f64 {
        // Prefix-min trick: a sample is dominated iff some point has
        // f1 <= x and f2 <= y; sort by f1 and binary-search.
        let mut sorted: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.f1 < reference.0 && p.f2 < reference.1)
            .map(|p| (p.f1, p.f2))
            .collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut prefix_min = Vec::with_capacity(sorted.len());
        let mut best = f64::INFINITY;
        for &(_, f2) in &sorted {
            best = best.min(f2);
            prefix_min.push(best);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(424242);
        let mut hits = 0usize;
        for _ in 0..samples {
            let x = rng.random_range(0.0..reference.0);
            let y = rng.random_range(0.0..reference.1);
            let k = sorted.partition_point(|&(f1, _)| f1 <= x);
            if k > 0 && prefix_min[k - 1] <= y {
                hits += 1;
            }
        }
        reference.0 * reference.1 * hits as f64 / samples as f64
    }

    #[test]
    fn hypervolume_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let points: Vec<ObjectivePoint> = (0..30)
                .map(|k| pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), k))
                .collect();
            let exact = hypervolume_2d(&points, (1.0, 1.0));
            let mc = mc_hypervolume(&points, (1.0, 1.0), 200_000);
            assert!((exact - mc).abs() < 4e-3, "exact {exact} vs mc {mc}");
        }
    }

    #[test]
    fn normalization_maps_bounds_to_unit_square() {
        let bounds = ObjectiveBounds {
            f1: (0.0, 2.0),
            f2: (1.0, 5.0),
        };
        let out = normalize_for_hv(
            &[pt(0.0, 1.0, 0), pt(2.0, 5.0, 1), pt(1.0, 3.0, 2)],
            &bounds,
        )
        .unwrap();
        assert_eq!((out[0].f1, out[0].f2), (0.0, 0.0));
        assert_eq!((out[1].f1, out[1].f2), (1.0, 1.0));
        assert!((out[2].f1 - 0.5).abs() < 1e-12);
        assert!((out[2].f2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let bounds = ObjectiveBounds {
            f1: (0.0, 0.0),
            f2: (0.0, 1.0),
        };
        assert!(matches!(
            normalize_for_hv(&[], &bounds),
            Err(Error::DegenerateBounds(_))
        ));
    }

    proptest! {
        #[test]
        fn dominance_is_a_strict_partial_order(
            a in (0.0f64..1.0, 0.0f64..1.0),
            b in (0.0f64..1.0, 0.0f64..1.0),
            c in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let pa = pt(a.0, a.1, 0);
            let pb = pt(b.0, b.1, 1);
            let pc = pt(c.0, c.1, 2);
            prop_assert!(!dominates(&pa, &pa));
            if dominates(&pa, &pb) {
                prop_assert!(!dominates(&pb, &pa));
            }
            if dominates(&pa, &pb) && dominates(&pb, &pc) {
                prop_assert!(dominates(&pa, &pc));
            }
        }

        #[test]
        fn front_zero_is_mutually_nondominated(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<ObjectivePoint> = (0..50)
                .map(|k| pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), k))
                .collect();
            let fronts = nondominated_sort(&points);
            for &i in &fronts[0] {
                for &j in &fronts[0] {
                    prop_assert!(!dominates(&points[i], &points[j]));
                }
            }
        }

        #[test]
        fn hypervolume_is_monotone_under_insertion(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut points: Vec<ObjectivePoint> = (0..20)
                .map(|k| pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), k))
                .collect();
            let before = hypervolume_2d(&points, HV_REFERENCE);
            points.push(pt(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 20));
            let after = hypervolume_2d(&points, HV_REFERENCE);
            prop_assert!(after >= before);

            // A point strictly dominating the whole set strictly grows the area.
            let min_f1 = points.iter().map(|p| p.f1).fold(f64::INFINITY, f64::min);
            let min_f2 = points.iter().map(|p| p.f2).fold(f64::INFINITY, f64::min);
            points.push(pt(min_f1 - 0.01, min_f2 - 0.01, 21));
            let grown = hypervolume_2d(&points, HV_REFERENCE);
            prop_assert!(grown > after);
        }
    }
}
