//! Grouped binary pruning masks and their variation operators.
//!
//! A mask is a bit vector over parameter *groups* rather than raw
//! parameters, which shrinks the search dimensionality. Groups never cross
//! layer boundaries. Repair enforces a per-layer minimum of active groups
//! (so no layer is severed) and, at per-parameter granularity, prunes
//! parameters whose source neuron lost all of its inputs.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Architecture;

pub const DEFAULT_MIN_ACTIVE_FRACTION: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerParameter,
    PerNeuron,
    Chunks(usize),
}

/// One mask bit's worth of parameters, all within a single weight layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub layer: usize,
    pub indices: Vec<usize>,
}

/// Partition of all parameter indices into groups, plus the layer geometry
/// needed for repair.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingMap {
    granularity: Granularity,
    layer_sizes: Vec<usize>,
    groups: Vec<Group>,
    /// Group-index range per weight layer; group order follows layer order.
    layer_ranges: Vec<std::ops::Range<usize>>,
    total_params: usize,
}

/// Serializable recipe; the full map is rebuilt deterministically from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSpec {
    pub granularity: Granularity,
    pub layer_sizes: Vec<usize>,
}

// Flat-layout helpers over bare layer sizes (mirrors the net's layout).
fn fan_in(sizes: &[usize], layer: usize) -> usize {
    sizes[layer]
}

fn fan_out(sizes: &[usize], layer: usize) -> usize {
    sizes[layer + 1]
}

fn layer_param_count(sizes: &[usize], layer: usize) -> usize {
    (fan_in(sizes, layer) + 1) * fan_out(sizes, layer)
}

fn layer_offset(sizes: &[usize], layer: usize) -> usize {
    (0..layer).map(|l| layer_param_count(sizes, l)).sum()
}

fn weight_index(sizes: &[usize], layer: usize, neuron: usize, input: usize) -> usize {
    layer_offset(sizes, layer) + neuron * (fan_in(sizes, layer) + 1) + input
}

fn bias_index(sizes: &[usize], layer: usize, neuron: usize) -> usize {
    weight_index(sizes, layer, neuron, fan_in(sizes, layer))
}

pub fn build_grouping(arch: &Architecture, granularity: Granularity) -> Result<GroupingMap> {
    arch.validate()?;
    build_grouping_from_sizes(&arch.layer_sizes, granularity)
}

pub fn build_grouping_from_sizes(
    layer_sizes: &[usize],
    granularity: Granularity,
) -> Result<GroupingMap> {
    if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::validation(
            "arch.layer_sizes",
            "need at least 2 layers, all sizes >= 1",
        ));
    }
    let sizes = layer_sizes;
    let weight_layers = sizes.len() - 1;
    let mut groups = Vec::new();
    let mut layer_ranges = Vec::with_capacity(weight_layers);

    for l in 0..weight_layers {
        let start = groups.len();
        let params = layer_param_count(sizes, l);
        let offset = layer_offset(sizes, l);
        match granularity {
            Granularity::PerParameter => {
                for p in 0..params {
                    groups.push(Group {
                        layer: l,
                        indices: vec![offset + p],
                    });
                }
            }
            Granularity::PerNeuron => {
                // One group per output neuron: its incoming weights + bias.
                let width = fan_in(sizes, l) + 1;
                for j in 0..fan_out(sizes, l) {
                    groups.push(Group {
                        layer: l,
                        indices: (0..width).map(|i| offset + j * width + i).collect(),
                    });
                }
            }
            Granularity::Chunks(n) => {
                if n == 0 {
                    return Err(Error::DegenerateGrouping(
                        "chunk count must be >= 1".to_string(),
                    ));
                }
                if n > fan_out(sizes, l) {
                    return Err(Error::DegenerateGrouping(format!(
                        "{} chunks requested but layer {} has only {} neurons",
                        n,
                        l,
                        fan_out(sizes, l)
                    )));
                }
                let base = params / n;
                let rem = params % n;
                let mut at = offset;
                for c in 0..n {
                    let len = base + usize::from(c < rem);
                    groups.push(Group {
                        layer: l,
                        indices: (at..at + len).collect(),
                    });
                    at += len;
                }
            }
        }
        layer_ranges.push(start..groups.len());
    }

    Ok(GroupingMap {
        granularity,
        layer_sizes: sizes.to_vec(),
        groups,
        layer_ranges,
        total_params: layer_offset(sizes, weight_layers),
    })
}

impl GroupingMap {
    pub fn bit_count(&self) -> usize {
        self.groups.len()
    }

    pub fn total_params(&self) -> usize {
        self.total_params
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn weight_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Bit-index range of the groups belonging to weight layer `l`.
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        self.layer_ranges[layer].clone()
    }

    pub fn covers(&self, arch: &Architecture) -> bool {
        self.layer_sizes == arch.layer_sizes
    }

    pub fn spec(&self) -> GroupingSpec {
        GroupingSpec {
            granularity: self.granularity,
            layer_sizes: self.layer_sizes.clone(),
        }
    }

    pub fn from_spec(spec: &GroupingSpec) -> Result<GroupingMap> {
        build_grouping_from_sizes(&spec.layer_sizes, spec.granularity)
    }
}

/// A binary genome over a grouping map.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedMask {
    bits: Vec<u8>,
    grouping: Arc<GroupingMap>,
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    grouping_spec: GroupingSpec,
    bits: Vec<u8>,
}

impl GroupedMask {
    pub fn new(bits: Vec<u8>, grouping: Arc<GroupingMap>) -> Result<Self> {
        if bits.len() != grouping.bit_count() {
            return Err(Error::MaskShape(format!(
                "{} bits for a grouping of {} groups",
                bits.len(),
                grouping.bit_count()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::MaskShape("mask bits must be 0 or 1".to_string()));
        }
        Ok(GroupedMask { bits, grouping })
    }

    pub fn all_ones(grouping: Arc<GroupingMap>) -> Self {
        let bits = vec![1; grouping.bit_count()];
        GroupedMask { bits, grouping }
    }

    /// Bits drawn i.i.d. Bernoulli(density).
    pub fn random<R: Rng + ?Sized>(
        grouping: Arc<GroupingMap>,
        density: f64,
        rng: &mut R,
    ) -> Self {
        let bits = (0..grouping.bit_count())
            .map(|_| u8::from(rng.random::<f64>() < density))
            .collect();
        GroupedMask { bits, grouping }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn grouping(&self) -> &Arc<GroupingMap> {
        &self.grouping
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Normalized L1 norm: fraction of active groups, in [0, 1].
    pub fn size_objective(&self) -> f64 {
        self.ones() as f64 / self.grouping.bit_count() as f64
    }

    /// Number of parameters kept by active groups.
    pub fn retained_parameter_count(&self) -> usize {
        self.bits
            .iter()
            .zip(self.grouping.groups())
            .filter(|(&b, _)| b == 1)
            .map(|(_, g)| g.indices.len())
            .sum()
    }

    /// Parameter vector with masked groups zeroed.
    pub fn apply(&self, params: &[f64]) -> Vec<f64> {
        let mut out = params.to_vec();
        self.zero_masked(&mut out);
        out
    }

    /// Zero the entries of `values` owned by inactive groups.
    pub fn zero_masked(&self, values: &mut [f64]) {
        for (bit, group) in self.bits.iter().zip(self.grouping.groups()) {
            if *bit == 0 {
                for &i in &group.indices {
                    values[i] = 0.0;
                }
            }
        }
    }

    /// 0.0/1.0 multiplier per parameter index.
    pub fn expand(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grouping.total_params()];
        for (bit, group) in self.bits.iter().zip(self.grouping.groups()) {
            if *bit == 1 {
                for &i in &group.indices {
                    out[i] = 1.0;
                }
            }
        }
        out
    }

    /// Repair to a feasible mask. Two passes:
    ///
    /// 1. At per-parameter granularity, prune any parameter whose source
    ///    neuron has every incoming parameter pruned (front to back, so
    ///    dead regions cascade forward). Other granularities keep
    ///    whole-neuron or whole-chunk semantics and need no propagation.
    /// 2. Ensure every layer keeps at least `ceil(fraction * g_l)` active
    ///    groups, activating the lowest-index inactive groups first.
    ///
    /// The minimum-fill runs last so the per-layer floor always holds on
    /// output, and the combination is idempotent.
    pub fn repair(&self, min_active_fraction: f64) -> GroupedMask {
        let mut bits = self.bits.clone();
        let sizes = self.grouping.layer_sizes();

        if self.grouping.granularity() == Granularity::PerParameter {
            // Bit index == parameter index at this granularity.
            for l in 1..self.grouping.weight_layers() {
                for src in 0..fan_in(sizes, l) {
                    let incoming_dead = (0..fan_in(sizes, l - 1))
                        .all(|i| bits[weight_index(sizes, l - 1, src, i)] == 0)
                        && bits[bias_index(sizes, l - 1, src)] == 0;
                    if incoming_dead {
                        for j in 0..fan_out(sizes, l) {
                            bits[weight_index(sizes, l, j, src)] = 0;
                        }
                    }
                }
            }
        }

        for l in 0..self.grouping.weight_layers() {
            let range = self.grouping.layer_range(l);
            let g_l = range.len();
            let need = (min_active_fraction * g_l as f64).ceil() as usize;
            let mut active = bits[range.clone()].iter().filter(|&&b| b == 1).count();
            for i in range {
                if active >= need {
                    break;
                }
                if bits[i] == 0 {
                    bits[i] = 1;
                    active += 1;
                }
            }
        }

        GroupedMask {
            bits,
            grouping: self.grouping.clone(),
        }
    }

    /// Compact hex form (bits packed MSB-first) for logs and checkpoints.
    pub fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b == 1 {
                bytes[i / 8] |= 1 << (7 - i % 8);
            }
        }
        hex::encode(bytes)
    }

    pub fn from_hex(text: &str, grouping: Arc<GroupingMap>) -> Result<Self> {
        let bytes = hex::decode(text)
            .map_err(|e| Error::MaskShape(format!("bad mask hex: {e}")))?;
        let d = grouping.bit_count();
        if bytes.len() != d.div_ceil(8) {
            return Err(Error::MaskShape(format!(
                "{} hex bytes for {} bits",
                bytes.len(),
                d
            )));
        }
        let bits = (0..d)
            .map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1)
            .collect();
        GroupedMask::new(bits, grouping)
    }

    pub fn to_json(&self) -> String {
        let doc = MaskJson {
            grouping_spec: self.grouping.spec(),
            bits: self.bits.clone(),
        };
        serde_json::to_string(&doc).expect("mask serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MaskJson = serde_json::from_str(text)?;
        let grouping = Arc::new(GroupingMap::from_spec(&doc.grouping_spec)?);
        GroupedMask::new(doc.bits, grouping)
    }
}

/// Uniform crossover: each bit position swaps between the two children with
/// probability one half. Children are returned unrepaired; callers repair
/// before evaluation.
pub fn crossover<R: Rng + ?Sized>(
    a: &GroupedMask,
    b: &GroupedMask,
    rng: &mut R,
) -> Result<(GroupedMask, GroupedMask)> {
    if a.grouping != b.grouping {
        return Err(Error::GroupingMismatch(
            "parents use different grouping maps".to_string(),
        ));
    }
    let mut c1 = a.bits.clone();
    let mut c2 = b.bits.clone();
    for i in 0..c1.len() {
        if rng.random::<f64>() < 0.5 {
            std::mem::swap(&mut c1[i], &mut c2[i]);
        }
    }
    Ok((
        GroupedMask {
            bits: c1,
            grouping: a.grouping.clone(),
        },
        GroupedMask {
            bits: c2,
            grouping: a.grouping.clone(),
        },
    ))
}

/// Independent per-bit flips with the given probability. Returned
/// unrepaired; callers repair before evaluation.
pub fn mutate<R: Rng + ?Sized>(mask: &GroupedMask, rate: f64, rng: &mut R) -> GroupedMask {
    let bits = mask
        .bits
        .iter()
        .map(|&b| if rng.random::<f64>() < rate { 1 - b } else { b })
        .collect();
    GroupedMask {
        bits,
        grouping: mask.grouping.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, OutputKind};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch_4_8_3() -> Architecture {
        Architecture::new(vec![4, 8, 3], Activation::Relu, OutputKind::SoftmaxLogits)
    }

    fn assert_partition(g: &GroupingMap) {
        let mut seen = vec![0usize; g.total_params()];
        for group in g.groups() {
            for &i in &group.indices {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "groups must partition indices");
    }

    #[test]
    fn per_parameter_bit_count() {
        let g = build_grouping(&arch_4_8_3(), Granularity::PerParameter).unwrap();
        assert_eq!(g.bit_count(), (4 + 1) * 8 + (8 + 1) * 3);
        assert_partition(&g);
    }

    #[test]
    fn chunks_group_count_matches_deep_model() {
        // 18 weight layers split in half apiece gives 36 bits.
        let sizes = vec![4usize; 19];
        let g = build_grouping_from_sizes(&sizes, Granularity::Chunks(2)).unwrap();
        assert_eq!(g.bit_count(), 36);
        assert_partition(&g);
    }

    #[test]
    fn per_neuron_grouping_shape() {
        let g = build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap();
        assert_eq!(g.bit_count(), 11);
        let hidden: Vec<_> = g.groups()[..8].iter().map(|gr| gr.indices.len()).collect();
        let output: Vec<_> = g.groups()[8..].iter().map(|gr| gr.indices.len()).collect();
        assert_eq!(hidden, vec![5; 8]);
        assert_eq!(output, vec![9; 3]);
        assert_partition(&g);
    }

    #[test]
    fn chunk_count_beyond_neurons_is_rejected() {
        let err = build_grouping(&arch_4_8_3(), Granularity::Chunks(4)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGrouping(_)));
    }

    #[test]
    fn size_objective_examples() {
        let sizes = vec![4usize; 19];
        let g = Arc::new(build_grouping_from_sizes(&sizes, Granularity::Chunks(2)).unwrap());
        let ones = GroupedMask::all_ones(g);
        assert_eq!(ones.ones(), 36);
        assert_eq!(ones.size_objective(), 1.0);

        let g2 = Arc::new(
            build_grouping_from_sizes(&[2, 2, 1], Granularity::Chunks(1)).unwrap(),
        );
        assert_eq!(g2.bit_count(), 2);
        let m = GroupedMask::new(vec![1, 0], g2).unwrap();
        assert_eq!(m.size_objective(), 0.5);
    }

    #[test]
    fn bit_vector_l1_fraction() {
        // bits [1,0,1,1] over four single-param groups.
        let g = Arc::new(
            build_grouping_from_sizes(&[1, 2], Granularity::PerParameter).unwrap(),
        );
        assert_eq!(g.bit_count(), 4);
        let m = GroupedMask::new(vec![1, 0, 1, 1], g).unwrap();
        assert_eq!(m.ones(), 3);
        assert_eq!(m.size_objective(), 0.75);
    }

    #[test]
    fn retained_count_matches_expand_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        for _ in 0..20 {
            let m = GroupedMask::random(g.clone(), 0.5, &mut rng);
            let params = vec![1.5; g.total_params()];
            let nonzero = m.apply(&params).iter().filter(|&&v| v != 0.0).count();
            assert_eq!(m.retained_parameter_count(), nonzero);
        }
    }

    #[test]
    fn repair_fills_empty_layer_with_lowest_groups() {
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        // Hidden layer (8 groups) all off, output layer on.
        let mut bits = vec![0u8; 11];
        for b in bits[8..].iter_mut() {
            *b = 1;
        }
        let m = GroupedMask::new(bits, g).unwrap();
        let r = m.repair(0.25);
        assert_eq!(&r.bits()[..8], &[1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&r.bits()[8..], &[1, 1, 1]);
    }

    #[test]
    fn repair_keeps_feasible_mask_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let m = GroupedMask::random(g, 0.9, &mut rng).repair(0.125);
        assert_eq!(m.repair(0.125).bits(), m.bits());
    }

    /// Independent aliveness oracle over the layered connectivity graph.
    fn alive_neurons(sizes: &[usize], bits: &[u8]) -> Vec<Vec<bool>> {
        let mut alive = vec![vec![true; sizes[0]]];
        for l in 0..sizes.len() - 1 {
            let stage: Vec<bool> = (0..sizes[l + 1])
                .map(|j| {
                    let bias = bits[bias_index(sizes, l, j)] == 1;
                    let wired = (0..sizes[l]).any(|i| {
                        alive[l][i] && bits[weight_index(sizes, l, j, i)] == 1
                    });
                    bias || wired
                })
                .collect();
            alive.push(stage);
        }
        alive
    }

    #[test]
    fn per_parameter_repair_prunes_dead_neuron_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Arc::new(
            build_grouping_from_sizes(&[3, 5, 4, 2], Granularity::PerParameter).unwrap(),
        );
        let sizes = [3usize, 5, 4, 2];
        for _ in 0..50 {
            let m = GroupedMask::random(g.clone(), 0.4, &mut rng);
            let r = m.repair(0.05);
            let alive = alive_neurons(&sizes, r.bits());
            for l in 1..3 {
                for src in 0..sizes[l] {
                    if !alive[l][src] {
                        for j in 0..sizes[l + 1] {
                            assert_eq!(
                                r.bits()[weight_index(&sizes, l, j, src)],
                                0,
                                "edge from dead neuron {src} at stage {l} survived"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crossover_of_identical_parents_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let a = GroupedMask::random(g, 0.5, &mut rng);
        let (c1, c2) = crossover(&a, &a.clone(), &mut rng).unwrap();
        assert_eq!(c1.bits(), a.bits());
        assert_eq!(c2.bits(), a.bits());
    }

    #[test]
    fn crossover_preserves_agreements() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        for _ in 0..20 {
            let a = GroupedMask::random(g.clone(), 0.5, &mut rng);
            let b = GroupedMask::random(g.clone(), 0.5, &mut rng);
            let (c1, c2) = crossover(&a, &b, &mut rng).unwrap();
            for i in 0..g.bit_count() {
                if a.bits()[i] == b.bits()[i] {
                    assert_eq!(c1.bits()[i], a.bits()[i]);
                    assert_eq!(c2.bits()[i], a.bits()[i]);
                }
            }
        }
    }

    #[test]
    fn crossover_swap_frequency_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let a = GroupedMask::new(vec![1; 11], g.clone()).unwrap();
        let b = GroupedMask::new(vec![0; 11], g).unwrap();
        let mut from_a = 0usize;
        let mut total = 0usize;
        for _ in 0..10_000 {
            let (c1, _) = crossover(&a, &b, &mut rng).unwrap();
            from_a += c1.ones();
            total += 11;
        }
        let freq = from_a as f64 / total as f64;
        assert!((freq - 0.5).abs() < 0.02, "swap frequency {freq}");
    }

    #[test]
    fn mutate_rate_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let m = GroupedMask::random(g, 0.5, &mut rng);
        assert_eq!(mutate(&m, 0.0, &mut rng).bits(), m.bits());
        let flipped = mutate(&m, 1.0, &mut rng);
        for (x, y) in m.bits().iter().zip(flipped.bits()) {
            assert_eq!(*x + *y, 1);
        }
    }

    #[test]
    fn mutate_mean_flip_count_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let d = g.bit_count();
        let m = GroupedMask::all_ones(g);
        let mut flips = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            let out = mutate(&m, 1.0 / d as f64, &mut rng);
            flips += out.bits().iter().zip(m.bits()).filter(|(a, b)| a != b).count();
        }
        let mean = flips as f64 / trials as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean flips {mean}");
    }

    #[test]
    fn mask_hex_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        for _ in 0..10 {
            let m = GroupedMask::random(g.clone(), 0.5, &mut rng);
            let back = GroupedMask::from_hex(&m.to_hex(), g.clone()).unwrap();
            assert_eq!(m.bits(), back.bits());
        }
    }

    #[test]
    fn mask_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let g = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let m = GroupedMask::random(g, 0.3, &mut rng);
        let back = GroupedMask::from_json(&m.to_json()).unwrap();
        assert_eq!(m.bits(), back.bits());
        assert_eq!(*m.grouping().spec().layer_sizes, back.grouping().spec().layer_sizes);
    }

    #[test]
    fn grouping_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g1 = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerNeuron).unwrap());
        let g2 = Arc::new(build_grouping(&arch_4_8_3(), Granularity::PerParameter).unwrap());
        let a = GroupedMask::random(g1, 0.5, &mut rng);
        let b = GroupedMask::random(g2, 0.5, &mut rng);
        assert!(matches!(
            crossover(&a, &b, &mut rng),
            Err(Error::GroupingMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn grouping_always_partitions(
            hidden in 1usize..6,
            width in 1usize..7,
            neuron in proptest::bool::ANY,
        ) {
            let mut sizes = vec![3usize];
            sizes.extend(std::iter::repeat(width).take(hidden));
            sizes.push(2);
            let gran = if neuron { Granularity::PerNeuron } else { Granularity::PerParameter };
            let g = build_grouping_from_sizes(&sizes, gran).unwrap();
            assert_partition(&g);
        }

        #[test]
        fn repair_is_idempotent_and_meets_minimum(
            seed in 0u64..500,
            density in 0.0f64..1.0,
            frac in 0.05f64..0.9,
            per_param in proptest::bool::ANY,
        ) {
            let gran = if per_param { Granularity::PerParameter } else { Granularity::PerNeuron };
            let g = Arc::new(build_grouping_from_sizes(&[3, 5, 4, 2], gran).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = GroupedMask::random(g.clone(), density, &mut rng);
            let r = m.repair(frac);
            let twice = r.repair(frac);
            prop_assert_eq!(twice.bits(), r.bits());
            for l in 0..g.weight_layers() {
                let range = g.layer_range(l);
                let need = (frac * range.len() as f64).ceil() as usize;
                let active = r.bits()[range].iter().filter(|&&b| b == 1).count();
                prop_assert!(active >= need);
            }
        }

        #[test]
        fn flipping_a_zero_bit_strictly_raises_size(seed in 0u64..200) {
            let g = Arc::new(build_grouping_from_sizes(&[3, 5, 2], Granularity::PerNeuron).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = GroupedMask::random(g.clone(), 0.5, &mut rng);
            for i in 0..g.bit_count() {
                if m.bits()[i] == 0 {
                    let mut bits = m.bits().to_vec();
                    bits[i] = 1;
                    let up = GroupedMask::new(bits, g.clone()).unwrap();
                    prop_assert!(up.size_objective() > m.size_objective());
                }
            }
        }

        #[test]
        fn operators_preserve_shape(seed in 0u64..200) {
            let g = Arc::new(build_grouping_from_sizes(&[3, 5, 2], Granularity::PerNeuron).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = GroupedMask::random(g.clone(), 0.5, &mut rng);
            let b = GroupedMask::random(g.clone(), 0.5, &mut rng);
            let (c1, c2) = crossover(&a, &b, &mut rng).unwrap();
            let m = mutate(&c1, 0.2, &mut rng);
            prop_assert_eq!(c1.bits().len(), g.bit_count());
            prop_assert_eq!(c2.bits().len(), g.bit_count());
            prop_assert_eq!(m.bits().len(), g.bit_count());
            prop_assert!(Arc::ptr_eq(m.grouping(), &g));
        }
    }
}
