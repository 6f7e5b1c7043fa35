//! Placeholder scaling plans: forecast deltas over current usage, the ladder
//! cold-start policy and placement-group balancing of virtual instances.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::resources::data_lines;

/// Per-bucket `max(0, ceil(predicted) - current)`. Never negative, so a forecast
/// below current usage leaves scaling to the on-demand autoscaler.
pub fn compute_delta(predicted: &[f64], current: &[u64]) -> Result<Vec<u64>> {
    if predicted.len() != current.len() {
        return Err(Error::LengthMismatch {
            expected: current.len(),
            found: predicted.len(),
        });
    }
    Ok(predicted
        .iter()
        .zip(current)
        .map(|(&p, &c)| ceil_count(p).saturating_sub(c))
        .collect())
}

/// Ceiling of a forecast as an instance count; negative or NaN forecasts give 0.
pub fn ceil_count(v: f64) -> u64 {
    if v > 0.0 {
        v.ceil() as u64
    } else {
        0
    }
}

/// Rung levels shared by every bucket unless configured otherwise.
pub const DEFAULT_RUNGS: [u64; 6] = [2, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LadderTargets {
    pub targets: Vec<u64>,
    /// Buckets whose recent maximum exceeded the top rung and was clamped.
    pub overflow: Vec<bool>,
}

impl LadderTargets {
    pub fn any_overflow(&self) -> bool {
        self.overflow.iter().any(|&o| o)
    }
}

pub fn validate_rungs(rungs: &[u64]) -> Result<()> {
    if rungs.is_empty() {
        return Err(Error::InvalidConfig("ladder needs at least one rung".into()));
    }
    if rungs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!("ladder rungs {rungs:?} must be strictly ascending")));
    }
    Ok(())
}

/// Smallest rung covering each recent maximum; above the top rung the target is
/// clamped to it and flagged.
pub fn ladder_policy(recent_max: &[u64], rungs: &[u64]) -> Result<LadderTargets> {
    validate_rungs(rungs)?;
    let top = *rungs.last().expect("validated non-empty");
    let mut out = LadderTargets {
        targets: Vec::with_capacity(recent_max.len()),
        overflow: Vec::with_capacity(recent_max.len()),
    };
    for &m in recent_max {
        match rungs.iter().find(|&&r| r >= m) {
            Some(&r) => {
                out.targets.push(r);
                out.overflow.push(false);
            }
            None => {
                out.targets.push(top);
                out.overflow.push(true);
            }
        }
    }
    Ok(out)
}

/// Gang of same-size instances that must land in one placement group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualInstance {
    pub bucket_index: usize,
    pub size: u64,
    pub origin_job: Option<String>,
}

impl VirtualInstance {
    pub fn new(bucket_index: usize, size: u64, origin_job: Option<String>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidConfig("virtual instance size must be at least 1".into()));
        }
        Ok(Self {
            bucket_index,
            size,
            origin_job,
        })
    }

    fn label(&self) -> String {
        match &self.origin_job {
            Some(j) => format!("virtual instance of {} for job {j} (bucket {})", self.size, self.bucket_index),
            None => format!("virtual instance of {} (bucket {})", self.size, self.bucket_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementGroup {
    pub id: String,
    pub capacity: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementGroupSet {
    groups: Vec<PlacementGroup>,
}

impl PlacementGroupSet {
    pub fn new(groups: Vec<PlacementGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("at least one placement group is required".into()));
        }
        let mut seen = HashSet::new();
        for g in &groups {
            if g.id.is_empty() {
                return Err(Error::InvalidConfig("placement group id must not be empty".into()));
            }
            if !seen.insert(g.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate placement group `{}`", g.id)));
            }
            if g.capacity == 0 {
                return Err(Error::InvalidConfig(format!("placement group `{}` has zero capacity", g.id)));
            }
        }
        Ok(Self { groups })
    }

    /// One group without a capacity limit.
    pub fn unbounded() -> Self {
        Self {
            groups: vec![PlacementGroup {
                id: "default".into(),
                capacity: u64::MAX,
            }],
        }
    }

    /// `group_id,capacity` rows; an optional header line starting with
    /// `group_id` is skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for (line, row) in data_lines(text) {
            if row.trim_start().starts_with("group_id") {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    reason: format!("expected `group_id,capacity`, found {} fields", fields.len()),
                });
            }
            let capacity = fields[1].parse().map_err(|_| Error::Parse {
                line,
                column: 2,
                reason: format!("capacity `{}` is not a positive integer", fields[1]),
            })?;
            groups.push(PlacementGroup {
                id: fields[0].to_string(),
                capacity,
            });
        }
        Self::new(groups)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn groups(&self) -> &[PlacementGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub instance: VirtualInstance,
    pub group: String,
}

/// Assigns each virtual instance whole to a placement group.
///
/// Instances go largest first (stable on ties). Each picks the least-loaded
/// group with enough free capacity; equally loaded groups are taken round-robin,
/// starting after the group used last.
pub fn balance(
    instances: &[VirtualInstance],
    groups: &PlacementGroupSet,
    existing_load: &[u64],
) -> Result<Vec<Assignment>> {
    let n = groups.len();
    if existing_load.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: existing_load.len(),
        });
    }
    let mut load = existing_load.to_vec();
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| instances[b].size.cmp(&instances[a].size));
    let mut next = 0;
    let mut out = Vec::with_capacity(instances.len());
    for i in order {
        let vi = &instances[i];
        let mut best: Option<usize> = None;
        for k in 0..n {
            let g = (next + k) % n;
            let free = groups.groups[g].capacity.saturating_sub(load[g]);
            if free < vi.size {
                continue;
            }
            if best.is_none_or(|b| load[g] < load[b]) {
                best = Some(g);
            }
        }
        let g = best.ok_or_else(|| Error::Capacity(format!("no placement group can hold the {}", vi.label())))?;
        load[g] += vi.size;
        next = (g + 1) % n;
        out.push(Assignment {
            instance: vi.clone(),
            group: groups.groups[g].id.clone(),
        });
    }
    Ok(out)
}

/// Per-group load after `assignments`, in group order.
pub fn group_loads(groups: &PlacementGroupSet, existing_load: &[u64], assignments: &[Assignment]) -> Vec<u64> {
    let mut load = existing_load.to_vec();
    for a in assignments {
        if let Some(g) = groups.groups.iter().position(|g| g.id == a.group) {
            load[g] += a.instance.size;
        }
    }
    load
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSnapshot {
    /// Embedded counts of currently running jobs.
    pub current_counts: Vec<u64>,
    /// `[bucket][group]` instances up or launching.
    pub provisioned: Vec<Vec<u64>>,
    pub placeholder_targets: Vec<u64>,
}

impl ClusterSnapshot {
    pub fn with_current(current_counts: Vec<u64>) -> Self {
        let b = current_counts.len();
        Self {
            current_counts,
            provisioned: vec![Vec::new(); b],
            placeholder_targets: vec![0; b],
        }
    }

    /// Instances already in each placement group, summed over buckets.
    pub fn group_load(&self, groups: usize) -> Vec<u64> {
        let mut load = vec![0; groups];
        for per_bucket in &self.provisioned {
            for (g, v) in per_bucket.iter().enumerate().take(groups) {
                load[g] += v;
            }
        }
        load
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalingPlan {
    pub placeholder_deltas: Vec<u64>,
    pub assignments: Vec<Assignment>,
}

impl ScalingPlan {
    /// Every delta is zero: the forecast does not exceed current usage.
    pub fn is_on_demand_fallback(&self) -> bool {
        self.placeholder_deltas.iter().all(|&d| d == 0)
    }

    /// `bucket,instance_type,delta` followed by `group,bucket,size` rows.
    pub fn to_csv(&self, instance_types: &[String]) -> String {
        let mut s = String::from("bucket,instance_type,delta\n");
        for (i, d) in self.placeholder_deltas.iter().enumerate() {
            let name = instance_types.get(i).map_or("", String::as_str);
            s.push_str(&format!("{i},{name},{d}\n"));
        }
        s.push_str("\ngroup,bucket,size\n");
        for a in &self.assignments {
            s.push_str(&format!("{},{},{}\n", a.group, a.instance.bucket_index, a.instance.size));
        }
        s
    }
}

/// Builds the placeholder plan for one tick. Each bucket's delta is split into
/// virtual instances of at most `max_virtual_size` instances.
pub fn plan(
    predicted: &[f64],
    snapshot: &ClusterSnapshot,
    groups: &PlacementGroupSet,
    max_virtual_size: u64,
) -> Result<ScalingPlan> {
    if max_virtual_size == 0 {
        return Err(Error::InvalidConfig("virtual instance size limit must be positive".into()));
    }
    let deltas = compute_delta(predicted, &snapshot.current_counts)?;
    let mut vis = Vec::new();
    for (b, &d) in deltas.iter().enumerate() {
        let mut left = d;
        while left > 0 {
            let size = left.min(max_virtual_size);
            vis.push(VirtualInstance::new(b, size, None)?);
            left -= size;
        }
    }
    let assignments = balance(&vis, groups, &snapshot.group_load(groups.len()))?;
    Ok(ScalingPlan {
        placeholder_deltas: deltas,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups(caps: &[u64]) -> PlacementGroupSet {
        PlacementGroupSet::new(
            caps.iter()
                .enumerate()
                .map(|(i, &c)| PlacementGroup {
                    id: format!("g{}", i + 1),
                    capacity: c,
                })
                .collect(),
        )
        .unwrap()
    }

    fn vi(size: u64) -> VirtualInstance {
        VirtualInstance::new(0, size, None).unwrap()
    }

    #[test]
    fn delta_examples() {
        assert_eq!(compute_delta(&[5.0, 2.0], &[3, 3]).unwrap(), vec![2, 0]);
        assert_eq!(compute_delta(&[2.0, 1.0], &[3, 3]).unwrap(), vec![0, 0]);
        assert_eq!(compute_delta(&[3.0, 3.0], &[3, 3]).unwrap(), vec![0, 0]);
        assert_eq!(compute_delta(&[2.1, -1.0], &[0, 0]).unwrap(), vec![3, 0]);
        assert!(matches!(compute_delta(&[1.0], &[1, 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ladder_examples() {
        let r = [2, 5, 10];
        assert_eq!(ladder_policy(&[3], &r).unwrap().targets, vec![5]);
        assert_eq!(ladder_policy(&[0], &r).unwrap().targets, vec![2]);
        let over = ladder_policy(&[11, 5], &r).unwrap();
        assert_eq!(over.targets, vec![10, 5]);
        assert_eq!(over.overflow, vec![true, false]);
        assert!(ladder_policy(&[1], &[5, 2]).is_err());
    }

    #[test]
    fn balance_examples() {
        let a = balance(&[vi(4), vi(2)], &groups(&[8, 8]), &[0, 0]).unwrap();
        assert_eq!((a[0].instance.size, a[0].group.as_str()), (4, "g1"));
        assert_eq!((a[1].instance.size, a[1].group.as_str()), (2, "g2"));

        let one = balance(&[vi(3)], &groups(&[5]), &[0]).unwrap();
        assert_eq!(one[0].group, "g1");

        let g = groups(&[8, 8]);
        let a = balance(&[vi(1), vi(1), vi(1)], &g, &[0, 0]).unwrap();
        assert_eq!(group_loads(&g, &[0, 0], &a), vec![2, 1]);
    }

    #[test]
    fn balance_capacity_error_names_instance() {
        let big = VirtualInstance::new(1, 9, Some("job-7".into())).unwrap();
        let err = balance(&[big], &groups(&[8, 8]), &[0, 0]).unwrap_err();
        assert!(err.to_string().contains("job-7"), "{err}");
    }

    #[test]
    fn groups_file() {
        let g = PlacementGroupSet::from_csv("group_id,capacity\nrack-a,16\n# spare\nrack-b,8\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.groups()[1].capacity, 8);
        assert!(PlacementGroupSet::from_csv("a,1\na,2\n").is_err());
        assert!(PlacementGroupSet::from_csv("a,x\n").is_err());
    }

    #[test]
    fn plan_chunks_and_fallback() {
        let snap = ClusterSnapshot::with_current(vec![1, 4]);
        let p = plan(&[6.5, 3.0], &snap, &groups(&[4, 4]), 3).unwrap();
        assert_eq!(p.placeholder_deltas, vec![6, 0]);
        assert_eq!(p.assignments.iter().map(|a| a.instance.size).sum::<u64>(), 6);
        assert!(p.assignments.iter().all(|a| a.instance.size <= 3));
        let idle = plan(&[0.5, 1.0], &snap, &PlacementGroupSet::unbounded(), 4).unwrap();
        assert!(idle.is_on_demand_fallback());
        assert!(idle.assignments.is_empty());
    }

    proptest! {
        #[test]
        fn delta_non_negative_and_covers(pred in prop::collection::vec(-5.0f64..50.0, 1..6), seed in 0u64..40) {
            let current: Vec<u64> = pred.iter().enumerate().map(|(i, _)| (seed * (i as u64 + 3)) % 23).collect();
            let d = compute_delta(&pred, &current).unwrap();
            for i in 0..pred.len() {
                prop_assert!(current[i] + d[i] >= ceil_count(pred[i]));
            }
        }

        #[test]
        fn delta_monotone(pred in prop::collection::vec(0.0f64..30.0, 1..6), bump in 0.0f64..10.0, idx in 0usize..6) {
            let current = vec![7; pred.len()];
            let base = compute_delta(&pred, &current).unwrap();
            let mut raised = pred.clone();
            let i = idx % pred.len();
            raised[i] += bump;
            let up = compute_delta(&raised, &current).unwrap();
            for (a, b) in base.iter().zip(&up) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn ladder_from_rungs_and_covers(m in prop::collection::vec(0u64..15, 1..6)) {
            let rungs = [2, 5, 10];
            let out = ladder_policy(&m, &rungs).unwrap();
            for i in 0..m.len() {
                prop_assert!(rungs.contains(&out.targets[i]));
                prop_assert!(out.overflow[i] || out.targets[i] >= m[i]);
            }
        }

        #[test]
        fn balance_whole_and_even(sizes in prop::collection::vec(1u64..6, 1..12), n in 1usize..5) {
            let g = groups(&vec![1000; n]);
            let vis: Vec<_> = sizes.iter().map(|&s| vi(s)).collect();
            let a = balance(&vis, &g, &vec![0; n]).unwrap();
            prop_assert_eq!(a.len(), vis.len());
            let loads = group_loads(&g, &vec![0; n], &a);
            prop_assert_eq!(loads.iter().sum::<u64>(), sizes.iter().sum::<u64>());
            let spread = loads.iter().max().unwrap() - loads.iter().min().unwrap();
            prop_assert!(spread <= *sizes.iter().max().unwrap());
            prop_assert_eq!(&a, &balance(&vis, &g, &vec![0; n]).unwrap());
        }
    }
}
