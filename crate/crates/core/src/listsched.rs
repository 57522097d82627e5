//! One-machine list schedules over a task graph.
//!
//! Every flight member ranks tasks by Hu level (longest path to a sink,
//! counting nodes) and emits the highest ready level first. Tasks sharing a
//! level are ordered by reverse declaration order and then rotated left by the
//! member's offset, so members of one flight walk sibling branches in
//! different orders.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use crate::manifest::TaskDag;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedules cover different task sets")]
    MismatchedTaskSets,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityTable {
    levels: Vec<u32>,
}

impl PriorityTable {
    /// Level of the node with declaration index `node`.
    pub fn level(&self, node: usize) -> u32 {
        self.levels[node]
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }
}

pub fn hu_priorities(dag: &TaskDag) -> PriorityTable {
    let mut levels = vec![0u32; dag.len()];
    for &node in dag.topological_order().iter().rev() {
        levels[node] = 1 + dag.successors(node).iter().map(|&s| levels[s]).max().unwrap_or(0);
    }
    PriorityTable { levels }
}

/// A member's task order. Holds declaration indices; the names are
/// materialized on first use of [`ListSchedule::order`].
#[derive(Debug, Clone)]
pub struct ListSchedule {
    nodes: Vec<usize>,
    names: Arc<[String]>,
    order: OnceLock<Vec<String>>,
    offset: u64,
}

impl ListSchedule {
    pub fn order(&self) -> &[String] {
        self.order.get_or_init(|| self.iter().map(str::to_string).collect())
    }

    /// The same order as declaration indices into the source graph.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> + '_ {
        self.nodes.iter().map(|&i| self.names[i].as_str())
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, task: &str) -> Option<usize> {
        self.iter().position(|t| t == task)
    }
}

impl PartialEq for ListSchedule {
    fn eq(&self, other: &Self) -> bool {
        self.offset == other.offset && self.iter().eq(other.iter())
    }
}

impl Eq for ListSchedule {}

impl std::fmt::Display for ListSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, task) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(task)?;
        }
        Ok(())
    }
}

pub fn build_schedule(dag: &TaskDag, offset: u64) -> ListSchedule {
    let priorities = hu_priorities(dag);
    ListSchedule {
        nodes: build_order(&priorities, offset),
        names: dag.shared_names(),
        order: OnceLock::new(),
        offset,
    }
}

/// Ready-set list scheduling collapses to a sort. A task's dependencies sit
/// on strictly higher levels, so once every higher level is emitted the whole
/// next level is ready at once, and the highest ready level never rises. The
/// order is therefore the level groups from the top down, each in its rotated
/// order.
fn build_order(priorities: &PriorityTable, offset: u64) -> Vec<usize> {
    let levels = priorities.levels();
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_unstable_by_key(|&i| std::cmp::Reverse((levels[i], i)));
    for group in order.chunk_by_mut(|&a, &b| levels[a] == levels[b]) {
        let k = group.len() as u64;
        group.rotate_left((offset % k) as usize);
    }
    order
}

/// Smallest offset shift that maps every schedule onto itself: the lcm of the
/// level-group sizes.
pub fn offset_period(dag: &TaskDag) -> u64 {
    let priorities = hu_priorities(dag);
    let max_level = priorities.levels().iter().copied().max().unwrap_or(0);
    (1..=max_level)
        .map(|l| priorities.levels().iter().filter(|&&x| x == l).count() as u64)
        .filter(|&k| k > 0)
        .fold(1, lcm)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Number of positions at which two schedules over the same tasks differ.
pub fn schedule_distance(a: &ListSchedule, b: &ListSchedule) -> Result<usize, ScheduleError> {
    let set_a: BTreeSet<&str> = a.iter().collect();
    let set_b: BTreeSet<&str> = b.iter().collect();
    if a.len() != b.len() || set_a != set_b {
        return Err(ScheduleError::MismatchedTaskSets);
    }
    Ok(a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
}
