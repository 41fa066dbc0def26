use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::explain::ResponsibilityExplainer;
use crate::probe::ProbeScope;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassEntry {
    /// Stable index of the test example.
    pub query_index: usize,
    pub true_class: usize,
    pub predicted_class: usize,
    /// Training position and stable index of the most responsible example.
    pub responsible_position: usize,
    pub responsible_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassGroup {
    pub true_class: usize,
    pub predicted_class: usize,
    pub size: usize,
    /// Most common most-responsible example (lowest index on ties) and its count.
    pub shared_index: usize,
    pub shared_count: usize,
}

impl MisclassGroup {
    /// At least half of the members share one most responsible example.
    pub fn majority_shared(&self) -> bool {
        2 * self.shared_count >= self.size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassReport {
    pub evaluated: usize,
    pub entries: Vec<MisclassEntry>,
    pub groups: Vec<MisclassGroup>,
    pub min_group_size: usize,
    /// Groups of at least `min_group_size` members where a majority share one example.
    pub sharing_groups: usize,
    pub eligible_groups: usize,
}

impl MisclassReport {
    pub fn entries_csv(&self) -> String {
        let mut out = String::from(
            "query_index,true_class,predicted_class,responsible_position,responsible_index\n",
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.query_index,
                e.true_class,
                e.predicted_class,
                e.responsible_position,
                e.responsible_index
            ));
        }
        out
    }

    pub fn groups_csv(&self) -> String {
        let mut out =
            String::from("true_class,predicted_class,size,shared_index,shared_count,majority_shared\n");
        for g in &self.groups {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                g.true_class,
                g.predicted_class,
                g.size,
                g.shared_index,
                g.shared_count,
                g.majority_shared()
            ));
        }
        out
    }
}

/// Groups entries by (true, predicted) class pair.
pub fn group_entries(entries: &[MisclassEntry]) -> Vec<MisclassGroup> {
    let mut by_pair: BTreeMap<(usize, usize), BTreeMap<usize, usize>> = BTreeMap::new();
    for e in entries {
        *by_pair
            .entry((e.true_class, e.predicted_class))
            .or_default()
            .entry(e.responsible_index)
            .or_default() += 1;
    }
    by_pair
        .into_iter()
        .map(|((t, p), counts)| {
            let size = counts.values().sum();
            // BTreeMap iterates by index, so `max_by` keeping the first maximum needs reversal.
            let (&shared_index, &shared_count) = counts
                .iter()
                .rev()
                .max_by_key(|(_, &c)| c)
                .expect("group is non-empty");
            MisclassGroup {
                true_class: t,
                predicted_class: p,
                size,
                shared_index,
                shared_count,
            }
        })
        .collect()
}

/// Explains every misclassified example of `test` by its top-1 responsibility
/// explanation and summarizes how often group members share it.
pub fn misclassified_report(
    explainer: &ResponsibilityExplainer<'_>,
    network: &crate::nn::Network,
    test: &Dataset,
    scope: ProbeScope,
    min_group_size: usize,
) -> Result<MisclassReport> {
    let mut entries = Vec::new();
    for e in test.examples() {
        let predicted = network.predict_class(&e.pixels)?;
        if predicted == e.label {
            continue;
        }
        let x = explainer.explain(&e.index.to_string(), &e.pixels, Some(e.label), scope, 1)?;
        let top = x.top();
        entries.push(MisclassEntry {
            query_index: e.index,
            true_class: e.label,
            predicted_class: predicted,
            responsible_position: top.position,
            responsible_index: top.index,
        });
    }
    let groups = group_entries(&entries);
    let eligible: Vec<&MisclassGroup> = groups.iter().filter(|g| g.size >= min_group_size).collect();
    Ok(MisclassReport {
        evaluated: test.len(),
        sharing_groups: eligible.iter().filter(|g| g.majority_shared()).count(),
        eligible_groups: eligible.len(),
        entries,
        groups,
        min_group_size,
    })
}
