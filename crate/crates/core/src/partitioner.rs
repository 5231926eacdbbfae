//! Groups (domain, objective) pairs into consolidated portfolios.
//!
//! The pipeline runs in a fixed order: cluster domains that share users,
//! split each cluster by feedback class, split again where objectives are
//! dissimilar, separate members whose compliance tags conflict, and finally
//! pack each group into bins that fit the per-portfolio compute budget.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMeta {
    pub name: String,
    pub user_ids: BTreeSet<String>,
    pub item_ids: BTreeSet<String>,
    #[serde(default)]
    pub compliance_tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackClass {
    /// Clicks, likes, follows.
    FreshDense,
    /// Purchases, conversions.
    DelayedSparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMeta {
    pub name: String,
    pub domain: String,
    pub feedback_class: FeedbackClass,
    /// Similarity to other objectives by name, in [-1, 1]. Missing pairs
    /// count as fully similar.
    #[serde(default)]
    pub similarity: BTreeMap<String, f64>,
    #[serde(default)]
    pub est_value: f64,
    #[serde(default)]
    pub cost: f64,
    #[serde(default)]
    pub compliance_tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPolicy {
    pub user_overlap_min: f64,
    /// When set, domains must also share at least this item overlap.
    #[serde(default)]
    pub item_overlap_min: Option<f64>,
    #[serde(default = "default_similarity_min")]
    pub similarity_min: f64,
    pub budget_per_portfolio: f64,
    #[serde(default)]
    pub incompatible_tag_pairs: Vec<(String, String)>,
}

fn default_similarity_min() -> f64 {
    -1.0
}

impl PartitionPolicy {
    fn conflicts(&self, a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
        self.incompatible_tag_pairs
            .iter()
            .any(|(x, y)| (a.contains(x) && b.contains(y)) || (a.contains(y) && b.contains(x)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub domain: String,
    pub objective: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub members: Vec<Member>,
    pub feedback_class: FeedbackClass,
    pub total_cost: f64,
    pub total_value: f64,
    pub compliance_union: BTreeSet<String>,
    /// Set on a singleton whose lone member already exceeds the budget.
    pub over_budget: bool,
}

/// Jaccard similarity of user ids and of item ids.
pub fn id_overlap(a: &DomainMeta, b: &DomainMeta) -> Result<(f64, f64)> {
    for d in [a, b] {
        if d.user_ids.is_empty() || d.item_ids.is_empty() {
            return Err(Error::usage(format!("domain {:?} has an empty id sample", d.name)));
        }
    }
    Ok((jaccard(&a.user_ids, &b.user_ids), jaccard(&a.item_ids, &b.item_ids)))
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Connected components of the domain graph whose edges meet the overlap
/// thresholds. Components and their members are sorted by name.
pub fn domain_clusters(domains: &[DomainMeta], policy: &PartitionPolicy) -> Result<Vec<Vec<String>>> {
    let mut order: Vec<usize> = (0..domains.len()).collect();
    order.sort_by(|&a, &b| domains[a].name.cmp(&domains[b].name));
    let mut parent: Vec<usize> = (0..domains.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            let (users, items) = id_overlap(&domains[a], &domains[b])?;
            let linked = users >= policy.user_overlap_min
                && policy.item_overlap_min.is_none_or(|min| items >= min);
            if linked {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut root_name: HashMap<usize, String> = HashMap::new();
    for &i in &order {
        let r = find(&mut parent, i);
        let key = root_name.entry(r).or_insert_with(|| domains[i].name.clone()).clone();
        groups.entry(key).or_default().push(domains[i].name.clone());
    }
    Ok(groups.into_values().collect())
}

fn similarity(a: &ObjectiveMeta, b: &ObjectiveMeta) -> f64 {
    a.similarity
        .get(&b.name)
        .or_else(|| b.similarity.get(&a.name))
        .copied()
        .unwrap_or(1.0)
}

fn by_value(a: &&ObjectiveMeta, b: &&ObjectiveMeta) -> std::cmp::Ordering {
    b.est_value
        .total_cmp(&a.est_value)
        .then_with(|| a.name.cmp(&b.name))
        .then_with(|| a.domain.cmp(&b.domain))
}

pub fn partition(
    domains: &[DomainMeta],
    objectives: &[ObjectiveMeta],
    policy: &PartitionPolicy,
) -> Result<Vec<Portfolio>> {
    let domain_tags: HashMap<&str, &BTreeSet<String>> =
        domains.iter().map(|d| (d.name.as_str(), &d.compliance_tags)).collect();
    if domain_tags.len() != domains.len() {
        return Err(Error::usage("domain names must be unique"));
    }
    if let Some(o) = objectives.iter().find(|o| !domain_tags.contains_key(o.domain.as_str())) {
        return Err(Error::usage(format!(
            "objective {:?} references unknown domain {:?}",
            o.name, o.domain
        )));
    }
    if let Some(o) = objectives.iter().find(|o| !(o.est_value >= 0.0 && o.cost >= 0.0)) {
        return Err(Error::usage(format!("objective {:?}: value and cost must be non-negative", o.name)));
    }
    let tags_of = |o: &ObjectiveMeta| -> BTreeSet<String> {
        domain_tags[o.domain.as_str()].union(&o.compliance_tags).cloned().collect()
    };

    let mut portfolios = Vec::new();
    for cluster in domain_clusters(domains, policy)? {
        for class in [FeedbackClass::FreshDense, FeedbackClass::DelayedSparse] {
            let mut group: Vec<&ObjectiveMeta> = objectives
                .iter()
                .filter(|o| o.feedback_class == class && cluster.contains(&o.domain))
                .collect();
            group.sort_by(by_value);

            for similar in split_by_similarity(group, policy.similarity_min) {
                for compliant in split_by_compliance(similar, policy, &tags_of) {
                    for bin in pack_budget(compliant, policy.budget_per_portfolio) {
                        portfolios.push(make_portfolio(bin, class, policy, &tags_of));
                    }
                }
            }
        }
    }
    Ok(portfolios)
}

/// Greedy: seed with the most valuable unassigned objective, then attach
/// each remaining one similar enough to every current member.
fn split_by_similarity(mut pool: Vec<&ObjectiveMeta>, min: f64) -> Vec<Vec<&ObjectiveMeta>> {
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut group = vec![pool.remove(0)];
        pool.retain(|o| {
            if group.iter().all(|m| similarity(o, m) >= min) {
                group.push(o);
                false
            } else {
                true
            }
        });
        out.push(group);
    }
    out
}

/// First fit in value order: a member joins the first subgroup it has no
/// tag conflict with.
fn split_by_compliance<'a>(
    group: Vec<&'a ObjectiveMeta>,
    policy: &PartitionPolicy,
    tags_of: &dyn Fn(&ObjectiveMeta) -> BTreeSet<String>,
) -> Vec<Vec<&'a ObjectiveMeta>> {
    let mut out: Vec<(Vec<&ObjectiveMeta>, Vec<BTreeSet<String>>)> = Vec::new();
    for o in group {
        let tags = tags_of(o);
        match out
            .iter_mut()
            .find(|(_, member_tags)| member_tags.iter().all(|t| !policy.conflicts(t, &tags)))
        {
            Some((members, member_tags)) => {
                members.push(o);
                member_tags.push(tags);
            }
            None => out.push((vec![o], vec![tags])),
        }
    }
    out.into_iter().map(|(m, _)| m).collect()
}

/// First-fit decreasing by estimated value into budget-sized bins.
fn pack_budget(group: Vec<&ObjectiveMeta>, budget: f64) -> Vec<Vec<&ObjectiveMeta>> {
    let total: f64 = group.iter().map(|o| o.cost).sum();
    if total <= budget {
        return vec![group];
    }
    let mut bins: Vec<(Vec<&ObjectiveMeta>, f64)> = Vec::new();
    for o in group {
        match bins.iter_mut().find(|(_, used)| used + o.cost <= budget) {
            Some((members, used)) => {
                members.push(o);
                *used += o.cost;
            }
            None => bins.push((vec![o], o.cost)),
        }
    }
    bins.into_iter().map(|(m, _)| m).collect()
}

fn make_portfolio(
    members: Vec<&ObjectiveMeta>,
    class: FeedbackClass,
    policy: &PartitionPolicy,
    tags_of: &dyn Fn(&ObjectiveMeta) -> BTreeSet<String>,
) -> Portfolio {
    let total_cost: f64 = members.iter().map(|o| o.cost).sum();
    Portfolio {
        over_budget: total_cost > policy.budget_per_portfolio,
        total_value: members.iter().map(|o| o.est_value).sum(),
        compliance_union: members.iter().flat_map(|o| tags_of(o)).collect(),
        members: members
            .iter()
            .map(|o| Member {
                domain: o.domain.clone(),
                objective: o.name.clone(),
            })
            .collect(),
        feedback_class: class,
        total_cost,
    }
}

/// Plain-text summary: the user/item overlap matrix followed by one line
/// per portfolio.
pub fn report(domains: &[DomainMeta], portfolios: &[Portfolio]) -> Result<String> {
    let mut names: Vec<&DomainMeta> = domains.iter().collect();
    names.sort_by(|a, b| a.name.cmp(&b.name));
    let width = names.iter().map(|d| d.name.len()).max().unwrap_or(0).max(11);
    let mut out = String::from("user/item overlap\n");
    let _ = write!(out, "{:width$}", "");
    for d in &names {
        let _ = write!(out, " {:>width$}", d.name);
    }
    out.push('\n');
    for a in &names {
        let _ = write!(out, "{:width$}", a.name);
        for b in &names {
            let (u, i) = id_overlap(a, b)?;
            let _ = write!(out, " {:>width$}", format!("{u:.2}/{i:.2}"));
        }
        out.push('\n');
    }
    out.push('\n');
    for (n, p) in portfolios.iter().enumerate() {
        let members: Vec<String> = p.members.iter().map(|m| format!("{}×{}", m.domain, m.objective)).collect();
        let _ = writeln!(
            out,
            "portfolio {n}: {:?} cost={} value={}{} [{}]",
            p.feedback_class,
            p.total_cost,
            p.total_value,
            if p.over_budget { " OVER-BUDGET" } else { "" },
            members.join(", ")
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn domain(name: &str, users: &[&str]) -> DomainMeta {
        DomainMeta {
            name: name.into(),
            user_ids: ids(users),
            item_ids: ids(&["i"]),
            compliance_tags: BTreeSet::new(),
        }
    }

    fn objective(name: &str, domain: &str, class: FeedbackClass) -> ObjectiveMeta {
        ObjectiveMeta {
            name: name.into(),
            domain: domain.into(),
            feedback_class: class,
            similarity: BTreeMap::new(),
            est_value: 1.0,
            cost: 1.0,
            compliance_tags: BTreeSet::new(),
        }
    }

    fn policy() -> PartitionPolicy {
        PartitionPolicy {
            user_overlap_min: 0.3,
            item_overlap_min: None,
            similarity_min: 0.0,
            budget_per_portfolio: 100.0,
            incompatible_tag_pairs: vec![],
        }
    }

    #[test]
    fn jaccard_examples() {
        let a = domain("a", &["1", "2", "3"]);
        let b = domain("b", &["2", "3", "4"]);
        assert_eq!(id_overlap(&a, &b).unwrap().0, 0.5);
        assert_eq!(id_overlap(&a, &a).unwrap(), (1.0, 1.0));
        let c = domain("c", &["7", "8"]);
        assert_eq!(id_overlap(&a, &c).unwrap().0, 0.0);
        let mut empty = domain("e", &["1"]);
        empty.user_ids.clear();
        assert!(id_overlap(&a, &empty).unwrap_err().is_usage());
    }

    #[test]
    fn overlapping_domains_merge() {
        // 6 shared users of 10 total: overlap 0.6.
        let news = domain("news", &["0", "1", "2", "3", "4", "5", "6", "7"]);
        let video = domain("video", &["2", "3", "4", "5", "6", "7", "8", "9"]);
        assert_eq!(id_overlap(&news, &video).unwrap().0, 0.6);
        let objs = vec![
            objective("ctr", "news", FeedbackClass::FreshDense),
            objective("ctr", "video", FeedbackClass::FreshDense),
        ];
        let out = partition(&[news, video], &objs, &policy()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].members.len(), 2);
    }

    #[test]
    fn feedback_classes_split() {
        let d = domain("shop", &["1"]);
        let objs = vec![
            objective("click", "shop", FeedbackClass::FreshDense),
            objective("purchase", "shop", FeedbackClass::DelayedSparse),
        ];
        let out = partition(&[d], &objs, &policy()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].feedback_class, FeedbackClass::FreshDense);
        assert_eq!(out[1].feedback_class, FeedbackClass::DelayedSparse);
    }

    #[test]
    fn incompatible_tags_separate() {
        let d = domain("ads", &["1"]);
        let mut eu = objective("ctr_eu", "ads", FeedbackClass::FreshDense);
        eu.compliance_tags = ids(&["region:EU"]);
        eu.est_value = 2.0;
        let mut us = objective("ctr_us", "ads", FeedbackClass::FreshDense);
        us.compliance_tags = ids(&["region:US"]);
        let mut p = policy();
        p.incompatible_tag_pairs = vec![("region:EU".into(), "region:US".into())];
        let out = partition(&[d], &[eu, us], &p).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].members[0].objective, "ctr_eu");
        assert_eq!(out[1].members[0].objective, "ctr_us");
    }

    #[test]
    fn low_similarity_splits() {
        let d = domain("ads", &["1"]);
        let mut a = objective("a", "ads", FeedbackClass::FreshDense);
        a.similarity.insert("b".into(), -0.5);
        let b = objective("b", "ads", FeedbackClass::FreshDense);
        let c = objective("c", "ads", FeedbackClass::FreshDense);
        let out = partition(&[d], &[a, b, c], &policy()).unwrap();
        let sets: Vec<Vec<&str>> = out
            .iter()
            .map(|p| p.members.iter().map(|m| m.objective.as_str()).collect())
            .collect();
        assert_eq!(sets, vec![vec!["a", "c"], vec!["b"]]);
    }

    #[test]
    fn budget_packing() {
        let d = domain("ads", &["1"]);
        let mut objs = Vec::new();
        for (i, cost) in [6.0, 5.0, 4.0, 20.0].into_iter().enumerate() {
            let mut o = objective(&format!("o{i}"), "ads", FeedbackClass::FreshDense);
            o.cost = cost;
            o.est_value = 10.0 - i as f64;
            objs.push(o);
        }
        let mut p = policy();
        p.budget_per_portfolio = 10.0;
        let out = partition(&[d], &objs, &p).unwrap();
        let costs: Vec<f64> = out.iter().map(|p| p.total_cost).collect();
        assert_eq!(costs, vec![10.0, 5.0, 20.0]);
        assert!(out[2].over_budget);
        assert!(!out[0].over_budget);
    }

    #[test]
    fn unknown_domain_is_usage_error() {
        let objs = vec![objective("ctr", "nowhere", FeedbackClass::FreshDense)];
        assert!(partition(&[domain("a", &["1"])], &objs, &policy()).unwrap_err().is_usage());
    }

    #[test]
    fn report_mentions_everything() {
        let ds = [domain("a", &["1"]), domain("b", &["1", "2"])];
        let objs = vec![objective("ctr", "a", FeedbackClass::FreshDense)];
        let out = partition(&ds, &objs, &policy()).unwrap();
        let text = report(&ds, &out).unwrap();
        assert!(text.contains("0.50/1.00"));
        assert!(text.contains("a×ctr"));
    }
}
