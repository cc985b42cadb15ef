//! Synthetic benchmarks: subjects clustered on a coalescent tree, with traits
//! drifting by Brownian motion, and two ways of changing the target dataset
//! (branch-length perturbation and an added mixture edge).

use nalgebra::DMatrix;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dissim::FeatureTable;
use crate::error::{Error, Result};

/// Rooted binary tree; tips are nodes `0..n_tips`, every parent has a larger
/// index than its children, and the root is the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    parent: Vec<Option<usize>>,
    branch_length: Vec<f64>,
    tip_labels: Vec<String>,
}

impl Tree {
    pub fn from_parts(
        parent: Vec<Option<usize>>,
        branch_length: Vec<f64>,
        tip_labels: Vec<String>,
    ) -> Result<Self> {
        let n = parent.len();
        let k = tip_labels.len();
        if k < 1 || n != 2 * k - 1 || branch_length.len() != n {
            return Err(Error::InvalidArgument(format!(
                "a tree with {k} tips needs {} nodes, got {n} parents and {} lengths",
                2 * k.max(1) - 1,
                branch_length.len()
            )));
        }
        let roots = parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 || parent[n - 1].is_some() {
            return Err(Error::InvalidArgument("tree needs exactly one root, stored last".into()));
        }
        let mut n_children = vec![0usize; n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p <= i || p >= n {
                    return Err(Error::InvalidArgument(format!("node {i} has invalid parent {p}")));
                }
                n_children[p] += 1;
            }
        }
        if n_children[..k].iter().any(|&c| c != 0) || (k > 1 && n_children[k..].iter().any(|&c| c != 2)) {
            return Err(Error::InvalidArgument("tips must be leaves and internal nodes binary".into()));
        }
        if branch_length.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::InvalidArgument("branch lengths must be nonnegative".into()));
        }
        Ok(Self { parent, branch_length, tip_labels })
    }

    pub fn n_tips(&self) -> usize {
        self.tip_labels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn branch_lengths(&self) -> &[f64] {
        &self.branch_length
    }

    pub fn tip_labels(&self) -> &[String] {
        &self.tip_labels
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..node).filter(|&c| self.parent[c] == Some(node)).collect()
    }

    /// Distance from the root to every node.
    pub fn depths(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.n_nodes()];
        for node in (0..self.n_nodes()).rev() {
            if let Some(p) = self.parent[node] {
                depth[node] = depth[p] + self.branch_length[node];
            }
        }
        depth
    }

    /// Root-to-tip path lengths.
    pub fn tip_depths(&self) -> Vec<f64> {
        self.depths()[..self.n_tips()].to_vec()
    }

    fn ancestors(&self, mut node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while let Some(p) = self.parent[node] {
            path.push(p);
            node = p;
        }
        path
    }

    /// Patristic distances between tips.
    pub fn tip_distances(&self) -> DMatrix<f64> {
        let k = self.n_tips();
        let depth = self.depths();
        let paths: Vec<Vec<usize>> = (0..k).map(|t| self.ancestors(t)).collect();
        DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                return 0.0;
            }
            let mrca = paths[i].iter().find(|n| paths[j].contains(n)).copied().unwrap_or(self.root());
            depth[i] + depth[j] - 2.0 * depth[mrca]
        })
    }

    /// Length of the shared root path of two tips.
    pub fn shared_path(&self, a: usize, b: usize) -> f64 {
        let pa = self.ancestors(a);
        let pb = self.ancestors(b);
        let mrca = pa.iter().find(|n| pb.contains(n)).copied().unwrap_or(self.root());
        self.depths()[mrca]
    }

    pub fn newick(&self) -> String {
        fn write(tree: &Tree, node: usize, out: &mut String) {
            if node < tree.n_tips() {
                out.push_str(&tree.tip_labels[node]);
            } else {
                out.push('(');
                for (i, c) in tree.children(node).into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(tree, c, out);
                }
                out.push(')');
            }
            if node != tree.root() {
                out.push_str(&format!(":{}", tree.branch_length[node]));
            }
        }
        let mut out = String::new();
        write(self, self.root(), &mut out);
        out.push(';');
        out
    }
}

/// Kingman coalescent on `k` tips: while `i` lineages remain, wait
/// `Exp(i(i-1)/2)` and merge a uniformly chosen pair.
pub fn sample_coalescent_tree(k: usize, rng: &mut impl Rng) -> Result<Tree> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("coalescent needs at least 2 tips, got {k}")));
    }
    let n = 2 * k - 1;
    let mut parent = vec![None; n];
    let mut length = vec![0.0; n];
    let mut height = vec![0.0; n];
    let mut active: Vec<usize> = (0..k).collect();
    let mut t = 0.0;
    for node in k..n {
        let i = active.len() as f64;
        t += Exp::new(i * (i - 1.0) / 2.0).expect("positive rate").sample(rng);
        let pair = index::sample(rng, active.len(), 2);
        let (x, y) = (pair.index(0), pair.index(1));
        let (a, b) = (active[x], active[y]);
        for child in [a, b] {
            parent[child] = Some(node);
            length[child] = t - height[child];
        }
        height[node] = t;
        active.retain(|&v| v != a && v != b);
        active.push(node);
    }
    let labels = (1..=k).map(|i| format!("t{i}")).collect();
    Tree::from_parts(parent, length, labels)
}

/// Brownian motion along the tree from a root value of 0; returns the
/// `n_tips x l` matrix of tip values.
pub fn brownian_traits(tree: &Tree, l: usize, rate: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if l < 1 {
        return Err(Error::InvalidArgument("need at least one trait".into()));
    }
    if !(rate >= 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be nonnegative, got {rate}")));
    }
    let n = tree.n_nodes();
    let mut values = vec![Vec::new(); n];
    values[tree.root()] = vec![0.0; l];
    for node in (0..n - 1).rev() {
        let p = tree.parent[node].expect("non-root node has a parent");
        let sd = (rate * tree.branch_length[node]).sqrt();
        let row: Vec<f64> = values[p]
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(rng);
                v + sd * z
            })
            .collect();
        values[node] = row;
    }
    let k = tree.n_tips();
    Ok(DMatrix::from_fn(k, l, |i, j| values[i][j]))
}

/// One-hot `n x k` membership with every cluster non-empty.
pub fn make_membership(n: usize, k: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    Ok(DMatrix::from_fn(n, k, |i, c| if labels[i] == c { 1.0 } else { 0.0 }))
}

/// Hard cluster of each row (argmax, first wins ties).
pub fn hard_labels(a: &DMatrix<f64>) -> Vec<usize> {
    a.row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn subject_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("s{i}")).collect()
}

pub fn feature_labels(l: usize) -> Vec<String> {
    (1..=l).map(|i| format!("f{i}")).collect()
}

/// Subject features `a_iᵀ D0 + N(0, sigma²)`.
pub fn simulate_features(
    a: &DMatrix<f64>,
    d0: &DMatrix<f64>,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<FeatureTable> {
    if a.ncols() != d0.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "membership has {} clusters, traits have {} rows",
            a.ncols(),
            d0.nrows()
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut values = a * d0;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("valid sd");
        for v in values.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    FeatureTable::complete(subject_labels(a.nrows()), feature_labels(d0.ncols()), values)
}

/// Same topology, every branch length multiplied by an independent `U(0.1, 2)`.
pub fn scenario_a(tree: &Tree, rng: &mut impl Rng) -> Tree {
    let u = Uniform::new(0.1, 2.0).expect("valid range");
    let mut out = tree.clone();
    for b in out.branch_length.iter_mut() {
        *b *= u.sample(rng);
    }
    out
}

/// Membership after adding one mixture edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEdge {
    /// `n x k`, rows on the simplex.
    #[serde(skip)]
    pub membership: DMatrix<f64>,
    pub recipient: usize,
    pub donor: usize,
    /// Subjects whose membership changed.
    pub affected: Vec<usize>,
    /// `r == 1`: every recipient subject moved, a relationship change rather
    /// than a structural one.
    pub relationship_change: bool,
}

/// Make a fraction `r` of one cluster a `(1 - beta, beta)` mixture with a
/// distant cluster (at least the median tip distance away).
pub fn scenario_b(
    a: &DMatrix<f64>,
    tree: &Tree,
    beta: f64,
    r: f64,
    rng: &mut impl Rng,
) -> Result<MixtureEdge> {
    let k = a.ncols();
    if k != tree.n_tips() {
        return Err(Error::ShapeMismatch(format!("{k} clusters vs {} tips", tree.n_tips())));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta must be in (0, 1), got {beta}")));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("r must be in (0, 1], got {r}")));
    }
    let labels = hard_labels(a);
    let recipient = rng.random_range(0..k);
    let dist = tree.tip_distances();
    let mut others: Vec<f64> = (0..k).filter(|&j| j != recipient).map(|j| dist[(recipient, j)]).collect();
    if others.is_empty() {
        return Err(Error::NoEligibleDonor(recipient));
    }
    others.sort_by(f64::total_cmp);
    let m = others.len();
    let median = if m % 2 == 1 { others[m / 2] } else { 0.5 * (others[m / 2 - 1] + others[m / 2]) };
    let eligible: Vec<usize> = (0..k).filter(|&j| j != recipient && dist[(recipient, j)] >= median).collect();
    let Some(&donor) = eligible.choose(rng) else {
        return Err(Error::NoEligibleDonor(recipient));
    };

    let members: Vec<usize> = (0..a.nrows()).filter(|&i| labels[i] == recipient).collect();
    let count = ((r * members.len() as f64).ceil() as usize).min(members.len());
    let mut affected: Vec<usize> =
        index::sample(rng, members.len(), count).into_iter().map(|p| members[p]).collect();
    affected.sort_unstable();

    let mut membership = a.clone();
    for &i in &affected {
        membership.row_mut(i).fill(0.0);
        membership[(i, recipient)] = 1.0 - beta;
        membership[(i, donor)] = beta;
    }
    Ok(MixtureEdge { membership, recipient, donor, affected, relationship_change: count == members.len() })
}

/// Move the selected rows toward the mean profile of the `toward` rows.
pub fn inject_anomaly(
    table: &FeatureTable,
    rows: &[usize],
    toward: &[usize],
    strength: f64,
) -> Result<FeatureTable> {
    if rows.is_empty() || toward.is_empty() {
        return Err(Error::EmptySelection("both row sets must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!("strength must be in [0, 1], got {strength}")));
    }
    let d = table.n_subjects();
    if let Some(&bad) = rows.iter().chain(toward).find(|&&i| i >= d) {
        return Err(Error::InvalidArgument(format!("row {bad} out of range ({d})")));
    }
    if rows.iter().any(|i| toward.contains(i)) {
        return Err(Error::InvalidArgument("row sets must be disjoint".into()));
    }
    let mut values = table.values().clone();
    for j in 0..table.n_features() {
        let obs: Vec<f64> =
            toward.iter().filter(|&&i| !table.is_missing(i, j)).map(|&i| table.values()[(i, j)]).collect();
        if obs.is_empty() {
            continue;
        }
        let target = obs.iter().sum::<f64>() / obs.len() as f64;
        for &i in rows {
            if !table.is_missing(i, j) {
                values[(i, j)] = (1.0 - strength) * values[(i, j)] + strength * target;
            }
        }
    }
    FeatureTable::new(table.subjects().to_vec(), table.features().to_vec(), values, table.mask().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Subjects.
    pub n: usize,
    /// Features.
    pub l: usize,
    /// Clusters (tree tips).
    pub k: usize,
    /// Subject-level noise sd.
    pub sigma: f64,
    /// Mixture weight of the donor in Scenario B.
    pub beta: f64,
    /// Fraction of the recipient cluster affected in Scenario B.
    pub r: f64,
    /// Brownian rate.
    pub rate: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n: 100, l: 2000, k: 10, sigma: 0.05, beta: 0.5, r: 0.5, rate: 1.0, seed: 0 }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.k > self.n {
            return Err(Error::InvalidArgument(format!("need 2 <= K <= N, got K={}, N={}", self.k, self.n)));
        }
        if self.l < 2 {
            return Err(Error::InvalidArgument("need at least 2 features".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.r) {
            return Err(Error::InvalidArgument("beta and r must lie in [0, 1]".into()));
        }
        if !(self.sigma >= 0.0) || !(self.rate >= 0.0) {
            return Err(Error::InvalidArgument("sigma and rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A reference dataset and its two modified targets.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimulationConfig,
    pub tree1: Tree,
    /// Branch-perturbed copy of `tree1`.
    pub tree2: Tree,
    pub membership: DMatrix<f64>,
    pub edge: MixtureEdge,
    /// Features generated on `tree1`.
    pub reference: FeatureTable,
    /// Features generated on `tree2` with the original membership.
    pub scenario_a: FeatureTable,
    /// Features generated on `tree2` (same cluster traits as Scenario A)
    /// with the mixture-edge membership.
    pub scenario_b: FeatureTable,
}

/// Serializable record of what was planted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimulationConfig,
    pub tree1_newick: String,
    pub tree2_newick: String,
    /// Cluster index of every subject under the reference membership.
    pub clusters: Vec<usize>,
    pub membership_a: Vec<Vec<f64>>,
    pub membership_b: Vec<Vec<f64>>,
    pub recipient: usize,
    pub donor: usize,
    pub affected: Vec<usize>,
    pub relationship_change: bool,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Simulation {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            config: self.config,
            tree1_newick: self.tree1.newick(),
            tree2_newick: self.tree2.newick(),
            clusters: hard_labels(&self.membership),
            membership_a: rows(&self.membership),
            membership_b: rows(&self.edge.membership),
            recipient: self.edge.recipient,
            donor: self.edge.donor,
            affected: self.edge.affected.clone(),
            relationship_change: self.edge.relationship_change,
        }
    }

    /// A fresh table from the reference generator: same tree and membership,
    /// new traits and noise.
    pub fn null_replicate(&self, seed: u64) -> Result<FeatureTable> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d0 = brownian_traits(&self.tree1, self.config.l, self.config.rate, &mut rng)?;
        simulate_features(&self.membership, &d0, self.config.sigma, &mut rng)
    }
}

/// Run the full generator from `config.seed`.
pub fn simulate(config: &SimulationConfig) -> Result<Simulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tree1 = sample_coalescent_tree(config.k, &mut rng)?;
    let membership = make_membership(config.n, config.k, &mut rng)?;
    let d0_ref = brownian_traits(&tree1, config.l, config.rate, &mut rng)?;
    let reference = simulate_features(&membership, &d0_ref, config.sigma, &mut rng)?;

    let tree2 = scenario_a(&tree1, &mut rng);
    let d0_target = brownian_traits(&tree2, config.l, config.rate, &mut rng)?;
    let scenario_a_table = simulate_features(&membership, &d0_target, config.sigma, &mut rng)?;

    let beta = config.beta.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    let r = config.r.max(f64::EPSILON);
    let edge = scenario_b(&membership, &tree2, beta, r, &mut rng)?;
    let scenario_b_table = simulate_features(&edge.membership, &d0_target, config.sigma, &mut rng)?;

    Ok(Simulation {
        config: *config,
        tree1,
        tree2,
        membership,
        edge,
        reference,
        scenario_a: scenario_a_table,
        scenario_b: scenario_b_table,
    })
}
