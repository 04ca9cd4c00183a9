//! Train/test split with location clusters assigned atomically.
//!
//! Images closer than the radius are chained into one cluster (single
//! linkage), so a sign photographed repeatedly from nearby positions lands
//! on one side only. Clusters are shuffled, assigned greedily to the test
//! side while a category they contain still lacks test instances, and then
//! repaired until every category reaches its quota.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ImageRecord};
use crate::seed::rng_for;

pub const DEFAULT_RADIUS_M: f64 = 50.0;
pub const DEFAULT_TEST_FRACTION: f64 = 0.25;
pub const DEFAULT_MAX_REPAIR_ITERS: usize = 10_000;

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Image ids per cluster, ascending; clusters ordered by their smallest id.
    pub clusters: Vec<Vec<u64>>,
    pub cluster_of: BTreeMap<u64, usize>,
    /// Images that became singletons for lack of a geotag.
    pub missing_geotag: Vec<u64>,
}

/// Single-linkage clusters: two images share a cluster iff a chain of
/// pairwise distances `<= radius` connects them.
pub fn cluster_by_location(images: &[ImageRecord], radius: f64) -> Clustering {
    let mut sorted: Vec<&ImageRecord> = images.iter().collect();
    sorted.sort_by_key(|i| i.id);
    let n = sorted.len();
    let mut uf = UnionFind::new(n);

    let cell = radius.max(f64::MIN_POSITIVE);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut missing = Vec::new();
    for (i, img) in sorted.iter().enumerate() {
        match img.geotag {
            Some(g) => {
                let key = ((g.easting / cell).floor() as i64, (g.northing / cell).floor() as i64);
                grid.entry(key).or_default().push(i);
            }
            None => missing.push(img.id),
        }
    }
    for (&(cx, cy), members) in &grid {
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(other) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &a in members {
                    for &b in other {
                        if a < b {
                            let (ga, gb) = (sorted[a].geotag.unwrap(), sorted[b].geotag.unwrap());
                            if ga.distance(&gb) <= radius {
                                uf.union(a, b);
                            }
                        }
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        log::warn!(
            "{} images without geotag form singleton clusters; near-duplicate views may straddle the split",
            missing.len()
        );
    }

    let mut root_to_cluster: HashMap<usize, usize> = HashMap::new();
    let mut clusters: Vec<Vec<u64>> = Vec::new();
    let mut cluster_of = BTreeMap::new();
    for (i, img) in sorted.iter().enumerate() {
        let root = uf.find(i);
        let c = *root_to_cluster.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[c].push(img.id);
        cluster_of.insert(img.id, c);
    }
    Clustering {
        clusters,
        cluster_of,
        missing_geotag: missing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub test_fraction: f64,
    pub seed: u64,
    pub radius_m: f64,
    pub max_repair_iters: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: 0,
            radius_m: DEFAULT_RADIUS_M,
            max_repair_iters: DEFAULT_MAX_REPAIR_ITERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SideCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub options: SplitOptions,
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub cluster_of: BTreeMap<u64, usize>,
    pub clusters: usize,
    pub per_category: BTreeMap<u64, SideCounts>,
    pub warnings: Vec<String>,
}

impl SplitResult {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("split", e))
    }
}

/// Test instances a category of `n` instances needs.
pub fn required_test(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn split(ds: &Dataset, opts: &SplitOptions) -> Result<SplitResult> {
    if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction {} outside (0, 1)",
            opts.test_fraction
        )));
    }
    let clustering = cluster_by_location(&ds.images, opts.radius_m);
    let nc = clustering.clusters.len();

    // instances per cluster per category
    let mut content: Vec<BTreeMap<u64, usize>> = vec![BTreeMap::new(); nc];
    let mut total: BTreeMap<u64, usize> = BTreeMap::new();
    let mut clusters_with: BTreeMap<u64, usize> = BTreeMap::new();
    for inst in &ds.instances {
        let c = *clustering
            .cluster_of
            .get(&inst.image_id)
            .ok_or_else(|| Error::Integrity(format!("instance {} has unknown image", inst.id)))?;
        let slot = content[c].entry(inst.category_id).or_default();
        if *slot == 0 {
            *clusters_with.entry(inst.category_id).or_default() += 1;
        }
        *slot += 1;
        *total.entry(inst.category_id).or_default() += 1;
    }
    let single: Vec<u64> = clusters_with
        .iter()
        .filter(|(_, &k)| k < 2)
        .map(|(&c, _)| c)
        .collect();
    if !single.is_empty() {
        return Err(Error::InfeasibleSplit { categories: single });
    }
    let required: BTreeMap<u64, usize> = total
        .iter()
        .map(|(&c, &n)| (c, required_test(n, opts.test_fraction)))
        .collect();

    let mut test_count: BTreeMap<u64, usize> = total.keys().map(|&c| (c, 0)).collect();
    let mut in_test = vec![false; nc];
    // moving keeps at least one training instance of every category involved
    let can_move = |c: usize, test_count: &BTreeMap<u64, usize>| {
        content[c]
            .iter()
            .all(|(cat, &k)| total[cat] - test_count[cat] - k >= 1)
    };

    let mut order: Vec<usize> = (0..nc).collect();
    order.shuffle(&mut rng_for(opts.seed, "split"));
    for &c in &order {
        let wanted = content[c]
            .keys()
            .any(|cat| test_count[cat] < required[cat]);
        if wanted && can_move(c, &test_count) {
            in_test[c] = true;
            for (cat, &k) in &content[c] {
                *test_count.get_mut(cat).unwrap() += k;
            }
        }
    }

    let mut iters = 0;
    loop {
        let mut deficient: Vec<(usize, u64)> = required
            .iter()
            .filter(|(cat, &r)| test_count[*cat] < r)
            .map(|(&cat, &r)| (r - test_count[&cat], cat))
            .collect();
        if deficient.is_empty() {
            break;
        }
        // most deficient first, ties by category id
        deficient.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        if iters >= opts.max_repair_iters {
            return Err(Error::InfeasibleSplit {
                categories: deficient.iter().map(|d| d.1).collect(),
            });
        }
        iters += 1;
        let mut moved = false;
        for &(_, cat) in &deficient {
            let best = (0..nc)
                .filter(|&c| !in_test[c] && content[c].contains_key(&cat) && can_move(c, &test_count))
                .max_by(|&a, &b| content[a][&cat].cmp(&content[b][&cat]).then(b.cmp(&a)));
            if let Some(c) = best {
                in_test[c] = true;
                for (k, &v) in &content[c] {
                    *test_count.get_mut(k).unwrap() += v;
                }
                moved = true;
                break;
            }
        }
        if !moved {
            return Err(Error::InfeasibleSplit {
                categories: deficient.iter().map(|d| d.1).collect(),
            });
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in clustering.clusters.iter().enumerate() {
        if in_test[c] {
            test.extend(members);
        } else {
            train.extend(members);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    let per_category = total
        .iter()
        .map(|(&cat, &n)| {
            let t = test_count[&cat];
            (cat, SideCounts { train: n - t, test: t })
        })
        .collect();
    let warnings = clustering
        .missing_geotag
        .iter()
        .map(|id| format!("image {id} has no geotag; assigned as a singleton cluster"))
        .collect();
    Ok(SplitResult {
        options: *opts,
        train,
        test,
        clusters: nc,
        cluster_of: clustering.cluster_of,
        per_category,
        warnings,
    })
}
