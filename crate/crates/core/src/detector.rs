//! Voting proposal generator: a two-stage point-set backbone, per-seed
//! votes toward object centers, vote clustering, and the proposal heads,
//! plus the detection loss that supervises all of it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::data::{LabeledBox, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::{dist2, AxisAlignedBox, Point3, PointCloud};
use crate::nn::{ForwardCtx, Init, Mlp, ParamStore};
use crate::tensor::Matrix;

/// Added to the softplus of the raw size output so boxes stay valid.
pub const MIN_SIZE: f64 = 0.01;

/// Head output layout: center offset, raw size, objectness, class logits.
const HEAD_WIDTH: usize = 3 + 3 + 2 + NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub centers: usize,
    pub radius: f64,
    pub nsample: usize,
    pub mlp: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub vote: f64,
    pub objectness: f64,
    pub center: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { vote: 1.0, objectness: 0.5, center: 1.0, class: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Per-point channels read from the cloud (colour); missing ones are zero.
    pub in_channels: usize,
    pub sa1: SaConfig,
    pub sa2: SaConfig,
    pub vote_hidden: usize,
    /// Number of proposals `k`.
    pub proposals: usize,
    /// Proposal feature width `h`.
    pub hidden: usize,
    pub cluster_radius: f64,
    pub cluster_nsample: usize,
    pub cluster_mlp: Vec<usize>,
    pub near_radius: f64,
    pub far_radius: f64,
    pub weights: LossWeights,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            in_channels: 3,
            sa1: SaConfig { centers: 128, radius: 0.4, nsample: 16, mlp: vec![32, 32] },
            sa2: SaConfig { centers: 64, radius: 0.8, nsample: 16, mlp: vec![32, 32] },
            vote_hidden: 32,
            proposals: 16,
            hidden: 32,
            cluster_radius: 0.4,
            cluster_nsample: 8,
            cluster_mlp: vec![32, 32],
            near_radius: 0.3,
            far_radius: 0.6,
            weights: LossWeights::default(),
        }
    }
}

impl DetectorConfig {
    /// Tiny configuration for 128-point clouds (`k = 4`, `h = 8`).
    pub fn toy() -> Self {
        DetectorConfig {
            in_channels: 3,
            sa1: SaConfig { centers: 32, radius: 0.6, nsample: 8, mlp: vec![8, 8] },
            sa2: SaConfig { centers: 16, radius: 1.0, nsample: 8, mlp: vec![8, 8] },
            vote_hidden: 8,
            proposals: 4,
            hidden: 8,
            cluster_radius: 0.5,
            cluster_nsample: 4,
            cluster_mlp: vec![8, 8],
            near_radius: 0.3,
            far_radius: 0.6,
            weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sa1.radius > 0.0
            && self.sa2.radius > 0.0
            && self.cluster_radius > 0.0
            && self.sa1.nsample > 0
            && self.sa2.nsample > 0
            && self.cluster_nsample > 0
            && !self.sa1.mlp.is_empty()
            && !self.sa2.mlp.is_empty()
            && !self.cluster_mlp.is_empty()
            && self.proposals > 0
            && self.hidden > 0
            && self.near_radius <= self.far_radius;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid detector configuration".into()))
        }
    }
}

/// Greedy max-min subset of size `m`, starting from index 0. Ties go to the
/// lowest index.
pub fn farthest_point_sample(points: &[Point3], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > points.len() {
        return Err(Error::Geometry(format!("cannot sample {m} of {} points", points.len())));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut cur = 0;
    loop {
        chosen.push(cur);
        if chosen.len() == m {
            return Ok(chosen);
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, points[cur]);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        cur = best.1;
    }
}

/// The `nsample` points nearest to `center` within `radius` (distance, then
/// index order), padded by repeating the nearest one. An empty ball yields
/// the single point nearest to the center.
pub fn ball_query(points: &[Point3], center: Point3, radius: f64, nsample: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut within: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(*p, center), i))
        .filter(|(d, _)| *d <= r2)
        .collect();
    if within.is_empty() {
        let nearest = points
            .iter()
            .enumerate()
            .map(|(i, p)| (dist2(*p, center), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("nonempty point set");
        within.push(nearest);
    }
    within.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    within.truncate(nsample);
    let mut idx: Vec<usize> = within.iter().map(|&(_, i)| i).collect();
    while idx.len() < nsample {
        idx.push(idx[0]);
    }
    idx
}

/// Seed coordinates with their learned features.
pub struct SeedPoints<'g, 'p> {
    pub coords: Vec<Point3>,
    /// `m×d_seed`.
    pub features: Var<'g, 'p>,
}

/// One set-abstraction stage: ball grouping around the given centers, a
/// shared per-point MLP on `[(p − c)/radius, feature]`, then max pooling.
#[derive(Clone, Debug)]
pub struct SetAbstraction {
    pub radius: f64,
    pub nsample: usize,
    pub mlp: Mlp,
}

impl SetAbstraction {
    pub fn new(init: &mut Init<'_>, name: &str, in_features: usize, radius: f64, nsample: usize, widths: &[usize]) -> Self {
        SetAbstraction { radius, nsample, mlp: Mlp::new(init, &format!("{name}.mlp"), 3 + in_features, widths, true) }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn forward<'g, 'p>(
        &self,
        ctx: &ForwardCtx<'g, 'p>,
        xyz: &[Point3],
        features: Option<Var<'g, 'p>>,
        centers: &[usize],
    ) -> SeedPoints<'g, 'p> {
        let ns = self.nsample;
        let mut group = Vec::with_capacity(centers.len() * ns);
        let mut rel = Matrix::zeros(centers.len() * ns, 3);
        for (gi, &c) in centers.iter().enumerate() {
            for (j, n) in ball_query(xyz, xyz[c], self.radius, ns).into_iter().enumerate() {
                for a in 0..3 {
                    rel.set(gi * ns + j, a, (xyz[n][a] - xyz[c][a]) / self.radius);
                }
                group.push(n);
            }
        }
        let rel = ctx.graph.constant(rel);
        let input = match features {
            Some(f) => Var::concat_cols(&[rel, f.gather_rows(&group)]),
            None => rel,
        };
        SeedPoints {
            coords: centers.iter().map(|&c| xyz[c]).collect(),
            features: self.mlp.forward(ctx, input).group_max(ns),
        }
    }
}

/// Proposals for one scene. `centers` and `sizes` are the predicted boxes.
pub struct ProposalSet<'g, 'p> {
    /// `k×h` proposal features.
    pub features: Var<'g, 'p>,
    /// `k×3`.
    pub centers: Var<'g, 'p>,
    /// `k×3`, strictly positive.
    pub sizes: Var<'g, 'p>,
    /// `k×2`: column 1 is "object".
    pub objectness_logits: Var<'g, 'p>,
    /// `k×18`.
    pub class_logits: Var<'g, 'p>,
    /// `m×3` vote coordinates (seed + offset).
    pub votes: Var<'g, 'p>,
    pub seed_coords: Vec<Point3>,
    /// Vote coordinates the proposals were grouped around.
    pub cluster_centers: Vec<Point3>,
}

impl ProposalSet<'_, '_> {
    pub fn len(&self) -> usize {
        self.cluster_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_centers.is_empty()
    }

    pub fn boxes(&self) -> Vec<AxisAlignedBox> {
        let (c, s) = (self.centers.value(), self.sizes.value());
        (0..c.rows())
            .map(|i| AxisAlignedBox {
                center: [c.get(i, 0), c.get(i, 1), c.get(i, 2)],
                size: [s.get(i, 0), s.get(i, 1), s.get(i, 2)],
            })
            .collect()
    }

    /// Per-seed vote offsets, `m×3`.
    pub fn vote_offsets(&self) -> Matrix {
        let v = self.votes.value();
        let mut out = (*v).clone();
        for (i, s) in self.seed_coords.iter().enumerate() {
            for a in 0..3 {
                out.set(i, a, v.get(i, a) - s[a]);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub sa1: SetAbstraction,
    pub sa2: SetAbstraction,
    pub vote: Mlp,
    pub cluster: Mlp,
    pub proposal: Mlp,
    pub head: Mlp,
}

impl Detector {
    pub fn new(init: &mut Init<'_>, cfg: &DetectorConfig) -> Self {
        let sa1 = SetAbstraction::new(init, "detector.sa1", cfg.in_channels, cfg.sa1.radius, cfg.sa1.nsample, &cfg.sa1.mlp);
        let sa2 = SetAbstraction::new(init, "detector.sa2", sa1.out_dim(), cfg.sa2.radius, cfg.sa2.nsample, &cfg.sa2.mlp);
        let d = sa2.out_dim();
        let vote = Mlp::new(init, "detector.vote", d, &[cfg.vote_hidden, 3 + d], false);
        let cluster = Mlp::new(init, "detector.cluster", 3 + d, &cfg.cluster_mlp, true);
        let a = cluster.out_dim();
        let proposal = Mlp::new(init, "detector.proposal", a, &[cfg.hidden, cfg.hidden], false);
        let head = Mlp::new(init, "detector.head", cfg.hidden, &[cfg.hidden, HEAD_WIDTH], false);
        Detector { cfg: cfg.clone(), sa1, sa2, vote, cluster, proposal, head }
    }

    /// Sets the last vote layer to zero, so votes sit on their seeds.
    pub fn zero_vote_head(&self, store: &mut ParamStore) {
        self.vote.layers.last().expect("vote head has layers").zero(store);
    }

    /// Two set-abstraction stages; seeds are the second stage's centers.
    pub fn backbone<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, cloud: &PointCloud) -> Result<SeedPoints<'g, 'p>> {
        let xyz = cloud.points();
        let n = xyz.len();
        let c = self.cfg.in_channels;
        let mut extra = Matrix::zeros(n, c);
        if let Some(e) = cloud.extra() {
            for i in 0..n {
                for j in 0..c.min(e.cols()) {
                    extra.set(i, j, e.get(i, j));
                }
            }
        }
        let feats = (c > 0).then(|| ctx.graph.constant(extra));
        let c1 = farthest_point_sample(xyz, self.cfg.sa1.centers.min(n))?;
        let s1 = self.sa1.forward(ctx, xyz, feats, &c1);
        let c2 = farthest_point_sample(&s1.coords, self.cfg.sa2.centers.min(s1.coords.len()))?;
        Ok(self.sa2.forward(ctx, &s1.coords, Some(s1.features), &c2))
    }

    /// Votes, clustering by farthest-point sampling over vote coordinates,
    /// ball grouping, and the proposal heads. Uses `min(k, m)` proposals.
    pub fn vote_and_propose<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, seeds: SeedPoints<'g, 'p>) -> Result<ProposalSet<'g, 'p>> {
        let g = ctx.graph;
        let d = self.sa2.out_dim();
        let m = seeds.coords.len();
        let out = self.vote.forward(ctx, seeds.features);
        let seed_xyz = g.constant(Matrix::from_rows(&seeds.coords));
        let votes = seed_xyz.add(out.slice_cols(0, 3));
        let vote_feats = seeds.features.add(out.slice_cols(3, d));

        let vv = votes.value();
        let vote_pts: Vec<Point3> = (0..m).map(|i| [vv.get(i, 0), vv.get(i, 1), vv.get(i, 2)]).collect();
        let k = self.cfg.proposals.min(m);
        let centers_idx = farthest_point_sample(&vote_pts, k)?;
        let ns = self.cfg.cluster_nsample;
        let r = self.cfg.cluster_radius;
        let mut group = Vec::with_capacity(k * ns);
        let mut owner = Vec::with_capacity(k * ns);
        for &c in &centers_idx {
            group.extend(ball_query(&vote_pts, vote_pts[c], r, ns));
            owner.extend(std::iter::repeat_n(c, ns));
        }
        let rel = votes.gather_rows(&group).sub(votes.gather_rows(&owner)).scale(1.0 / r);
        let grouped = Var::concat_cols(&[rel, vote_feats.gather_rows(&group)]);
        let pooled = self.cluster.forward(ctx, grouped).group_max(ns);
        let features = self.proposal.forward(ctx, pooled);
        let head = self.head.forward(ctx, features);

        let cluster_xyz = votes.gather_rows(&centers_idx);
        let centers = cluster_xyz.add(head.slice_cols(0, 3));
        let sizes = head
            .slice_cols(3, 3)
            .softplus()
            .add(g.constant(Matrix::filled(k, 3, MIN_SIZE)));
        Ok(ProposalSet {
            features,
            centers,
            sizes,
            objectness_logits: head.slice_cols(6, 2),
            class_logits: head.slice_cols(8, NUM_CLASSES),
            votes,
            seed_coords: seeds.coords,
            cluster_centers: centers_idx.iter().map(|&c| vote_pts[c]).collect(),
        })
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, cloud: &PointCloud) -> Result<ProposalSet<'g, 'p>> {
        let seeds = self.backbone(ctx, cloud)?;
        self.vote_and_propose(ctx, seeds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectnessLabel {
    Positive,
    Negative,
    Ignored,
}

/// Per-proposal and per-seed supervision derived from ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTargets {
    pub gt: Vec<LabeledBox>,
    /// Nearest ground-truth center for every proposal (`None` without gt).
    pub assignment: Vec<Option<usize>>,
    pub objectness_label: Vec<ObjectnessLabel>,
    /// Smallest ground-truth box containing each seed, if any.
    pub seed_assignment: Vec<Option<usize>>,
}

impl DetectionTargets {
    /// A proposal is positive when its cluster center lies within `near` of
    /// its nearest ground-truth center, negative beyond `far`, and ignored
    /// in between.
    pub fn build(props: &ProposalSet<'_, '_>, gt: &[LabeledBox], near: f64, far: f64) -> Self {
        let mut assignment = Vec::with_capacity(props.len());
        let mut objectness_label = Vec::with_capacity(props.len());
        for c in &props.cluster_centers {
            let best = gt
                .iter()
                .enumerate()
                .map(|(j, b)| (dist2(*c, b.bbox.center), j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let label = match best {
                Some((d2, _)) if d2.sqrt() < near => ObjectnessLabel::Positive,
                Some((d2, _)) if d2.sqrt() <= far => ObjectnessLabel::Ignored,
                _ => ObjectnessLabel::Negative,
            };
            assignment.push(best.map(|(_, j)| j));
            objectness_label.push(label);
        }
        let seed_assignment = props
            .seed_coords
            .iter()
            .map(|s| {
                gt.iter()
                    .enumerate()
                    .filter(|(_, b)| b.bbox.contains(*s))
                    .min_by(|a, b| a.1.bbox.volume().total_cmp(&b.1.bbox.volume()).then(a.0.cmp(&b.0)))
                    .map(|(j, _)| j)
            })
            .collect();
        DetectionTargets { gt: gt.to_vec(), assignment, objectness_label, seed_assignment }
    }
}

/// Unweighted detection loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionParts {
    pub vote: f64,
    pub objectness: f64,
    /// Center plus size regression.
    pub center: f64,
    pub class: f64,
}

impl DetectionParts {
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        w.vote * self.vote + w.objectness * self.objectness + w.center * self.center + w.class * self.class
    }

    pub fn components(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("vote".to_string(), self.vote),
            ("objectness".to_string(), self.objectness),
            ("center".to_string(), self.center),
            ("class".to_string(), self.class),
        ])
    }
}

pub struct DetectionLoss<'g, 'p> {
    pub total: Var<'g, 'p>,
    pub parts: DetectionParts,
}

/// `w.vote·L_vote + w.objectness·L_obj + w.center·L_center + w.class·L_cls`.
///
/// * `L_vote`: mean L1 distance from the votes of seeds inside an object to
///   that object's center.
/// * `L_obj`: mean cross-entropy over positive and negative proposals.
/// * `L_center`: mean over positives of the summed smooth-L1 center error
///   plus the summed smooth-L1 size error.
/// * `L_cls`: mean cross-entropy over positives.
///
/// Terms without any contributing seed or proposal are 0.
pub fn detection_loss<'g, 'p>(props: &ProposalSet<'g, 'p>, targets: &DetectionTargets, w: &LossWeights) -> DetectionLoss<'g, 'p> {
    let g = props.votes.graph();
    let zero = || g.constant(Matrix::scalar(0.0));

    let seeds: Vec<(usize, usize)> = targets
        .seed_assignment
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|j| (i, j)))
        .collect();
    let vote = if seeds.is_empty() {
        zero()
    } else {
        let idx: Vec<usize> = seeds.iter().map(|s| s.0).collect();
        let goal: Vec<Point3> = seeds.iter().map(|s| targets.gt[s.1].bbox.center).collect();
        props
            .votes
            .gather_rows(&idx)
            .sub(g.constant(Matrix::from_rows(&goal)))
            .abs()
            .sum()
            .scale(1.0 / seeds.len() as f64)
    };

    let mut obj_picks = Vec::new();
    let mut positives = Vec::new();
    for (i, l) in targets.objectness_label.iter().enumerate() {
        match l {
            ObjectnessLabel::Positive => {
                obj_picks.push((i, 1));
                positives.push((i, targets.assignment[i].expect("positives are assigned")));
            }
            ObjectnessLabel::Negative => obj_picks.push((i, 0)),
            ObjectnessLabel::Ignored => {}
        }
    }
    let objectness = if obj_picks.is_empty() {
        zero()
    } else {
        props
            .objectness_logits
            .log_softmax_rows()
            .pick(&obj_picks)
            .sum()
            .scale(-1.0 / obj_picks.len() as f64)
    };

    let (center, class) = if positives.is_empty() {
        (zero(), zero())
    } else {
        let idx: Vec<usize> = positives.iter().map(|p| p.0).collect();
        let inv = 1.0 / positives.len() as f64;
        let goal_c: Vec<Point3> = positives.iter().map(|p| targets.gt[p.1].bbox.center).collect();
        let goal_s: Vec<Point3> = positives.iter().map(|p| targets.gt[p.1].bbox.size).collect();
        let dc = props.centers.gather_rows(&idx).sub(g.constant(Matrix::from_rows(&goal_c)));
        let ds = props.sizes.gather_rows(&idx).sub(g.constant(Matrix::from_rows(&goal_s)));
        let center = dc.smooth_l1().sum().add(ds.smooth_l1().sum()).scale(inv);
        let picks: Vec<(usize, usize)> = positives.iter().map(|&(i, j)| (i, targets.gt[j].class_id)).collect();
        let class = props.class_logits.log_softmax_rows().pick(&picks).sum().scale(-inv);
        (center, class)
    };

    let parts = DetectionParts {
        vote: vote.value().item(),
        objectness: objectness.value().item(),
        center: center.value().item(),
        class: class.value().item(),
    };
    let total = vote
        .scale(w.vote)
        .add(objectness.scale(w.objectness))
        .add(center.scale(w.center))
        .add(class.scale(w.class));
    DetectionLoss { total, parts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::data::{generate_synthetic_scene_with, SyntheticConfig};
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn build(cfg: &DetectorConfig, seed: u64) -> (ParamStore, Detector) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, &[rng::tag::INIT]);
        let det = Detector::new(&mut Init { store: &mut store, rng: &mut r }, cfg);
        (store, det)
    }

    fn toy_scene(seed: u64) -> crate::data::SceneRecord {
        let cfg = SyntheticConfig { points: 128, ..Default::default() };
        generate_synthetic_scene_with(seed, "office", &cfg).unwrap().0
    }

    fn min_pairwise(points: &[Point3], idx: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                best = best.min(dist2(points[idx[a]], points[idx[b]]));
            }
        }
        best
    }

    #[test]
    fn fps_examples() {
        let line = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&line, 2).unwrap(), vec![0, 2]);
        let mut all = farthest_point_sample(&line, 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(farthest_point_sample(&line, 4).is_err());
        assert!(farthest_point_sample(&line, 0).is_err());
    }

    #[test]
    fn fps_spreads_at_least_as_well_as_random_subsets() {
        let mut r = rng::stream(3, &[]);
        let pts: Vec<Point3> = (0..64).map(|_| [r.random(), r.random(), r.random()]).collect();
        let m = 6;
        let fps = farthest_point_sample(&pts, m).unwrap();
        let d_fps = min_pairwise(&pts, &fps);
        // Greedy max-min is a 2-approximation of the optimum, so compare
        // against random subsets with that slack in squared distance.
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        let mut beaten = 0;
        for _ in 0..500 {
            idx.shuffle(&mut r);
            if min_pairwise(&pts, &idx[..m]) > d_fps {
                beaten += 1;
            }
            assert!(min_pairwise(&pts, &idx[..m]) <= 4.0 * d_fps);
        }
        assert!(beaten < 25, "random subsets beat fps {beaten} times");
    }

    #[test]
    fn ball_query_pads_and_falls_back() {
        let pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0]];
        assert_eq!(ball_query(&pts, pts[0], 0.5, 4), vec![0, 1, 0, 0]);
        assert_eq!(ball_query(&pts, [9.0, 0.0, 0.0], 0.5, 2), vec![2, 2]);
        assert_eq!(ball_query(&pts, pts[0], 10.0, 2), vec![0, 1]);
    }

    fn sa_features(pts: &[Point3], centers: &[usize]) -> Matrix {
        let mut store = ParamStore::new();
        let mut r = rng::stream(5, &[]);
        let sa = SetAbstraction::new(&mut Init { store: &mut store, rng: &mut r }, "sa", 0, 1.0, 8, &[6, 5]);
        let g = Graph::new(&store);
        let ctx = ForwardCtx::eval(&g);
        let out = sa.forward(&ctx, pts, None, centers);
        (*out.features.value()).clone()
    }

    #[test]
    fn set_abstraction_single_point_sees_zero_offset() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(5, &[]);
        let sa = SetAbstraction::new(&mut Init { store: &mut store, rng: &mut r }, "sa", 0, 1.0, 8, &[6, 5]);
        let g = Graph::new(&store);
        let ctx = ForwardCtx::eval(&g);
        let got = sa.forward(&ctx, &[[1.0, 2.0, 3.0]], None, &[0]);
        let direct = sa.mlp.forward(&ctx, g.constant(Matrix::zeros(1, 3)));
        assert_eq!(*got.features.value(), *direct.value());
    }

    #[test]
    fn set_abstraction_ignores_duplicates_and_order() {
        let pts = vec![[0.0, 0.0, 0.0], [0.3, 0.1, 0.0], [0.0, 0.4, 0.2], [0.2, 0.2, 0.2]];
        let base = sa_features(&pts, &[0]);
        let mut dup = pts.clone();
        dup.push(pts[2]);
        assert_eq!(sa_features(&dup, &[0]), base);
        let perm = vec![pts[0], pts[3], pts[1], pts[2]];
        assert!(sa_features(&perm, &[0]).max_abs_diff(&base) < 1e-12);
    }

    #[test]
    fn zero_vote_head_keeps_votes_on_seeds() {
        let cfg = DetectorConfig::toy();
        let (mut store, det) = build(&cfg, 1);
        det.zero_vote_head(&mut store);
        let g = Graph::new(&store);
        let props = det.forward(&ForwardCtx::eval(&g), &toy_scene(0).cloud).unwrap();
        assert!(props.vote_offsets().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn proposal_shapes_follow_config() {
        let cfg = DetectorConfig { proposals: 8, hidden: 16, ..DetectorConfig::toy() };
        let (store, det) = build(&cfg, 2);
        let g = Graph::new(&store);
        let props = det.forward(&ForwardCtx::eval(&g), &toy_scene(1).cloud).unwrap();
        assert_eq!(props.features.shape(), (8, 16));
        assert_eq!(props.class_logits.shape(), (8, NUM_CLASSES));
        assert_eq!(props.objectness_logits.shape(), (8, 2));
        assert!(props.boxes().iter().all(AxisAlignedBox::is_valid));
    }

    #[test]
    fn translation_moves_centers_and_keeps_features() {
        let cfg = DetectorConfig::toy();
        let (store, det) = build(&cfg, 3);
        let cloud = toy_scene(2).cloud;
        let t = [0.7, -1.3, 0.25];
        let g = Graph::new(&store);
        let ctx = ForwardCtx::eval(&g);
        let a = det.forward(&ctx, &cloud).unwrap();
        let b = det.forward(&ctx, &cloud.translated(t)).unwrap();
        assert!(a.features.value().max_abs_diff(&b.features.value()) < 1e-4);
        for (x, y) in a.boxes().iter().zip(b.boxes()) {
            for ax in 0..3 {
                assert!((x.center[ax] + t[ax] - y.center[ax]).abs() < 1e-4);
                assert!((x.size[ax] - y.size[ax]).abs() < 1e-4);
            }
        }
    }

    /// A hand-built proposal set; logits and boxes are constants.
    fn manual<'g, 'p>(
        g: &'g Graph<'p>,
        centers: &[Point3],
        sizes: &[Point3],
        obj: &[[f64; 2]],
        cls: &Matrix,
        seeds: &[Point3],
        votes: &[Point3],
    ) -> ProposalSet<'g, 'p> {
        ProposalSet {
            features: g.constant(Matrix::zeros(centers.len(), 4)),
            centers: g.constant(Matrix::from_rows(centers)),
            sizes: g.constant(Matrix::from_rows(sizes)),
            objectness_logits: g.constant(Matrix::from_rows(obj)),
            class_logits: g.constant(cls.clone()),
            votes: g.constant(Matrix::from_rows(votes)),
            seed_coords: seeds.to_vec(),
            cluster_centers: centers.to_vec(),
        }
    }

    fn one_hot_logits(classes: &[usize], scale: f64) -> Matrix {
        let mut m = Matrix::zeros(classes.len(), NUM_CLASSES);
        for (i, &c) in classes.iter().enumerate() {
            m.set(i, c, scale);
        }
        m
    }

    #[test]
    fn exact_predictions_give_zero_regression() {
        let store = ParamStore::new();
        let g = Graph::new(&store);
        let gt = vec![LabeledBox { bbox: AxisAlignedBox::new([1.0, 1.0, 0.5], [1.0, 0.5, 1.0]).unwrap(), class_id: 4 }];
        let p = manual(&g, &[[1.0, 1.0, 0.5]], &[[1.0, 0.5, 1.0]], &[[-50.0, 50.0]], &one_hot_logits(&[4], 60.0), &[[1.1, 1.0, 0.4]], &[[1.0, 1.0, 0.5]]);
        let t = DetectionTargets::build(&p, &gt, 0.3, 0.6);
        let loss = detection_loss(&p, &t, &LossWeights::default());
        assert_eq!(loss.parts.vote, 0.0);
        assert_eq!(loss.parts.center, 0.0);
        assert!(loss.parts.objectness < 1e-20);
        assert!(loss.parts.class < 1e-20);
    }

    #[test]
    fn size_error_of_one_meter_costs_half() {
        let store = ParamStore::new();
        let g = Graph::new(&store);
        let gt = vec![LabeledBox { bbox: AxisAlignedBox::new([0.0; 3], [1.0; 3]).unwrap(), class_id: 0 }];
        let p = manual(&g, &[[0.0; 3]], &[[2.0, 1.0, 1.0]], &[[0.0, 0.0]], &one_hot_logits(&[0], 0.0), &[], &[]);
        let t = DetectionTargets::build(&p, &gt, 0.3, 0.6);
        let loss = detection_loss(&p, &t, &LossWeights::default());
        assert_eq!(loss.parts.center, 0.5);
    }

    #[test]
    fn total_recombines_from_components() {
        let cfg = DetectorConfig::toy();
        let (store, det) = build(&cfg, 4);
        let scene = toy_scene(3);
        let g = Graph::new(&store);
        let props = det.forward(&ForwardCtx::eval(&g), &scene.cloud).unwrap();
        let t = DetectionTargets::build(&props, &scene.objects, 0.3, 0.6);
        let w = LossWeights::default();
        let loss = detection_loss(&props, &t, &w);
        assert_eq!(loss.total.value().item(), loss.parts.recombine(&w));
        assert!(loss.total.value().item() >= 0.0);
    }

    #[test]
    fn no_ground_truth_leaves_only_negatives() {
        let cfg = DetectorConfig::toy();
        let (store, det) = build(&cfg, 5);
        let scene = toy_scene(4);
        let g = Graph::new(&store);
        let props = det.forward(&ForwardCtx::eval(&g), &scene.cloud).unwrap();
        let t = DetectionTargets::build(&props, &[], 0.3, 0.6);
        assert!(t.objectness_label.iter().all(|l| *l == ObjectnessLabel::Negative));
        let loss = detection_loss(&props, &t, &LossWeights::default());
        assert_eq!((loss.parts.vote, loss.parts.center, loss.parts.class), (0.0, 0.0, 0.0));
        assert!(loss.parts.objectness > 0.0);
    }

    #[test]
    fn objectness_labels_partition_by_distance() {
        let store = ParamStore::new();
        let g = Graph::new(&store);
        let gt = vec![LabeledBox { bbox: AxisAlignedBox::new([0.0; 3], [1.0; 3]).unwrap(), class_id: 0 }];
        let centers: Vec<Point3> = [0.0, 0.29, 0.3, 0.45, 0.6, 0.61].iter().map(|&x| [x, 0.0, 0.0]).collect();
        let n = centers.len();
        let p = manual(&g, &centers, &vec![[1.0; 3]; n], &vec![[0.0; 2]; n], &Matrix::zeros(n, NUM_CLASSES), &[], &[]);
        let t = DetectionTargets::build(&p, &gt, 0.3, 0.6);
        use ObjectnessLabel::*;
        assert_eq!(t.objectness_label, vec![Positive, Positive, Ignored, Ignored, Ignored, Negative]);
    }
}
