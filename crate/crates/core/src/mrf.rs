//! Macro random forest: regression trees that split on the state variables `S`
//! and hold a kernel-weighted ridge regression on `X` in every leaf, so the
//! forest maps each period's state to a coefficient vector `β_t`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Dataset;
use crate::linalg::{dot, Matrix};
use crate::linear::{ols_fit, LinearError, WeightedMoments};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

/// Row offsets covered by the podium kernel, matching `podium_weights`.
const OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];

#[derive(Debug, Error)]
pub enum MrfError {
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("{rows} training rows, need at least {required}")]
    TooFewRows { rows: usize, required: usize },
    #[error("no admissible split")]
    NoValidSplit,
    #[error("row has {got_x} X and {got_s} S values, forest expects {n_x} and {n_s}")]
    DimensionMismatch { n_x: usize, n_s: usize, got_x: usize, got_s: usize },
    #[error("no row is out of bag in any tree")]
    NoOobCoverage,
    #[error("prior coefficients: {0}")]
    Prior(#[from] LinearError),
    #[error("forest encoding: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrfParams {
    /// Share of state columns drawn as split candidates at each node.
    pub mtry_fraction: f64,
    pub row_subsample_rate: f64,
    pub zeta: f64,
    pub lambda: f64,
    pub n_trees: usize,
    /// `None` resolves to `max(5, |X| + 2)`.
    pub min_leaf_obs: Option<usize>,
    pub bag_block_len_years: usize,
    pub seed: u64,
}

impl Default for MrfParams {
    fn default() -> Self {
        Self {
            mtry_fraction: 1.0 / 3.0,
            row_subsample_rate: 0.9,
            zeta: 0.25,
            lambda: 1.0,
            n_trees: 500,
            min_leaf_obs: None,
            bag_block_len_years: 2,
            seed: 20211,
        }
    }
}

impl MrfParams {
    pub fn min_leaf(&self, n_x: usize) -> usize {
        self.min_leaf_obs.unwrap_or_else(|| (n_x + 2).max(5))
    }

    /// Number of state columns drawn per split out of `n_s`.
    pub fn mtry(&self, n_s: usize) -> usize {
        ((self.mtry_fraction * n_s as f64 - 1e-9).ceil() as usize).clamp(1, n_s.max(1))
    }

    /// Checks the ranges and returns the resolved minimum leaf size.
    pub fn validate(&self, n_x: usize) -> Result<usize, MrfError> {
        let bad = |m: String| Err(MrfError::InvalidParams(m));
        if !(self.mtry_fraction > 0.0 && self.mtry_fraction <= 1.0) {
            return bad(format!("mtry_fraction {} not in (0, 1]", self.mtry_fraction));
        }
        if !(self.row_subsample_rate > 0.0 && self.row_subsample_rate <= 1.0) {
            return bad(format!("row_subsample_rate {} not in (0, 1]", self.row_subsample_rate));
        }
        if !(self.zeta >= 0.0 && self.zeta < 1.0) {
            return bad(format!("zeta {} not in [0, 1)", self.zeta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if self.bag_block_len_years == 0 {
            return bad("bag_block_len_years must be positive".into());
        }
        let min_leaf = self.min_leaf(n_x);
        if min_leaf < n_x + 1 {
            return bad(format!("min_leaf_obs {min_leaf} below |X| + 1 = {}", n_x + 1));
        }
        Ok(min_leaf)
    }
}

/// Kernel weights for row offsets -2..=2 around a leaf member.
pub fn podium_weights<T: Scalar>(zeta: T) -> [T; 5] {
    let z2 = zeta * zeta;
    [z2, zeta, T::one(), zeta, z2]
}

/// Leaf members plus their podium neighbours, as `(row, weight)` sorted by row.
pub fn expand_leaf<T: Scalar>(members: &[usize], n_rows: usize, zeta: T) -> Vec<(usize, T)> {
    expand_leaf_within(members, &vec![true; n_rows], zeta)
}

/// Like [`expand_leaf`], but neighbours are only taken from `eligible` rows
/// (a tree's in-bag set). Members keep weight one; a row reached from several
/// members keeps the largest weight.
pub fn expand_leaf_within<T: Scalar>(members: &[usize], eligible: &[bool], zeta: T) -> Vec<(usize, T)> {
    let kernel = podium_weights(zeta);
    let n = eligible.len() as isize;
    let mut w = vec![T::zero(); eligible.len()];
    for &t in members {
        for (d, &kw) in OFFSETS.iter().zip(&kernel) {
            let r = t as isize + d;
            if r < 0 || r >= n || (*d != 0 && !eligible[r as usize]) {
                continue;
            }
            if kw > w[r as usize] {
                w[r as usize] = kw;
            }
        }
    }
    w.into_iter().enumerate().filter(|(_, v)| *v > T::zero()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice<T> {
    pub feature: usize,
    pub threshold: T,
    /// Sum of both children's penalized weighted SSR.
    pub objective: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum TreeNode<T> {
    Split { feature: usize, threshold: T, left: Box<TreeNode<T>>, right: Box<TreeNode<T>> },
    Leaf { beta: Vec<T>, members: Vec<usize> },
}

impl<T: Scalar> TreeNode<T> {
    /// Leaf reached by a state row; `s_j <= threshold` goes left.
    pub fn route(&self, s_row: &[T]) -> &TreeNode<T> {
        let mut node = self;
        while let TreeNode::Split { feature, threshold, left, right } = node {
            node = if s_row[*feature] <= *threshold { left } else { right };
        }
        node
    }

    pub fn leaf_beta(&self, s_row: &[T]) -> &[T] {
        match self.route(s_row) {
            TreeNode::Leaf { beta, .. } => beta,
            TreeNode::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    pub fn leaves(&self) -> Vec<&TreeNode<T>> {
        match self {
            TreeNode::Leaf { .. } => vec![self],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    /// Sorted training rows drawn for this tree.
    pub in_bag: Vec<usize>,
    pub root: TreeNode<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Forest<T> {
    pub format_version: u32,
    pub params: MrfParams,
    pub min_leaf_obs: usize,
    pub n_rows: usize,
    pub n_x: usize,
    pub n_s: usize,
    pub beta_prior: Vec<T>,
    pub trees: Vec<Tree<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OobReport<T> {
    pub rmsfe: T,
    /// Out-of-bag prediction per training row; `None` when every tree saw the row.
    pub predictions: Vec<Option<T>>,
    pub uncovered_rows: Vec<usize>,
}

/// Random stream for tree `tree` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Sorted candidate state columns for one split.
pub fn draw_features(rng: &mut ChaCha8Rng, n_s: usize, mtry: usize) -> Vec<usize> {
    let mut v = sample(rng, n_s, mtry.min(n_s)).into_vec();
    v.sort_unstable();
    v
}

/// Block subsample without replacement. Years are cut into consecutive blocks
/// of `block_len` starting at the first year; blocks are drawn in random order
/// until at least `rate` of the rows are covered. Returns sorted row indices.
pub fn draw_bag(years: &[i32], rate: f64, block_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = years.len();
    if n == 0 {
        return Vec::new();
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut last_id = None;
    for (row, &y) in years.iter().enumerate() {
        let id = (y - years[0]).div_euclid(block_len as i32);
        if last_id != Some(id) {
            blocks.push(Vec::new());
            last_id = Some(id);
        }
        blocks.last_mut().expect("pushed above").push(row);
    }
    let target = rate * n as f64 - 1e-9;
    let order = sample(rng, blocks.len(), blocks.len()).into_vec();
    let mut rows = Vec::with_capacity(n);
    for b in order {
        if rows.len() as f64 >= target {
            break;
        }
        rows.extend_from_slice(&blocks[b]);
    }
    rows.sort_unstable();
    rows
}

/// Per-row packed sufficient statistics: upper triangle of `x xᵀ`, then
/// `x y`, then `y²`.
struct RowMoments<T> {
    p: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> RowMoments<T> {
    fn new(x: &Matrix<T>, y: &[T]) -> Self {
        let p = x.ncols();
        let width = p * (p + 1) / 2 + p + 1;
        let mut data = Vec::with_capacity(width * y.len());
        for (r, &yr) in y.iter().enumerate() {
            let xr = x.row(r);
            for i in 0..p {
                for j in i..p {
                    data.push(xr[i] * xr[j]);
                }
            }
            for &v in xr {
                data.push(v * yr);
            }
            data.push(yr * yr);
        }
        Self { p, width, data }
    }

    #[inline]
    fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.width..(r + 1) * self.width]
    }
}

/// Reusable buffers for one side's ridge objective.
struct Scratch<T> {
    chol: Vec<T>,
    z: Vec<T>,
    w: Vec<T>,
    acc: Vec<T>,
    snaps: Vec<T>,
}

/// Everything a tree needs to grow, shared across nodes.
struct Grower<'a, T> {
    s: &'a Matrix<T>,
    x: &'a Matrix<T>,
    y: &'a [T],
    moments: &'a RowMoments<T>,
    eligible: Vec<bool>,
    kernel: [T; 5],
    lambda: T,
    prior: &'a [T],
    prior_sq: T,
    min_leaf: usize,
    mtry: usize,
}

impl<'a, T: Scalar> Grower<'a, T> {
    fn new(
        ds: &'a Dataset<T>,
        moments: &'a RowMoments<T>,
        in_bag: &[usize],
        params: &MrfParams,
        min_leaf: usize,
        prior: &'a [T],
    ) -> Self {
        let mut eligible = vec![false; ds.n_rows()];
        for &r in in_bag {
            eligible[r] = true;
        }
        Self {
            s: &ds.s,
            x: &ds.x,
            y: &ds.y,
            moments,
            eligible,
            kernel: podium_weights(T::of(params.zeta)),
            lambda: T::of(params.lambda),
            prior,
            prior_sq: prior.iter().map(|&b| b * b).sum(),
            min_leaf,
            mtry: params.mtry(ds.n_s()),
        }
    }

    fn scratch(&self) -> Scratch<T> {
        let p = self.moments.p;
        Scratch {
            chol: vec![T::zero(); p * p],
            z: vec![T::zero(); p],
            w: vec![T::zero(); self.y.len()],
            acc: vec![T::zero(); self.moments.width],
            snaps: Vec::new(),
        }
    }

    /// Raises the neighbourhood weights of member `t` and folds the weight
    /// increments into `acc`.
    #[inline]
    fn absorb(&self, t: usize, w: &mut [T], acc: &mut [T]) {
        let n = w.len() as isize;
        for (d, &kw) in OFFSETS.iter().zip(&self.kernel) {
            let r = t as isize + d;
            if r < 0 || r >= n {
                continue;
            }
            let r = r as usize;
            if (*d != 0 && !self.eligible[r]) || kw <= w[r] {
                continue;
            }
            let delta = kw - w[r];
            w[r] = kw;
            for (a, &m) in acc.iter_mut().zip(self.moments.row(r)) {
                *a += delta * m;
            }
        }
    }

    /// Minimum of the penalized weighted SSR given packed moments, via Cholesky
    /// of `X'WX + λI`: the minimum is `y'Wy + λ‖prior‖² - ‖L⁻¹(X'Wy + λ prior)‖²`.
    fn side_objective(&self, acc: &[T], chol: &mut [T], z: &mut [T]) -> Option<T> {
        let p = self.moments.p;
        let mut k = 0;
        for i in 0..p {
            for j in i..p {
                chol[j * p + i] = acc[k];
                k += 1;
            }
            chol[i * p + i] += self.lambda;
        }
        let tol = T::of(1e-12).max(T::epsilon() * T::of(100.0));
        for j in 0..p {
            let orig = chol[j * p + j];
            let mut d = orig;
            for k in 0..j {
                d -= chol[j * p + k] * chol[j * p + k];
            }
            if !(d > tol * orig.abs()) || d <= T::zero() {
                return None;
            }
            let l = d.sqrt();
            chol[j * p + j] = l;
            for i in j + 1..p {
                let mut v = chol[i * p + j];
                for k in 0..j {
                    v -= chol[i * p + k] * chol[j * p + k];
                }
                chol[i * p + j] = v / l;
            }
        }
        let xy = &acc[p * (p + 1) / 2..p * (p + 1) / 2 + p];
        let mut norm = T::zero();
        for i in 0..p {
            let mut v = xy[i] + self.lambda * self.prior[i];
            for k in 0..i {
                v -= chol[i * p + k] * z[k];
            }
            z[i] = v / chol[i * p + i];
            norm += z[i] * z[i];
        }
        Some(acc[acc.len() - 1] + self.lambda * self.prior_sq - norm)
    }

    fn search(&self, members: &[usize], features: &[usize], sc: &mut Scratch<T>) -> Result<SplitChoice<T>, MrfError> {
        let m = members.len();
        let ml = self.min_leaf;
        if m < 2 * ml || ml == 0 {
            return Err(MrfError::NoValidSplit);
        }
        let width = self.moments.width;
        let mut candidates: Vec<SplitChoice<T>> = Vec::new();
        let mut order = members.to_vec();
        for &j in features {
            let sj = |r: usize| self.s[(r, j)];
            order.copy_from_slice(members);
            order.sort_by(|&a, &b| sj(a).partial_cmp(&sj(b)).expect("finite state").then(a.cmp(&b)));
            // Split position k puts order[..k] on the left.
            let valid: Vec<usize> = (ml..=m - ml).filter(|&k| sj(order[k - 1]) < sj(order[k])).collect();
            if valid.is_empty() {
                continue;
            }
            sc.snaps.clear();
            sc.w.iter_mut().for_each(|v| *v = T::zero());
            sc.acc.iter_mut().for_each(|v| *v = T::zero());
            let mut next = 0;
            for (i, &t) in order.iter().enumerate() {
                self.absorb(t, &mut sc.w, &mut sc.acc);
                if next < valid.len() && valid[next] == i + 1 {
                    sc.snaps.extend_from_slice(&sc.acc);
                    next += 1;
                }
            }
            sc.w.iter_mut().for_each(|v| *v = T::zero());
            sc.acc.iter_mut().for_each(|v| *v = T::zero());
            let mut right_obj: Vec<Option<T>> = vec![None; valid.len()];
            let mut next = valid.len();
            for i in (0..m).rev() {
                self.absorb(order[i], &mut sc.w, &mut sc.acc);
                if next > 0 && valid[next - 1] == i {
                    next -= 1;
                    right_obj[next] = self.side_objective(&sc.acc, &mut sc.chol, &mut sc.z);
                }
            }
            for (slot, &k) in valid.iter().enumerate() {
                let Some(right) = right_obj[slot] else { continue };
                let left_acc = &sc.snaps[slot * width..(slot + 1) * width];
                let Some(left) = self.side_objective(left_acc, &mut sc.chol, &mut sc.z) else { continue };
                let (lo, hi) = (sj(order[k - 1]), sj(order[k]));
                candidates.push(SplitChoice { feature: j, threshold: midpoint(lo, hi), objective: left + right });
            }
        }
        pick_best(&candidates, members.iter().map(|&r| self.y[r] * self.y[r]).sum())
            .ok_or(MrfError::NoValidSplit)
    }

    fn leaf(&self, members: Vec<usize>) -> TreeNode<T> {
        let set = expand_leaf_within(&members, &self.eligible, self.kernel[1]);
        let mut wm = WeightedMoments::new(self.x.ncols());
        for (r, w) in set {
            wm.add(self.x.row(r), self.y[r], w);
        }
        let beta = match wm.solve(self.lambda, self.prior) {
            Some((b, _)) => b,
            None => {
                log::debug!("singular leaf with {} members, using prior", members.len());
                self.prior.to_vec()
            }
        };
        TreeNode::Leaf { beta, members }
    }

    fn grow(&self, members: Vec<usize>, rng: &mut ChaCha8Rng, sc: &mut Scratch<T>) -> TreeNode<T> {
        let n_s = self.s.ncols();
        if members.len() >= 2 * self.min_leaf && n_s > 0 {
            let features = draw_features(rng, n_s, self.mtry);
            if let Ok(choice) = self.search(&members, &features, sc) {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    members.iter().partition(|&&r| self.s[(r, choice.feature)] <= choice.threshold);
                let left = self.grow(left, rng, sc);
                let right = self.grow(right, rng, sc);
                return TreeNode::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                };
            }
        }
        self.leaf(members)
    }
}

/// Threshold strictly separating `lo < hi` with `lo <= c < hi`.
fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let c = lo + (hi - lo) / (T::one() + T::one());
    if c >= hi {
        lo
    } else {
        c
    }
}

/// Smallest objective; candidates within rounding noise of it count as tied
/// and the earliest (lowest feature, then lowest threshold) wins.
fn pick_best<T: Scalar>(candidates: &[SplitChoice<T>], scale: T) -> Option<SplitChoice<T>> {
    let min = candidates.iter().map(|c| c.objective).fold(T::infinity(), T::min);
    if !min.is_finite() {
        return None;
    }
    let tol = tie_tolerance(scale.max(min.abs()));
    candidates.iter().copied().find(|c| c.objective <= min + tol)
}

/// Objective gap below which two splits are treated as tied.
pub fn tie_tolerance<T: Scalar>(scale: T) -> T {
    T::epsilon() * T::of(1e4) * scale.max(T::one())
}

/// Best split of `members` over the candidate state columns `features`,
/// with every dataset row available for podium expansion.
pub fn split_search<T: Scalar>(
    ds: &Dataset<T>,
    members: &[usize],
    features: &[usize],
    params: &MrfParams,
    beta_prior: &[T],
) -> Result<SplitChoice<T>, MrfError> {
    let min_leaf = params.validate(ds.n_x())?;
    let moments = RowMoments::new(&ds.x, &ds.y);
    let all: Vec<usize> = (0..ds.n_rows()).collect();
    let g = Grower::new(ds, &moments, &all, params, min_leaf, beta_prior);
    let mut sc = g.scratch();
    let mut feats = features.to_vec();
    feats.sort_unstable();
    feats.dedup();
    g.search(members, &feats, &mut sc)
}

/// Grows one tree on `in_bag` rows, drawing split candidates from `rng`.
pub fn grow_tree<T: Scalar>(
    ds: &Dataset<T>,
    in_bag: &[usize],
    params: &MrfParams,
    beta_prior: &[T],
    rng: &mut ChaCha8Rng,
) -> Result<TreeNode<T>, MrfError> {
    let min_leaf = params.validate(ds.n_x())?;
    let moments = RowMoments::new(&ds.x, &ds.y);
    let g = Grower::new(ds, &moments, in_bag, params, min_leaf, beta_prior);
    let mut sc = g.scratch();
    Ok(g.grow(in_bag.to_vec(), rng, &mut sc))
}

/// Fits a forest with the full-sample OLS coefficients as the ridge prior.
pub fn fit_forest<T: Scalar>(ds: &Dataset<T>, params: &MrfParams) -> Result<Forest<T>, MrfError> {
    let min_leaf = params.validate(ds.n_x())?;
    if ds.n_rows() < min_leaf {
        return Err(MrfError::TooFewRows { rows: ds.n_rows(), required: min_leaf });
    }
    let prior = ols_fit(&ds.x, &ds.y)?.coefficients;
    fit_forest_with_prior(ds, params, prior)
}

pub fn fit_forest_with_prior<T: Scalar>(
    ds: &Dataset<T>,
    params: &MrfParams,
    beta_prior: Vec<T>,
) -> Result<Forest<T>, MrfError> {
    let min_leaf = params.validate(ds.n_x())?;
    let n = ds.n_rows();
    if n < min_leaf || n == 0 {
        return Err(MrfError::TooFewRows { rows: n, required: min_leaf.max(1) });
    }
    if beta_prior.len() != ds.n_x() {
        return Err(MrfError::InvalidParams(format!("prior has {} entries for {} X columns", beta_prior.len(), ds.n_x())));
    }
    let moments = RowMoments::new(&ds.x, &ds.y);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let in_bag = draw_bag(&ds.years, params.row_subsample_rate, params.bag_block_len_years, &mut rng);
            let g = Grower::new(ds, &moments, &in_bag, params, min_leaf, &beta_prior);
            let mut sc = g.scratch();
            let root = g.grow(in_bag.clone(), &mut rng, &mut sc);
            Tree { in_bag, root }
        })
        .collect();
    Ok(Forest {
        format_version: FORMAT_VERSION,
        params: params.clone(),
        min_leaf_obs: min_leaf,
        n_rows: n,
        n_x: ds.n_x(),
        n_s: ds.n_s(),
        beta_prior,
        trees,
    })
}

impl<T: Scalar> Forest<T> {
    fn check(&self, x_len: usize, s_len: usize) -> Result<(), MrfError> {
        if x_len != self.n_x || s_len != self.n_s {
            return Err(MrfError::DimensionMismatch { n_x: self.n_x, n_s: self.n_s, got_x: x_len, got_s: s_len });
        }
        Ok(())
    }

    /// Equal-weight average over trees of `x · β_leaf(s)`.
    pub fn predict(&self, x_row: &[T], s_row: &[T]) -> Result<T, MrfError> {
        self.check(x_row.len(), s_row.len())?;
        let total: T = self.trees.iter().map(|t| dot(x_row, t.root.leaf_beta(s_row))).sum();
        Ok(total / T::of_usize(self.trees.len()))
    }

    /// Average leaf coefficients for a state row.
    pub fn beta(&self, s_row: &[T]) -> Result<Vec<T>, MrfError> {
        self.check(self.n_x, s_row.len())?;
        let mut acc = vec![T::zero(); self.n_x];
        for t in &self.trees {
            for (a, &b) in acc.iter_mut().zip(t.root.leaf_beta(s_row)) {
                *a += b;
            }
        }
        let k = T::of_usize(self.trees.len());
        Ok(acc.into_iter().map(|a| a / k).collect())
    }

    /// `β_t` for every row of `ds` (rows = years, columns = X).
    pub fn beta_paths(&self, ds: &Dataset<T>) -> Result<Matrix<T>, MrfError> {
        self.check(ds.n_x(), ds.n_s())?;
        let rows: Vec<Vec<T>> = (0..ds.n_rows()).map(|i| self.beta(ds.s.row(i))).collect::<Result<_, _>>()?;
        Ok(if rows.is_empty() { Matrix::zeros(0, self.n_x) } else { Matrix::from_rows(&rows) })
    }

    /// Out-of-bag predictions for the training rows, using only trees whose
    /// bag left each row out.
    pub fn oob(&self, ds: &Dataset<T>) -> Result<OobReport<T>, MrfError> {
        self.check(ds.n_x(), ds.n_s())?;
        if ds.n_rows() != self.n_rows {
            return Err(MrfError::InvalidParams(format!("forest trained on {} rows, got {}", self.n_rows, ds.n_rows())));
        }
        let predictions: Vec<Option<T>> = (0..ds.n_rows())
            .into_par_iter()
            .map(|i| {
                let (x, s) = (ds.x.row(i), ds.s.row(i));
                let mut sum = T::zero();
                let mut k = 0usize;
                for t in self.trees.iter().filter(|t| t.in_bag.binary_search(&i).is_err()) {
                    sum += dot(x, t.root.leaf_beta(s));
                    k += 1;
                }
                (k > 0).then(|| sum / T::of_usize(k))
            })
            .collect();
        let uncovered_rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| predictions[i].is_none()).collect();
        let errs: Vec<T> = predictions.iter().zip(&ds.y).filter_map(|(p, &y)| p.map(|p| y - p)).collect();
        if errs.is_empty() {
            return Err(MrfError::NoOobCoverage);
        }
        if !uncovered_rows.is_empty() {
            log::warn!("{} rows never out of bag, excluded from OOB error", uncovered_rows.len());
        }
        let mse = errs.iter().map(|&e| e * e).sum::<T>() / T::of_usize(errs.len());
        Ok(OobReport { rmsfe: mse.sqrt(), predictions, uncovered_rows })
    }

    pub fn oob_rmsfe(&self, ds: &Dataset<T>) -> Result<T, MrfError> {
        Ok(self.oob(ds)?.rmsfe)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MrfError> {
        let f: Self = serde_json::from_str(text).map_err(|e| MrfError::Format(e.to_string()))?;
        if f.format_version != FORMAT_VERSION {
            return Err(MrfError::Format(format!("unsupported format version {}", f.format_version)));
        }
        Ok(f)
    }
}

/// `β_t` paths as CSV: `year,<X names...>`.
pub fn beta_paths_csv<T: Scalar>(years: &[i32], x_names: &[String], paths: &Matrix<T>) -> String {
    let mut out = format!("year,{}\n", x_names.join(","));
    for (i, y) in years.iter().enumerate() {
        let vals: Vec<String> = paths.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{y},{}\n", vals.join(",")));
    }
    out
}
