//! Base learners used by every uplift method: an L2-regularized linear model
//! fit by batch gradient descent, and gradient-boosted regression trees.
//!
//! Both kinds come in a classifier flavour (logistic loss, outputs clamped to
//! `[EPS, 1 - EPS]`) and a regressor flavour (squared loss). Fitting is
//! single-threaded and deterministic; prediction over many rows can run in
//! parallel through [`Execution`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{record_rng, TAG_LEARNER};
use crate::types::FeatureMatrix;

/// Probability clamp keeping odds `p / (1 - p)` finite.
pub const EPS: f64 = 1e-6;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// Linear predictor; logistic link for classification, identity for regression.
    Logistic,
    BoostedTrees,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// L2 penalty on standardized linear weights.
    pub l2: f64,
    /// Gradient-descent iterations for the linear kind.
    pub iterations: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum total sample weight in a tree leaf.
    pub min_leaf: f64,
    /// Row fraction drawn per boosting round; 1.0 uses every row.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::boosted_trees()
    }
}

impl LearnerConfig {
    pub fn logistic() -> Self {
        Self {
            kind: LearnerKind::Logistic,
            l2: 1e-4,
            iterations: 1000,
            rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 20.0,
            subsample: 1.0,
            seed: 0,
        }
    }

    pub fn boosted_trees() -> Self {
        Self { kind: LearnerKind::BoostedTrees, ..Self::logistic() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.rounds < 1 {
            return fail("rounds must be >= 1");
        }
        if self.max_depth < 1 {
            return fail("max_depth must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return fail("learning_rate must lie in (0, 1]");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail("l2 must be finite and >= 0");
        }
        if self.iterations < 1 {
            return fail("iterations must be >= 1");
        }
        if !(self.min_leaf >= 0.0) {
            return fail("min_leaf must be >= 0");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return fail("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Weighted training rows.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl TrainingData {
    pub fn new(x: FeatureMatrix, y: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if y.len() != x.rows() || w.len() != x.rows() {
            return Err(Error::Config(format!(
                "training data has {} rows, {} targets and {} weights",
                x.rows(),
                y.len(),
                w.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("targets must be finite".into()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("weights must be finite and >= 0".into()));
        }
        Ok(Self { x, y, w })
    }

    pub fn unweighted(x: FeatureMatrix, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }

    fn weighted_mean_target(&self) -> f64 {
        self.y.iter().zip(&self.w).map(|(y, w)| y * w).sum::<f64>() / self.total_weight()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classifier,
    Regressor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Loss {
    Logistic,
    Squared,
}

impl Task {
    fn loss(self) -> Loss {
        match self {
            Task::Classifier => Loss::Logistic,
            Task::Regressor => Loss::Squared,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Regression tree; rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Params {
    /// Fixed output: a probability for classifiers, a value for regressors.
    Constant { value: f64 },
    Linear { weights: Vec<f64>, bias: f64 },
    Trees { base: f64, trees: Vec<Tree> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub version: u32,
    pub task: Task,
    pub config: LearnerConfig,
    pub feature_dim: usize,
    /// Set when the training labels had a single class and the model fell
    /// back to the base rate.
    pub constant: bool,
    pub params: Params,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn point_loss(loss: Loss, y: f64, f: f64) -> f64 {
    match loss {
        Loss::Logistic => softplus(f) - y * f,
        Loss::Squared => 0.5 * (y - f) * (y - f),
    }
}

impl FittedModel {
    /// Raw model output: log-odds for classifiers, prediction for regressors.
    fn margin(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Constant { value } => match self.task {
                Task::Classifier => logit(*value),
                Task::Regressor => *value,
            },
            Params::Linear { weights, bias } => bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
            Params::Trees { base, trees } => base + trees.iter().map(|t| t.predict(x)).sum::<f64>(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::Shape { expected: self.feature_dim, got: x.len() });
        }
        Ok(())
    }

    /// Classifier probability, clamped to `[EPS, 1 - EPS]`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.proba_unchecked(x))
    }

    fn proba_unchecked(&self, x: &[f64]) -> f64 {
        let p = match (&self.params, self.task) {
            (Params::Constant { value }, Task::Classifier) => *value,
            _ => sigmoid(self.margin(x)),
        };
        p.clamp(EPS, 1.0 - EPS)
    }

    /// Regressor prediction.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.value_unchecked(x))
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        match self.task {
            Task::Classifier => self.proba_unchecked(x),
            Task::Regressor => self.margin(x),
        }
    }

    /// Predict every row: probabilities for classifiers, values for regressors.
    pub fn predict_batch(&self, x: &FeatureMatrix, exec: Execution) -> Result<Vec<f64>> {
        if x.dim() != self.feature_dim && x.rows() > 0 {
            return Err(Error::Shape { expected: self.feature_dim, got: x.dim() });
        }
        Ok(exec.map(x.rows(), |i| self.value_unchecked(x.row(i))))
    }

    /// Weighted mean training loss (without the L2 term).
    pub fn training_loss(&self, data: &TrainingData) -> f64 {
        let loss = self.task.loss();
        let mut total = 0.0;
        for i in 0..data.len() {
            let f = match (&self.params, self.task) {
                (Params::Constant { value }, Task::Classifier) => logit(value.clamp(EPS, 1.0 - EPS)),
                _ => self.margin(data.x.row(i)),
            };
            total += data.w[i] * point_loss(loss, data.y[i], f);
        }
        total / data.total_weight()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse a model document, rejecting versions this build does not know.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Schema("model document has no version".into()))?;
        if found != MODEL_VERSION as u64 {
            return Err(Error::UnknownVersion { found: found as u32, expected: MODEL_VERSION });
        }
        serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Fit a binary classifier. Labels must be 0 or 1.
///
/// Single-class input is not an error: the result predicts the clamped base
/// rate everywhere and has `constant` set.
pub fn fit_classifier(data: &TrainingData, config: &LearnerConfig) -> Result<FittedModel> {
    config.validate()?;
    if data.is_empty() || data.total_weight() <= 0.0 {
        return Err(Error::InsufficientData("classifier needs at least one weighted row".into()));
    }
    if data.y.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Config("classifier labels must be 0 or 1".into()));
    }
    let rate = data.weighted_mean_target();
    let has_pos = data.y.iter().zip(&data.w).any(|(&y, &w)| y == 1.0 && w > 0.0);
    let has_neg = data.y.iter().zip(&data.w).any(|(&y, &w)| y == 0.0 && w > 0.0);
    if !(has_pos && has_neg) {
        return Ok(FittedModel {
            version: MODEL_VERSION,
            task: Task::Classifier,
            config: *config,
            feature_dim: data.x.dim(),
            constant: true,
            params: Params::Constant { value: rate.clamp(EPS, 1.0 - EPS) },
        });
    }
    fit(data, config, Task::Classifier)
}

/// Fit a squared-loss regressor.
pub fn fit_regressor(data: &TrainingData, config: &LearnerConfig) -> Result<FittedModel> {
    config.validate()?;
    if data.len() < 2 || data.total_weight() <= 0.0 {
        return Err(Error::InsufficientData("regressor needs at least two weighted rows".into()));
    }
    fit(data, config, Task::Regressor)
}

fn fit(data: &TrainingData, config: &LearnerConfig, task: Task) -> Result<FittedModel> {
    let params = match config.kind {
        LearnerKind::Logistic => fit_linear(data, config, task),
        LearnerKind::BoostedTrees => fit_trees(data, config, task),
    };
    Ok(FittedModel { version: MODEL_VERSION, task, config: *config, feature_dim: data.x.dim(), constant: false, params })
}

/// Penalized mean loss of a linear model on standardized features.
///
/// Parameters are `[w_0, .., w_{d-1}, bias]` in standardized units. Exposed so
/// the analytic gradient can be checked against finite differences.
pub struct LinearObjective<'a> {
    data: &'a TrainingData,
    loss: Loss,
    l2: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
    total_weight: f64,
}

impl<'a> LinearObjective<'a> {
    pub fn logistic(data: &'a TrainingData, l2: f64) -> Self {
        Self::new(data, Loss::Logistic, l2)
    }

    pub fn squared(data: &'a TrainingData, l2: f64) -> Self {
        Self::new(data, Loss::Squared, l2)
    }

    fn new(data: &'a TrainingData, loss: Loss, l2: f64) -> Self {
        let d = data.x.dim();
        let total_weight = data.total_weight();
        let mut means = vec![0.0; d];
        for i in 0..data.len() {
            for (j, m) in means.iter_mut().enumerate() {
                *m += data.w[i] * data.x.get(i, j);
            }
        }
        means.iter_mut().for_each(|m| *m /= total_weight);
        let mut scales = vec![0.0; d];
        for i in 0..data.len() {
            for (j, s) in scales.iter_mut().enumerate() {
                let c = data.x.get(i, j) - means[j];
                *s += data.w[i] * c * c;
            }
        }
        for s in scales.iter_mut() {
            *s = (*s / total_weight).sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Self { data, loss, l2, means, scales, total_weight }
    }

    pub fn dim(&self) -> usize {
        self.means.len() + 1
    }

    fn margin(&self, params: &[f64], i: usize) -> f64 {
        let d = self.means.len();
        let row = self.data.x.row(i);
        let mut z = params[d];
        for j in 0..d {
            z += params[j] * (row[j] - self.means[j]) / self.scales[j];
        }
        z
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let d = self.means.len();
        let mut total = 0.0;
        for i in 0..self.data.len() {
            total += self.data.w[i] * point_loss(self.loss, self.data.y[i], self.margin(params, i));
        }
        total / self.total_weight + 0.5 * self.l2 * params[..d].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.means.len();
        let mut g = vec![0.0; d + 1];
        for i in 0..self.data.len() {
            let z = self.margin(params, i);
            let resid = match self.loss {
                Loss::Logistic => sigmoid(z) - self.data.y[i],
                Loss::Squared => z - self.data.y[i],
            };
            let wr = self.data.w[i] * resid;
            let row = self.data.x.row(i);
            for j in 0..d {
                g[j] += wr * (row[j] - self.means[j]) / self.scales[j];
            }
            g[d] += wr;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= self.total_weight;
            if j < d {
                *gj += self.l2 * params[j];
            }
        }
        g
    }

    /// Upper bound on the gradient's Lipschitz constant. Standardized columns
    /// are centered, so the bias block decouples and every column has unit
    /// weighted variance.
    fn lipschitz(&self) -> f64 {
        let curvature = match self.loss {
            Loss::Logistic => 0.25,
            Loss::Squared => 1.0,
        };
        curvature * (self.means.len().max(1) as f64) + self.l2
    }

    /// Map standardized parameters to raw-feature weights and bias.
    fn unstandardize(&self, params: &[f64]) -> (Vec<f64>, f64) {
        let d = self.means.len();
        let weights: Vec<f64> = (0..d).map(|j| params[j] / self.scales[j]).collect();
        let bias = params[d] - (0..d).map(|j| weights[j] * self.means[j]).sum::<f64>();
        (weights, bias)
    }
}

fn fit_linear(data: &TrainingData, config: &LearnerConfig, task: Task) -> Params {
    let obj = LinearObjective::new(data, task.loss(), config.l2);
    let d = data.x.dim();
    let mut params = vec![0.0; d + 1];
    let mean = data.weighted_mean_target();
    params[d] = match task {
        Task::Classifier => logit(mean.clamp(EPS, 1.0 - EPS)),
        Task::Regressor => mean,
    };
    let step = 1.0 / obj.lipschitz();
    for _ in 0..config.iterations {
        let g = obj.gradient(&params);
        if g.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        for (p, gj) in params.iter_mut().zip(&g) {
            *p -= step * gj;
        }
    }
    let (weights, bias) = obj.unstandardize(&params);
    Params::Linear { weights, bias }
}

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node accumulator for the level-wise exact greedy scan.
#[derive(Clone, Copy, Default)]
struct Scan {
    sum: f64,
    weight: f64,
    last: f64,
    started: bool,
}

fn fit_trees(data: &TrainingData, config: &LearnerConfig, task: Task) -> Params {
    let n = data.len();
    let d = data.x.dim();
    let loss = task.loss();
    let mean = data.weighted_mean_target();
    let base = match task {
        Task::Classifier => logit(mean.clamp(EPS, 1.0 - EPS)),
        Task::Regressor => mean,
    };
    // Row order per feature, ascending by value then row index.
    let order: Vec<Vec<u32>> = (0..d)
        .map(|j| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| data.x.get(a as usize, j).total_cmp(&data.x.get(b as usize, j)).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut margin = vec![base; n];
    let mut trees = Vec::with_capacity(config.rounds);
    let mut resid = vec![0.0; n];
    let mut weight = vec![0.0; n];
    for round in 0..config.rounds {
        for i in 0..n {
            resid[i] = match loss {
                Loss::Logistic => data.y[i] - sigmoid(margin[i]),
                Loss::Squared => data.y[i] - margin[i],
            };
            weight[i] = data.w[i];
        }
        if config.subsample < 1.0 {
            let mut rng = record_rng(config.seed, TAG_LEARNER, round as u64, 0);
            for w in weight.iter_mut() {
                if rng.random::<f64>() >= config.subsample {
                    *w = 0.0;
                }
            }
        }
        let (tree, node_of) = grow_tree(data, &order, &resid, &weight, config);
        let tree = fit_leaves(tree, &node_of, data, &margin, &weight, loss, config.learning_rate);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict(data.x.row(i));
        }
        trees.push(tree);
    }
    Params::Trees { base, trees }
}

/// Grow the tree structure on residuals; leaf values are filled in later.
/// Returns the tree and the leaf each row landed in.
fn grow_tree(
    data: &TrainingData,
    order: &[Vec<u32>],
    resid: &[f64],
    weight: &[f64],
    config: &LearnerConfig,
) -> (Tree, Vec<u32>) {
    let n = data.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut node_of: Vec<u32> = (0..n).map(|i| if weight[i] > 0.0 { 0 } else { NO_NODE }).collect();
    let mut open: Vec<usize> = vec![0];
    for _depth in 0..config.max_depth {
        if open.is_empty() {
            break;
        }
        // slot[node] -> index into this level's accumulators
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &k) in open.iter().enumerate() {
            slot[k] = s;
        }
        let mut totals = vec![(0.0f64, 0.0f64); open.len()];
        for i in 0..n {
            let k = node_of[i];
            if k != NO_NODE && slot[k as usize] != usize::MAX {
                let t = &mut totals[slot[k as usize]];
                t.0 += weight[i] * resid[i];
                t.1 += weight[i];
            }
        }
        let mut best: Vec<Option<SplitCandidate>> = vec![None; open.len()];
        for (j, ord) in order.iter().enumerate() {
            let mut scans = vec![Scan::default(); open.len()];
            for &row in ord {
                let i = row as usize;
                let k = node_of[i];
                if k == NO_NODE {
                    continue;
                }
                let s = slot[k as usize];
                if s == usize::MAX {
                    continue;
                }
                let v = data.x.get(i, j);
                let sc = &mut scans[s];
                if sc.started && v > sc.last {
                    let (tot_sum, tot_w) = totals[s];
                    let (wl, wr) = (sc.weight, tot_w - sc.weight);
                    if wl >= config.min_leaf.max(1e-12) && wr >= config.min_leaf.max(1e-12) {
                        let sr = tot_sum - sc.sum;
                        let gain = sc.sum * sc.sum / wl + sr * sr / wr - tot_sum * tot_sum / tot_w;
                        if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(SplitCandidate { gain, feature: j, threshold: sc.last });
                        }
                    }
                }
                sc.sum += weight[i] * resid[i];
                sc.weight += weight[i];
                sc.last = v;
                sc.started = true;
            }
        }
        let mut next_open = Vec::new();
        for (s, &k) in open.iter().enumerate() {
            if let Some(b) = best[s] {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[k] = Node::Split { feature: b.feature, threshold: b.threshold, left, right: left + 1 };
                next_open.push(left);
                next_open.push(left + 1);
            }
        }
        for i in 0..n {
            let k = node_of[i];
            if k == NO_NODE {
                continue;
            }
            if let Node::Split { feature, threshold, left, right } = nodes[k as usize] {
                node_of[i] = if data.x.get(i, feature) <= threshold { left as u32 } else { right as u32 };
            }
        }
        open = next_open;
    }
    (Tree { nodes }, node_of)
}

/// Fill leaf values: the shrunken mean residual for squared loss, a shrunken
/// Newton step for logistic loss, halved until the leaf's loss does not rise.
fn fit_leaves(
    mut tree: Tree,
    node_of: &[u32],
    data: &TrainingData,
    margin: &[f64],
    weight: &[f64],
    loss: Loss,
    learning_rate: f64,
) -> Tree {
    let m = tree.nodes.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &k) in node_of.iter().enumerate() {
        if k != NO_NODE {
            members[k as usize].push(i);
        }
    }
    for (k, rows) in members.iter().enumerate() {
        if !matches!(tree.nodes[k], Node::Leaf { .. }) {
            continue;
        }
        let value = if rows.is_empty() {
            0.0
        } else {
            match loss {
                Loss::Squared => {
                    let (s, w) = rows
                        .iter()
                        .fold((0.0, 0.0), |(s, w), &i| (s + weight[i] * (data.y[i] - margin[i]), w + weight[i]));
                    learning_rate * s / w
                }
                Loss::Logistic => {
                    let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &i| {
                        let p = sigmoid(margin[i]);
                        (g + weight[i] * (data.y[i] - p), h + weight[i] * p * (1.0 - p))
                    });
                    let leaf_loss = |step: f64| -> f64 {
                        rows.iter().map(|&i| weight[i] * point_loss(loss, data.y[i], margin[i] + step)).sum()
                    };
                    let mut step = learning_rate * g / h.max(1e-12);
                    let start = leaf_loss(0.0);
                    let mut tries = 0;
                    while leaf_loss(step) > start && tries < 50 {
                        step *= 0.5;
                        tries += 1;
                    }
                    if leaf_loss(step) > start {
                        0.0
                    } else {
                        step
                    }
                }
            }
        };
        tree.nodes[k] = Node::Leaf { value };
    }
    tree
}
