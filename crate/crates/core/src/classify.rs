//! Binary probability models: logistic regression by iteratively reweighted
//! least squares, Newton-boosted regression trees, and a constant model.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// A fitted model returning `P(label = 1 | row)`.
pub trait ProbabilityModel: Send + Sync {
    fn predict(&self, row: &[f64]) -> f64;
}

/// A learner producing a [`ProbabilityModel`] from labelled rows.
pub trait ProbabilityClassifier: Send + Sync {
    fn name(&self) -> String;
    fn fit(&self, x: &Matrix, labels: &[bool]) -> Result<Box<dyn ProbabilityModel>>;
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Penalty switched on when the Newton system becomes singular.
    pub ridge: f64,
    /// Fitting stops once the coefficient norm exceeds this.
    pub norm_cap: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tolerance: 1e-8,
            max_iterations: 100,
            ridge: 1e-6,
            norm_cap: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Ridge penalty in force at the end (0 unless the fallback kicked in).
    pub ridge_used: f64,
    pub norm_capped: bool,
}

impl LogisticFit {
    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.alpha + dot(&self.beta, row))
    }

    /// Turns a capped, ridge-assisted or unconverged fit into an error; what
    /// passes is an unpenalized maximum likelihood estimate.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged && !self.norm_capped && self.ridge_used == 0.0 {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                gradient_norm: self.gradient_norm,
            })
        }
    }
}

const MAX_HALVINGS: usize = 30;

fn penalized_log_likelihood(design: &DMatrix<f64>, target: &DVector<f64>, w: &DVector<f64>, ridge: f64) -> f64 {
    let eta = design * w;
    let ll: f64 = eta
        .iter()
        .zip(target.iter())
        .map(|(&e, &y)| {
            // log(1 + exp(e)) without overflow
            let softplus = if e > 0.0 { e + libm::log1p(libm::exp(-e)) } else { libm::log1p(libm::exp(e)) };
            y * e - softplus
        })
        .sum();
    let penalty: f64 = w.iter().skip(1).map(|v| v * v).sum();
    ll - 0.5 * ridge * penalty
}

/// Maximum likelihood logistic regression with intercept.
///
/// Columns are standardized internally; coefficients are reported on the
/// original scale.
pub fn fit_logistic(x: &Matrix, y: &[bool], opts: &LogisticOptions) -> Result<LogisticFit> {
    let (n, d) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", y.len())));
    }
    if n <= d {
        return Err(Error::TooFewRows { needed: d + 1, have: n });
    }
    let means = x.column_means();
    let cov = x.column_covariance();
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let s = libm::sqrt(cov.get(j, j));
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let p = d + 1;
    let design = DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x.get(i, j - 1) - means[j - 1]) / scales[j - 1]
        }
    });
    let target = DVector::from_iterator(n, y.iter().map(|&b| f64::from(u8::from(b))));

    let mut w = DVector::zeros(p);
    let mut ridge = 0.0;
    let mut converged = false;
    let mut capped = false;
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let eta = &design * &w;
        let prob = eta.map(sigmoid);
        let mut grad = design.tr_mul(&(&target - &prob));
        let weights = prob.map(|q| q * (1.0 - q));
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let wi = weights[i];
            if wi == 0.0 {
                continue;
            }
            let row = design.row(i);
            for a in 0..p {
                let ra = wi * row[a];
                for b in a..p {
                    hess[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        for a in 1..p {
            hess[(a, a)] += ridge;
            grad[a] -= ridge * w[a];
        }
        gradient_norm = grad.norm();
        let step = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None if ridge == 0.0 => {
                ridge = opts.ridge * n as f64;
                continue;
            }
            None => return Err(Error::Singular("logistic Newton system".into())),
        };
        // halve the Newton step until the penalized likelihood does not drop;
        // full steps can overshoot badly on nearly separable data
        let current = penalized_log_likelihood(&design, &target, &w, ridge);
        let mut step = step;
        for _ in 0..MAX_HALVINGS {
            let trial = &w + &step;
            if penalized_log_likelihood(&design, &target, &trial, ridge) >= current - 1e-12 * (1.0 + libm::fabs(current)) {
                break;
            }
            step *= 0.5;
        }
        w += &step;
        let wmax = w.amax();
        if w.norm() > opts.norm_cap {
            capped = true;
            break;
        }
        if step.amax() < opts.tolerance * (1.0 + wmax) {
            converged = true;
            break;
        }
    }
    let beta: Vec<f64> = (0..d).map(|j| w[j + 1] / scales[j]).collect();
    let alpha = w[0] - dot(&beta, &means);
    Ok(LogisticFit {
        alpha,
        beta,
        iterations,
        gradient_norm,
        converged,
        ridge_used: ridge,
        norm_capped: capped,
    })
}

/// Logistic regression as a [`ProbabilityClassifier`]. Capped fits are used
/// as they are; unconverged fits are an error.
#[derive(Debug, Clone, Default)]
pub struct LogisticClassifier {
    pub options: LogisticOptions,
}

impl ProbabilityModel for LogisticFit {
    fn predict(&self, row: &[f64]) -> f64 {
        self.probability(row)
    }
}

impl ProbabilityClassifier for LogisticClassifier {
    fn name(&self) -> String {
        "logistic".into()
    }

    fn fit(&self, x: &Matrix, labels: &[bool]) -> Result<Box<dyn ProbabilityModel>> {
        let fit = fit_logistic(x, labels, &self.options)?;
        if !fit.converged && !fit.norm_capped {
            return Err(Error::Classifier(format!(
                "logistic fit did not converge in {} iterations (gradient norm {:e})",
                fit.iterations, fit.gradient_norm
            )));
        }
        Ok(Box::new(fit))
    }
}

/// Always predicts the same probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub f64);

struct Constant(f64);

impl ProbabilityModel for Constant {
    fn predict(&self, _row: &[f64]) -> f64 {
        self.0
    }
}

impl ProbabilityClassifier for ConstantClassifier {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn fit(&self, _x: &Matrix, _labels: &[bool]) -> Result<Box<dyn ProbabilityModel>> {
        Ok(Box::new(Constant(self.0)))
    }
}

/// Gradient boosting of depth-limited regression trees on the logistic loss
/// with second-order (Newton) leaf values and exact greedy splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostedTreesClassifier {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian mass per child.
    pub min_child_weight: f64,
}

impl Default for BoostedTreesClassifier {
    fn default() -> Self {
        BoostedTreesClassifier {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn value(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] < threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    base_margin: f64,
    trees: Vec<Tree>,
}

impl BoostedTrees {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.value(row)).sum::<f64>()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl ProbabilityModel for BoostedTrees {
    fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }
}

#[derive(Clone, Copy, Default)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl BoostedTreesClassifier {
    pub fn train(&self, x: &Matrix, labels: &[bool]) -> Result<BoostedTrees> {
        let (n, d) = (x.rows(), x.cols());
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} rows but {} labels", labels.len())));
        }
        if n == 0 {
            return Err(Error::TooFewRows { needed: 1, have: 0 });
        }
        let y: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
        let order: Vec<Vec<usize>> = (0..d)
            .map(|j| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
                idx
            })
            .collect();
        let mut margin = vec![0.0; n];
        let mut trees = Vec::with_capacity(self.n_trees);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..self.n_trees {
            for i in 0..n {
                let p = sigmoid(margin[i]);
                grad[i] = p - y[i];
                hess[i] = p * (1.0 - p);
            }
            let tree = self.grow(x, &order, &grad, &hess);
            for (i, m) in margin.iter_mut().enumerate() {
                *m += tree.value(x.row(i));
            }
            trees.push(tree);
        }
        Ok(BoostedTrees {
            base_margin: 0.0,
            trees,
        })
    }

    fn leaf(&self, g: f64, h: f64) -> Node {
        Node::Leaf(-self.learning_rate * g / (h + self.lambda))
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    /// Grows one tree level by level; every open node of a level is split
    /// from a single pass over each presorted feature.
    fn grow(&self, x: &Matrix, order: &[Vec<usize>], grad: &[f64], hess: &[f64]) -> Tree {
        let n = grad.len();
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut assign: Vec<usize> = vec![0; n];
        let mut open: Vec<usize> = vec![0];
        for depth in 0..=self.max_depth {
            if open.is_empty() {
                break;
            }
            // slot of each open node, usize::MAX for settled rows
            let mut slot_of = vec![usize::MAX; nodes.len()];
            for (s, &k) in open.iter().enumerate() {
                slot_of[k] = s;
            }
            let mut totals = vec![(0.0, 0.0); open.len()];
            for i in 0..n {
                let s = slot_of[assign[i]];
                if s != usize::MAX {
                    totals[s].0 += grad[i];
                    totals[s].1 += hess[i];
                }
            }
            let mut best = vec![Best::default(); open.len()];
            if depth < self.max_depth {
                for (j, idx) in order.iter().enumerate() {
                    let mut run = vec![(0.0, 0.0, f64::NAN); open.len()];
                    for &i in idx {
                        let s = slot_of[assign[i]];
                        if s == usize::MAX {
                            continue;
                        }
                        let v = x.get(i, j);
                        let (gl, hl, last) = run[s];
                        if !last.is_nan() && v > last {
                            let (g, h) = totals[s];
                            let (gr, hr) = (g - gl, h - hl);
                            if hl >= self.min_child_weight && hr >= self.min_child_weight {
                                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - self.score(g, h));
                                if gain > best[s].gain {
                                    best[s] = Best {
                                        gain,
                                        feature: j,
                                        threshold: 0.5 * (last + v),
                                    };
                                }
                            }
                        }
                        run[s] = (gl + grad[i], hl + hess[i], v);
                    }
                }
            }
            let mut next = Vec::new();
            for (s, &k) in open.iter().enumerate() {
                let (g, h) = totals[s];
                if best[s].gain > 0.0 {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[k] = Node::Split {
                        feature: best[s].feature,
                        threshold: best[s].threshold,
                        left,
                        right: left + 1,
                    };
                    next.push(left);
                    next.push(left + 1);
                } else {
                    nodes[k] = self.leaf(g, h);
                }
            }
            for i in 0..n {
                if let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = nodes[assign[i]]
                {
                    assign[i] = if x.get(i, feature) < threshold { left } else { right };
                }
            }
            open = next;
        }
        Tree { nodes }
    }
}

impl ProbabilityClassifier for BoostedTreesClassifier {
    fn name(&self) -> String {
        format!(
            "boosted_trees(n={},depth={},lr={})",
            self.n_trees, self.max_depth, self.learning_rate
        )
    }

    fn fit(&self, x: &Matrix, labels: &[bool]) -> Result<Box<dyn ProbabilityModel>> {
        Ok(Box::new(self.train(x, labels)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, standard_normal, uniform};

    fn logistic_sample(n: usize, seed: u64, coef: [f64; 3]) -> (Matrix, Vec<bool>) {
        let mut rng = seeded_rng(seed);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a = standard_normal(&mut rng);
            let b = 2.0 * standard_normal(&mut rng) + 1.0;
            rows.push([a, b]);
            y.push(uniform(&mut rng) < sigmoid(coef[0] + coef[1] * a + coef[2] * b));
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn logistic_recovers_generator() {
        let (x, y) = logistic_sample(100_000, 5, [-0.5, 1.0, -0.75]);
        let fit = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap().require_converged().unwrap();
        assert!((fit.alpha + 0.5).abs() < 0.05, "{fit:?}");
        assert!((fit.beta[0] - 1.0).abs() < 0.05);
        assert!((fit.beta[1] + 0.75).abs() < 0.05);
        assert_eq!(fit.ridge_used, 0.0);
    }

    #[test]
    fn separable_labels_do_not_converge() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let y = [false, false, false, true, true, true];
        let fit = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        assert!(!fit.converged || fit.norm_capped || fit.ridge_used > 0.0, "{fit:?}");
        assert!(matches!(fit.require_converged(), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn trees_learn_a_step() {
        let rows: Vec<[f64; 2]> = (0..400).map(|i| [(i % 20) as f64, (i / 20) as f64]).collect();
        let y: Vec<bool> = rows.iter().map(|r| r[0] >= 10.0).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let model = BoostedTreesClassifier::default().train(&x, &y).unwrap();
        assert_eq!(model.n_trees(), 100);
        assert!(model.predict(&[15.0, 3.0]) > 0.95);
        assert!(model.predict(&[2.0, 3.0]) < 0.05);
        // the split lies halfway between observed values
        assert!(model.predict(&[9.4, 0.0]) < 0.5 && model.predict(&[9.6, 0.0]) > 0.5);
    }

    #[test]
    fn trees_track_smooth_probabilities() {
        let (x, y) = logistic_sample(20_000, 8, [0.0, 1.5, 0.0]);
        let model = BoostedTreesClassifier::default().train(&x, &y).unwrap();
        for a in [-1.0, 0.0, 1.0] {
            let p = model.predict(&[a, 1.0]);
            assert!((p - sigmoid(1.5 * a)).abs() < 0.08, "a={a} p={p}");
        }
    }

    #[test]
    fn constant_classifier_ignores_input() {
        let m = ConstantClassifier(0.37).fit(&Matrix::zeros(3, 1), &[true, false, true]).unwrap();
        assert_eq!(m.predict(&[5.0]), 0.37);
    }
}
