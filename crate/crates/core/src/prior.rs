//! Unseen-class prior estimation: clustering-based (CPE), confusion-matrix
//! inversion (BBSE) and the uniform baseline.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierSettings, SoftmaxClassifier};
use crate::dataspace::ClassPrior;
use crate::error::{Error, Result};
use crate::synth::{synthesize_labeled_set, FeatureSampler};

/// Condition number above which the confusion matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e8;
const RIDGE: f64 = 1e-6;
const REFINEMENT_STEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansSettings {
    fn default() -> Self {
        KMeansSettings {
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub inertia: f64,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center per point (lowest index wins ties) and the total squared
/// distance.
fn assign(points: ArrayView2<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    points
        .rows()
        .into_iter()
        .map(|p| {
            centers
                .rows()
                .into_iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(p, c)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        })
        .unzip()
}

/// Lloyd's algorithm from the given initial centers.
///
/// An empty cluster is reseeded at the point farthest from its nearest
/// center, so exactly `k` clusters survive.
pub fn kmeans(
    points: ArrayView2<f64>,
    init_centers: ArrayView2<f64>,
    settings: &KMeansSettings,
) -> Result<KMeansResult> {
    if points.nrows() == 0 {
        return Err(Error::invalid("kmeans needs at least one point"));
    }
    let k = init_centers.nrows();
    if k == 0 || init_centers.ncols() != points.ncols() {
        return Err(Error::shape(format!(
            "init centers {:?} incompatible with points of width {}",
            init_centers.dim(),
            points.ncols()
        )));
    }
    if k > points.nrows() {
        return Err(Error::invalid(format!("k = {k} exceeds {} points", points.nrows())));
    }
    let mut centers = init_centers.to_owned();
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < settings.max_iters {
        iterations += 1;
        let (labels, dists) = assign(points, &centers);
        trace.push(dists.iter().sum());
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (p, &j) in points.rows().into_iter().zip(&labels) {
            sums.row_mut(j).scaled_add(1.0, &p);
            counts[j] += 1;
        }
        let mut next = centers.clone();
        let mut taken = vec![false; points.nrows()];
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                next.row_mut(j).assign(&(&sums.row(j) / count as f64));
            } else {
                let far = dists
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
                    .0;
                taken[far] = true;
                next.row_mut(j).assign(&points.row(far));
            }
        }
        let shift = centers
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift < settings.tol {
            break;
        }
    }
    let (assignments, dists) = assign(points, &centers);
    let inertia = dists.iter().sum();
    trace.push(inertia);
    Ok(KMeansResult {
        centers,
        assignments,
        iterations,
        inertia,
        inertia_trace: trace,
    })
}

/// `C[pred, true] = P(predict pred | true)`; columns sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix(Array2<f64>);

impl ConfusionMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::shape("confusion matrix must be square and non-empty"));
        }
        if m.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::invalid("confusion entries must lie in [0, 1]"));
        }
        for (j, col) in m.axis_iter(Axis(1)).enumerate() {
            if (col.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("column {j} sums to {}", col.sum())));
            }
        }
        Ok(ConfusionMatrix(m))
    }

    pub fn from_predictions(pred: &[usize], truth: &[usize], n: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape("prediction and label counts differ"));
        }
        let mut m = Array2::zeros((n, n));
        let mut per_class = vec![0usize; n];
        for (&p, &t) in pred.iter().zip(truth) {
            m[[p, t]] += 1.0;
            per_class[t] += 1;
        }
        for (t, &c) in per_class.iter().enumerate() {
            if c == 0 {
                return Err(Error::invalid(format!("class {t} has no examples")));
            }
            m.column_mut(t).mapv_inplace(|x| x / c as f64);
        }
        ConfusionMatrix::new(m)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn condition_number(&self) -> f64 {
        let n = self.0.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| self.0[[i, j]]);
        let sv = m.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }
}

/// Solves `C p = p_hat` by ridge-regularized least squares with iterative
/// refinement, clips negatives and renormalizes.
pub fn bbse_solve(c: &ConfusionMatrix, p_hat: &[f64]) -> Result<ClassPrior> {
    let n = c.0.nrows();
    if p_hat.len() != n {
        return Err(Error::shape(format!("{} predicted masses for {n} classes", p_hat.len())));
    }
    let condition = c.condition_number();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularConfusion { condition });
    }
    let cm = DMatrix::from_fn(n, n, |i, j| c.0[[i, j]]);
    let ctc = cm.transpose() * &cm + DMatrix::identity(n, n) * RIDGE;
    let rhs = cm.transpose() * DVector::from_column_slice(p_hat);
    let chol = ctc.cholesky().ok_or(Error::SingularConfusion { condition })?;
    let normal = cm.transpose() * &cm;
    let mut p = chol.solve(&rhs);
    // Iterated refinement removes the ridge bias on well-conditioned systems.
    for _ in 0..REFINEMENT_STEPS {
        let residual = &rhs - &normal * &p;
        p += chol.solve(&residual);
    }
    let clipped: Vec<f64> = p.iter().map(|&x| x.max(0.0)).collect();
    ClassPrior::from_weights(&clipped)
}

/// Classifier and clustering settings shared by both estimators.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSettings {
    pub classifier: ClassifierSettings,
    pub kmeans: KMeansSettings,
}

/// Outcome of one CPE run with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CpeOutcome {
    pub prior: ClassPrior,
    /// Pseudo-classes with no members, whose centers fell back to the
    /// synthesized class mean.
    pub fallback_classes: Vec<usize>,
    pub kmeans_iterations: usize,
}

/// Cluster-based prior estimate from synthesized and real unseen features.
pub fn cpe_estimate(
    sampler: &dyn FeatureSampler,
    unseen_features: ArrayView2<f64>,
    synth_per_class: usize,
    settings: &PriorSettings,
    seed: u64,
) -> Result<ClassPrior> {
    Ok(cpe_estimate_detailed(sampler, unseen_features, synth_per_class, settings, seed)?.prior)
}

pub fn cpe_estimate_detailed(
    sampler: &dyn FeatureSampler,
    unseen_features: ArrayView2<f64>,
    synth_per_class: usize,
    settings: &PriorSettings,
    seed: u64,
) -> Result<CpeOutcome> {
    let n_u = sampler.num_classes();
    if synth_per_class == 0 {
        return Err(Error::invalid("synth_per_class must be positive"));
    }
    let (x, y) = synthesize_labeled_set(sampler, &vec![synth_per_class; n_u], seed)?;
    let (f, _) = SoftmaxClassifier::train(x.view(), &y, n_u, &settings.classifier, seed ^ 1)?;
    let pseudo = f.predict(unseen_features)?;

    let mut centers = Array2::zeros((n_u, unseen_features.ncols()));
    let mut counts = vec![0usize; n_u];
    for (v, &c) in unseen_features.rows().into_iter().zip(&pseudo) {
        centers.row_mut(c).scaled_add(1.0, &v);
        counts[c] += 1;
    }
    let mut fallback_classes = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            centers.row_mut(c).mapv_inplace(|s| s / count as f64);
        } else {
            let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
            let mean = x.select(Axis(0), &rows).mean_axis(Axis(0)).expect("non-empty");
            centers.row_mut(c).assign(&mean);
            fallback_classes.push(c);
        }
    }
    let km = kmeans(unseen_features, centers.view(), &settings.kmeans)?;
    let mut sizes = vec![0.0; n_u];
    km.assignments.iter().for_each(|&j| sizes[j] += 1.0);
    Ok(CpeOutcome {
        prior: ClassPrior::from_weights(&sizes)?,
        fallback_classes,
        kmeans_iterations: km.iterations,
    })
}

/// Black-box shift estimate: a classifier trained on one synthesized set,
/// its confusion matrix measured on a second, inverted against its
/// prediction distribution on the real unseen features.
pub fn bbse_estimate(
    sampler: &dyn FeatureSampler,
    unseen_features: ArrayView2<f64>,
    synth_per_class: usize,
    settings: &PriorSettings,
    seed: u64,
) -> Result<ClassPrior> {
    let n_u = sampler.num_classes();
    if synth_per_class == 0 {
        return Err(Error::invalid("synth_per_class must be positive"));
    }
    let counts = vec![synth_per_class; n_u];
    let (x1, y1) = synthesize_labeled_set(sampler, &counts, seed)?;
    let (x2, y2) = synthesize_labeled_set(sampler, &counts, seed.wrapping_add(0x0B85_E000))?;
    let (f, _) = SoftmaxClassifier::train(x1.view(), &y1, n_u, &settings.classifier, seed ^ 1)?;
    let c = ConfusionMatrix::from_predictions(&f.predict(x2.view())?, &y2, n_u)?;
    let pred = f.predict(unseen_features)?;
    let mut p_hat = vec![0.0; n_u];
    pred.iter().for_each(|&p| p_hat[p] += 1.0 / pred.len() as f64);
    bbse_solve(&c, &p_hat)
}

pub fn uniform_prior(n: usize) -> Result<ClassPrior> {
    ClassPrior::uniform(n)
}

/// Total-variation distance `0.5 * sum |p_i - q_i|`.
pub fn prior_tv_distance(p: &ClassPrior, q: &ClassPrior) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::shape(format!(
            "priors over {} and {} classes",
            p.num_classes(),
            q.num_classes()
        )));
    }
    Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}
