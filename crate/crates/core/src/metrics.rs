//! PSNR, FID, KID and Inception Score, a toy shape classifier for IS, and
//! conditional and unconditional evaluation harnesses.

use autograd::Real;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{sample_latent, Dataset};
use crate::error::{Error, Result};
use crate::features::ConvFeatures;
use crate::image_tensor::ImageTensor;
use crate::inference::InferenceModel;
use crate::objectives::ssim;
use crate::rng::RngStream;

/// Reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Seed of the default metric feature extractor, independent of the
/// perceptual-loss extractor.
pub const METRIC_EXTRACTOR_SEED: u64 = 9_100_003;

/// PSNR of raw values against a peak of `max_value`.
pub fn psnr_values(a: &[f64], b: &[f64], max_value: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("psnr of {} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("psnr input".into()));
    }
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB))
}

/// PSNR with both images remapped from `[-1, 1]` to `[0, 1]`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, max_value: f64) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::Shape(format!("psnr of {:?} vs {:?}", a.resolution(), b.resolution())));
    }
    psnr_values(&a.to_unit(), &b.to_unit(), max_value)
}

fn matrix(features: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape(format!("{name}: features must be non-empty rows of equal length")));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} features")));
    }
    Ok(DMatrix::from_row_iterator(features.len(), dim, features.iter().flatten().copied()))
}

fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mean, cov)
}

/// Symmetric square root with negative eigenvalues clamped to zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let most_negative = eig.eigenvalues.iter().copied().fold(0.0f64, f64::min);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&roots) * q.transpose(), most_negative)
}

/// FID value plus any numerical warning raised while computing it.
#[derive(Clone, Debug, PartialEq)]
pub struct FidResult {
    pub value: f64,
    pub warning: Option<String>,
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn fid_detailed(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<FidResult> {
    let (xa, xb) = (matrix(a, "fid")?, matrix(b, "fid")?);
    if xa.ncols() != xb.ncols() {
        return Err(Error::Shape(format!("fid: dimensions {} vs {}", xa.ncols(), xb.ncols())));
    }
    if xa.nrows() < 2 || xb.nrows() < 2 {
        return Err(Error::Shape("fid needs at least two samples per set".into()));
    }
    let (ma, ca) = moments(&xa);
    let (mb, cb) = moments(&xb);
    let (root_a, neg_a) = sqrtm_psd(&ca);
    // Tr((Σa Σb)^½) = Tr((Σa^½ Σb Σa^½)^½), and the inner product is symmetric.
    let inner = &root_a * &cb * &root_a;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let neg_inner = eig.eigenvalues.iter().copied().fold(0.0f64, f64::min);
    let trace_root: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = &ma - &mb;
    let value = diff.dot(&diff) + ca.trace() + cb.trace() - 2.0 * trace_root;
    let scale = ca.trace().abs().max(cb.trace().abs()).max(f64::MIN_POSITIVE);
    let warning = if neg_a.min(neg_inner) < -1e-8 * scale {
        Some(format!("clamped negative eigenvalue {:.3e} in the covariance square root", neg_a.min(neg_inner)))
    } else if xa.nrows() <= xa.ncols() || xb.nrows() <= xb.ncols() {
        Some(format!("covariances are rank-deficient ({} and {} samples in {} dims)", xa.nrows(), xb.nrows(), xa.ncols()))
    } else {
        None
    };
    if let Some(w) = &warning {
        log::warn!("fid: {w}");
    }
    Ok(FidResult { value: value.max(0.0), warning })
}

pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    fid_detailed(a, b).map(|r| r.value)
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d + 1.0).powi(3)
}

/// Unbiased squared MMD with a cubic polynomial kernel, times 100.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (xa, xb) = (matrix(a, "kid")?, matrix(b, "kid")?);
    if xa.ncols() != xb.ncols() {
        return Err(Error::Shape(format!("kid: dimensions {} vs {}", xa.ncols(), xb.ncols())));
    }
    let (n, m) = (a.len(), b.len());
    if n < 2 || m < 2 {
        return Err(Error::Shape("kid needs at least two samples per set".into()));
    }
    let within = |s: &[Vec<f64>]| {
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    total += poly_kernel(&s[i], &s[j]);
                }
            }
        }
        total / (s.len() * (s.len() - 1)) as f64
    };
    let cross: f64 = a.iter().map(|x| b.iter().map(|y| poly_kernel(x, y)).sum::<f64>()).sum::<f64>() / (n * m) as f64;
    Ok(100.0 * (within(a) + within(b) - 2.0 * cross))
}

/// `exp(mean_x KL(p(y|x) ‖ p(y)))`.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<f64> {
    let classes = probs.first().map_or(0, Vec::len);
    if classes == 0 {
        return Err(Error::Shape("inception score needs at least one row".into()));
    }
    for (i, row) in probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != classes || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Shape(format!("row {i} is not a probability vector")));
        }
    }
    let n = probs.len() as f64;
    let marginal: Vec<f64> = (0..classes).map(|c| probs.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let mean_kl = probs
        .iter()
        .map(|row| {
            row.iter().zip(&marginal).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).ln()).sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}

/// Softmax regression over standardized metric features, trained once on
/// labelled images to supply class probabilities for IS.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeClassifier {
    pub classes: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

impl ShapeClassifier {
    pub fn train(features: &[Vec<f64>], labels: &[usize], classes: usize, epochs: usize) -> Result<Self> {
        matrix(features, "classifier")?;
        if features.len() != labels.len() || labels.iter().any(|&l| l >= classes) {
            return Err(Error::Shape("classifier labels do not match features".into()));
        }
        let dim = features[0].len();
        let n = features.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..dim)
            .map(|j| (features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8))
            .collect();
        let mut clf = ShapeClassifier { classes, mean, std, weights: vec![vec![0.0; dim]; classes], bias: vec![0.0; classes] };
        let xs: Vec<Vec<f64>> = features.iter().map(|f| clf.standardize(f)).collect();
        let lr = 0.5;
        for _ in 0..epochs {
            let mut gw = vec![vec![0.0; dim]; classes];
            let mut gb = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(labels) {
                let p = clf.probs_standardized(x);
                for c in 0..classes {
                    let err = p[c] - if c == y { 1.0 } else { 0.0 };
                    gb[c] += err;
                    for j in 0..dim {
                        gw[c][j] += err * x[j];
                    }
                }
            }
            for c in 0..classes {
                clf.bias[c] -= lr * gb[c] / n;
                for j in 0..dim {
                    clf.weights[c][j] -= lr * (gw[c][j] / n + 1e-3 * clf.weights[c][j]);
                }
            }
        }
        Ok(clf)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn probs_standardized(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> =
            self.weights.iter().zip(&self.bias).map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b).collect();
        softmax(&logits)
    }

    pub fn probabilities(&self, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
        features.iter().map(|f| self.probs_standardized(&self.standardize(f))).collect()
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = self
            .probabilities(features)
            .iter()
            .zip(labels)
            .filter(|(p, &l)| p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) == Some(l))
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Conditional,
    Unconditional,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(EvalMode::Conditional),
            "unconditional" => Ok(EvalMode::Unconditional),
            other => Err(Error::config("mode", format!("`{other}` is not conditional or unconditional"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_generated: usize,
    pub n_real: usize,
    pub extractor: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: EvalMode,
    pub seed: u64,
    pub reports: Vec<MetricReport>,
}

impl EvaluationReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.metric == metric).map(|r| r.value)
    }
}

/// Options of [`evaluate`].
pub struct EvalOptions<'a> {
    pub mode: EvalMode,
    pub n_samples: usize,
    pub seed: u64,
    pub extractor: &'a ConvFeatures,
    pub classifier: Option<&'a ShapeClassifier>,
}

/// Renders `n_samples` images in the requested mode and scores them against
/// `real` with FID, KID and (given a classifier) IS. Conditional mode also
/// scores reconstructions of the real images with PSNR and SSIM.
pub fn evaluate<R: Real>(model: &InferenceModel<R>, real: &Dataset, opts: &EvalOptions<'_>) -> Result<EvaluationReport> {
    if opts.n_samples < 2 {
        return Err(Error::config("n_samples", "must be at least 2"));
    }
    let prior = model.prior()?;
    let res = model.resolution();
    let reals: Vec<ImageTensor> =
        real.images().iter().map(|im| if im.resolution() == (res, res) { im.clone() } else { im.resize(res, res) }).collect();
    let mut rng = RngStream::derived(opts.seed, 0xE7A1);
    let mut generated = Vec::with_capacity(opts.n_samples);
    for i in 0..opts.n_samples {
        let z = match opts.mode {
            EvalMode::Unconditional => sample_latent(&mut rng, model.cfg.arch.z_dim),
            EvalMode::Conditional => model.encode(&[&reals[i % reals.len()]])?.remove(0).z_pred,
        };
        let pose = prior.sample(&mut rng);
        generated.push(model.render(&z, pose)?);
    }
    let real_refs: Vec<&ImageTensor> = reals.iter().collect();
    let gen_refs: Vec<&ImageTensor> = generated.iter().collect();
    let f_real = opts.extractor.embed(&real_refs)?;
    let f_gen = opts.extractor.embed(&gen_refs)?;
    let tag = opts.extractor.tag();
    let report = |metric: &str, value: f64, n_generated: usize, warning: Option<String>| MetricReport {
        metric: metric.to_string(),
        value,
        n_generated,
        n_real: reals.len(),
        extractor: tag.clone(),
        seed: opts.seed,
        warning,
    };
    let fid = fid_detailed(&f_gen, &f_real)?;
    let mut reports = vec![report("fid", fid.value, generated.len(), fid.warning), report("kid", kid(&f_gen, &f_real)?, generated.len(), None)];
    if let Some(clf) = opts.classifier {
        reports.push(report("is", inception_score(&clf.probabilities(&f_gen))?, generated.len(), None));
    }
    if opts.mode == EvalMode::Conditional {
        let (mut p, mut s) = (0.0, 0.0);
        for img in &reals {
            let (_, recon) = model.reconstruct(img)?;
            p += psnr(&recon, img, 1.0)?;
            s += ssim(&recon, img)?;
        }
        let n = reals.len() as f64;
        reports.push(report("psnr", p / n, reals.len(), None));
        reports.push(report("ssim", s / n, reals.len(), None));
    }
    for r in &reports {
        if !r.value.is_finite() {
            return Err(Error::NonFinite(format!("{} metric", r.metric)));
        }
    }
    Ok(EvaluationReport { mode: opts.mode, seed: opts.seed, reports })
}

/// Default metric extractor.
pub fn metric_extractor() -> ConvFeatures {
    ConvFeatures::metric(METRIC_EXTRACTOR_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_rows(n: usize, dim: usize, seed: u64, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::seeded(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.normal() + shift).collect()).collect()
    }

    #[test]
    fn psnr_arithmetic() {
        assert_eq!(psnr_values(&[0.3, 0.2], &[0.3, 0.2], 1.0).unwrap(), PSNR_CAP_DB);
        assert!((psnr_values(&[1.0], &[0.0], 1.0).unwrap()).abs() < 1e-12);
        let v = psnr_values(&[0.5; 4], &[0.0; 4], 1.0).unwrap();
        assert!((v - 10.0 * 4f64.log10()).abs() < 1e-12 && (v - 6.0206).abs() < 1e-4);
        // 0.5 and 0.0 on the unit scale are 0 and −1 in image space.
        let (a, b) = (ImageTensor::filled(2, 2, [0.0; 3]), ImageTensor::filled(2, 2, [-1.0; 3]));
        assert!((psnr(&a, &b, 1.0).unwrap() - v).abs() < 1e-12);
        assert!(psnr(&a, &ImageTensor::filled(2, 3, [0.0; 3]), 1.0).is_err());
    }

    #[test]
    fn fid_cases() {
        let x = gaussian_rows(50, 3, 1, 0.0);
        assert!(fid(&x, &x).unwrap() < 1e-6);
        let a: Vec<Vec<f64>> = [-1.0, 0.0, 1.0].iter().map(|v| vec![*v]).collect();
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 2.5]).collect();
        assert!((fid(&a, &b).unwrap() - 6.25).abs() < 1e-12);
        let y = gaussian_rows(60, 3, 2, 0.7);
        assert!((fid(&x, &y).unwrap() - fid(&y, &x).unwrap()).abs() < 1e-8);
        assert!(fid(&x[..1], &y).is_err());
    }

    #[test]
    fn fid_rotation_invariance() {
        let x = gaussian_rows(40, 3, 3, 0.0);
        let y = gaussian_rows(40, 3, 4, 0.5);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = |v: &Vec<f64>| vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
        let (xr, yr): (Vec<_>, Vec<_>) = (x.iter().map(rot).collect(), y.iter().map(rot).collect());
        assert!((fid(&x, &y).unwrap() - fid(&xr, &yr).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn kid_matches_double_sum() {
        let a = vec![vec![0.3], vec![-1.2]];
        let b = vec![vec![0.7], vec![2.0]];
        let k = |x: f64, y: f64| (x * y + 1.0).powi(3);
        let expect = 100.0
            * ((k(0.3, -1.2) + k(-1.2, 0.3)) / 2.0 + (k(0.7, 2.0) + k(2.0, 0.7)) / 2.0
                - 2.0 * (k(0.3, 0.7) + k(0.3, 2.0) + k(-1.2, 0.7) + k(-1.2, 2.0)) / 4.0);
        assert!((kid(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!(kid(&a[..1], &b).is_err());
    }

    #[test]
    fn kid_null_is_centered() {
        let all = gaussian_rows(400, 4, 5, 0.0);
        let (a, b) = all.split_at(200);
        let value = kid(a, b).unwrap();
        // Bootstrap spread of the estimator under the null.
        let mut rng = RngStream::seeded(6);
        let boots: Vec<f64> = (0..30)
            .map(|_| {
                let pick = |rng: &mut RngStream| (0..200).map(|_| all[rng.index(400)].clone()).collect::<Vec<_>>();
                let (x, y) = (pick(&mut rng), pick(&mut rng));
                kid(&x, &y).unwrap()
            })
            .collect();
        let mean = boots.iter().sum::<f64>() / boots.len() as f64;
        let sd = (boots.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (boots.len() - 1) as f64).sqrt();
        assert!(value.abs() < 3.0 * sd, "{value} vs sd {sd}");
    }

    #[test]
    fn inception_score_cases() {
        assert!((inception_score(&vec![vec![0.25; 4]; 5]).unwrap() - 1.0).abs() < 1e-12);
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        assert!((inception_score(&eye).unwrap() - 4.0).abs() < 1e-12);
        assert!(inception_score(&[vec![0.5, 0.6]]).is_err());
        let mut rng = RngStream::seeded(8);
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|_| {
                let r: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.01).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let mut kl = 0.0;
        for row in &rows {
            for c in 0..3 {
                let marginal: f64 = rows.iter().map(|r| r[c]).sum::<f64>() / 7.0;
                kl += row[c] * (row[c].ln() - marginal.ln());
            }
        }
        let v = inception_score(&rows).unwrap();
        assert!((v - (kl / 7.0).exp()).abs() < 1e-10);
        assert!((1.0..=3.0).contains(&v));
    }

    #[test]
    fn classifier_separates_clusters() {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for row in gaussian_rows(30, 5, 20 + c as u64, 3.0 * c as f64) {
                feats.push(row);
                labels.push(c);
            }
        }
        let clf = ShapeClassifier::train(&feats, &labels, 3, 200).unwrap();
        assert!(clf.accuracy(&feats, &labels) > 0.95);
        assert!(clf.probabilities(&feats).iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }
}
