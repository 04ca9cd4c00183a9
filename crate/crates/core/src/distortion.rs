//! Distortion distributions: diagonal Gaussian mixtures fitted by EM, and the
//! model used to draw synthetic rotations, brightness and scale.
//!
//! Rotation is a single Gaussian over the three Euler angles, brightness is
//! a per-category mean with one variance pooled over all categories, and
//! scale is a two-component mixture. Sampling inflates every variance by
//! [`VARIANCE_MULTIPLIER`]; the stored model keeps the observed variances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, EulerAngles};
use crate::model::Dataset;

pub const VARIANCE_MULTIPLIER: f64 = 2.0;
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub const ROTATION_COMPONENTS: usize = 1;
pub const SCALE_COMPONENTS: usize = 2;

/// Mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal covariances, one row per component.
    pub variances: Vec<Vec<f64>>,
}

fn log_normal_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        acc += (2.0 * std::f64::consts::PI * vi).ln() + (xi - mi).powi(2) / vi;
    }
    -0.5 * acc
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GaussianMixture {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidInput("mixture component arrays disagree".into()));
        }
        let d = self.dim();
        if self.means.iter().chain(&self.variances).any(|r| r.len() != d) {
            return Err(Error::InvalidInput("mixture dimensions disagree".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {sum}")));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput("mixture variances must be positive".into()));
        }
        Ok(())
    }

    fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = if self.weights[k] > 0.0 {
                self.weights[k].ln() + log_normal_diag(x, &self.means[k], &self.variances[k])
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.components()];
        self.component_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn log_likelihood(&self, samples: &[Vec<f64>]) -> f64 {
        samples.iter().map(|x| self.log_density(x)).sum()
    }

    /// Draws one vector with every variance multiplied by `variance_scale`.
    pub fn sample_scaled<R: Rng + ?Sized>(&self, rng: &mut R, variance_scale: f64) -> Vec<f64> {
        let k = self.pick_component(rng);
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + (variance_scale * v).sqrt() * z
            })
            .collect()
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.components() == 1 {
            return 0;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.components() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    pub max_iter: usize,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            tol: 1e-6,
            max_iter: 300,
            variance_floor: VARIANCE_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Log-likelihood after initialization and after every EM iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp_centers(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut centers = vec![samples[rng.gen_range(0..n)].clone()];
    let mut dist: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        let c = samples[idx].clone();
        for (d, s) in dist.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, &c));
        }
        centers.push(c);
    }
    centers
}

/// Weighted M-step. `resp[i][k]` is the responsibility of component `k`
/// for sample `i`.
fn m_step(
    samples: &[Vec<f64>],
    resp: &[Vec<f64>],
    previous: Option<&GaussianMixture>,
    floor: f64,
) -> GaussianMixture {
    let n = samples.len();
    let k = resp[0].len();
    let d = samples[0].len();
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut variances = vec![vec![0.0; d]; k];
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        weights[c] = nk / n as f64;
        if nk <= 0.0 {
            means[c] = previous.map_or_else(|| samples[0].clone(), |p| p.means[c].clone());
            variances[c] = vec![floor; d];
            continue;
        }
        for (x, r) in samples.iter().zip(resp) {
            for j in 0..d {
                means[c][j] += r[c] * x[j];
            }
        }
        for m in &mut means[c] {
            *m /= nk;
        }
        for (x, r) in samples.iter().zip(resp) {
            for j in 0..d {
                variances[c][j] += r[c] * (x[j] - means[c][j]).powi(2);
            }
        }
        for v in &mut variances[c] {
            *v = (*v / nk).max(floor);
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GaussianMixture {
        weights,
        means,
        variances,
    }
}

/// Fits a `k`-component diagonal mixture by EM with seeded k-means++
/// initialization.
pub fn fit_gmm(samples: &[Vec<f64>], k: usize, opts: &GmmOptions) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidInput("mixture needs at least one component".into()));
    }
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 && !samples.is_empty() {
        return Err(Error::InvalidInput("zero-dimensional samples".into()));
    }
    let required = k * (d.max(1) + 1);
    if samples.len() < required {
        return Err(Error::InsufficientSamples {
            required,
            got: samples.len(),
        });
    }
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidInput("samples have mixed dimensions".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    if samples.iter().all(|s| s == &samples[0]) {
        log::warn!("all {} samples are identical; variances floored", samples.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centers = kmeans_pp_centers(samples, k, &mut rng);
    let hard: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(s, &centers[a]).total_cmp(&sq_dist(s, &centers[b])))
                .unwrap();
            let mut r = vec![0.0; k];
            r[best] = 1.0;
            r
        })
        .collect();
    let mut mixture = m_step(samples, &hard, None, opts.variance_floor);
    // Components left empty by the hard assignment start from the pooled fit.
    if mixture.weights.contains(&0.0) {
        let pooled = m_step(samples, &vec![vec![1.0]; samples.len()], None, opts.variance_floor);
        for (c, center) in centers.iter().enumerate() {
            if mixture.weights[c] == 0.0 {
                mixture.means[c] = center.clone();
                mixture.variances[c] = pooled.variances[0].clone();
                mixture.weights[c] = 1.0 / k as f64;
            }
        }
        let total: f64 = mixture.weights.iter().sum();
        mixture.weights.iter_mut().for_each(|w| *w /= total);
    }

    let mut trace = vec![mixture.log_likelihood(samples)];
    let mut resp = vec![vec![0.0; k]; samples.len()];
    let mut buf = vec![0.0; k];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for (x, r) in samples.iter().zip(resp.iter_mut()) {
            mixture.component_log_densities(x, &mut buf);
            let norm = log_sum_exp(&buf);
            for (ri, li) in r.iter_mut().zip(&buf) {
                *ri = (li - norm).exp();
            }
        }
        let next = m_step(samples, &resp, Some(&mixture), opts.variance_floor);
        let ll = next.log_likelihood(samples);
        let prev = *trace.last().unwrap();
        if ll < prev - 1e-9 * prev.abs().max(1.0) {
            log::warn!("EM log-likelihood decreased from {prev} to {ll}");
        }
        mixture = next;
        trace.push(ll);
        if (ll - prev).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        mixture,
        log_likelihood: trace,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrightnessModel {
    /// Mean intensity (L units) per category id.
    pub means: BTreeMap<u64, f64>,
    /// Variance of per-instance deviations from their category mean, pooled
    /// over all categories.
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastModel {
    pub mean: f64,
    pub std: f64,
}

impl Default for ContrastModel {
    fn default() -> Self {
        ContrastModel {
            mean: 1.0,
            std: 0.15,
        }
    }
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionModel {
    pub schema_version: u32,
    /// Euler angles `[rx, ry, rz]` in radians; absent when no instance had
    /// usable geometry.
    pub rotation: Option<GaussianMixture>,
    pub brightness: BrightnessModel,
    /// Rectified instance size in pixels.
    pub scale: Option<GaussianMixture>,
    pub variance_multiplier: f64,
    pub contrast: ContrastModel,
}

impl DistortionModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: DistortionModel = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e))?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::parse(
                "schema_version",
                format!("unsupported version {}", model.schema_version),
            ));
        }
        for m in model.rotation.iter().chain(&model.scale) {
            m.validate()?;
        }
        Ok(model)
    }
}

/// Per-instance measurements feeding [`fit_distortion_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceObservation {
    pub category_id: u64,
    pub angles: Option<EulerAngles>,
    /// Geometric mean of the rectified width and height, in pixels.
    pub size: Option<f64>,
    /// Mean L over the instance.
    pub brightness: f64,
}

pub fn fit_distortion_model(
    ds: &Dataset,
    observations: &[InstanceObservation],
    opts: &GmmOptions,
) -> Result<DistortionModel> {
    let known = ds.category_index();
    if let Some(o) = observations.iter().find(|o| !known.contains_key(&o.category_id)) {
        return Err(Error::UnknownCategory(o.category_id));
    }

    let angles: Vec<Vec<f64>> = observations
        .iter()
        .filter_map(|o| o.angles.map(|a| a.as_array().to_vec()))
        .collect();
    let rotation = if angles.len() >= ROTATION_COMPONENTS * 4 {
        Some(fit_gmm(&angles, ROTATION_COMPONENTS, opts)?.mixture)
    } else {
        log::warn!(
            "{} instances with geometry; rotation model omitted",
            angles.len()
        );
        None
    };

    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for o in observations {
        let e = sums.entry(o.category_id).or_default();
        e.0 += o.brightness;
        e.1 += 1;
    }
    let means: BTreeMap<u64, f64> = sums
        .iter()
        .map(|(&c, &(s, n))| (c, s / n as f64))
        .collect();
    let variance = if observations.is_empty() {
        opts.variance_floor
    } else {
        let ss: f64 = observations
            .iter()
            .map(|o| (o.brightness - means[&o.category_id]).powi(2))
            .sum();
        (ss / observations.len() as f64).max(opts.variance_floor)
    };

    let sizes: Vec<Vec<f64>> = observations
        .iter()
        .filter_map(|o| o.size.map(|s| vec![s]))
        .collect();
    let scale_opts = GmmOptions {
        seed: opts.seed.wrapping_add(1),
        ..*opts
    };
    let scale = if sizes.len() >= SCALE_COMPONENTS * 2 {
        Some(fit_gmm(&sizes, SCALE_COMPONENTS, &scale_opts)?.mixture)
    } else if sizes.len() >= 2 {
        log::warn!("only {} sizes; scale fitted with one component", sizes.len());
        Some(fit_gmm(&sizes, 1, &scale_opts)?.mixture)
    } else {
        None
    };

    Ok(DistortionModel {
        schema_version: MODEL_SCHEMA_VERSION,
        rotation,
        brightness: BrightnessModel { means, variance },
        scale,
        variance_multiplier: VARIANCE_MULTIPLIER,
        contrast: ContrastModel::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSample {
    pub angles: EulerAngles,
    pub brightness_mean: f64,
    pub contrast_scale: f64,
    pub scale: f64,
}

pub const MIN_CONTRAST_SCALE: f64 = 0.2;

/// Draws one distortion for `category_id` with inflated variances.
///
/// The draw order is fixed (rotation, brightness, contrast, scale), so a
/// seeded stream reproduces the sample exactly.
pub fn sample_distortion<R: Rng + ?Sized>(
    model: &DistortionModel,
    category_id: u64,
    rng: &mut R,
) -> Result<DistortionSample> {
    let mean = *model
        .brightness
        .means
        .get(&category_id)
        .ok_or(Error::UnknownCategory(category_id))?;
    let inflate = model.variance_multiplier;

    let angles = match &model.rotation {
        Some(rot) => {
            let a = rot.sample_scaled(rng, inflate);
            EulerAngles::new(wrap_angle(a[0]), wrap_angle(a[1]), wrap_angle(a[2]))
        }
        None => EulerAngles::default(),
    };

    let z: f64 = StandardNormal.sample(rng);
    let brightness_mean = (mean + (inflate * model.brightness.variance).sqrt() * z).clamp(0.0, 100.0);

    let z: f64 = StandardNormal.sample(rng);
    let contrast_scale = (model.contrast.mean + model.contrast.std * z)
        .clamp(MIN_CONTRAST_SCALE, crate::appearance::MAX_CONTRAST_SCALE);

    let scale_model = model
        .scale
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("model has no scale distribution".into()))?;
    let mut scale = 0.0;
    for _ in 0..100 {
        scale = scale_model.sample_scaled(rng, inflate)[0];
        if scale > 0.0 {
            break;
        }
    }
    if !(scale > 0.0) {
        scale = scale_model.means[0][0].abs().max(1.0);
    }

    Ok(DistortionSample {
        angles,
        brightness_mean,
        contrast_scale,
        scale,
    })
}
