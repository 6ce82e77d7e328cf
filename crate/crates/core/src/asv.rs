//! GMM-UBM speaker verification: EM-trained universal background model,
//! MAP-adapted speaker models, log-likelihood-ratio scoring, and EER.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{load_wav, Condition, Manifest, NoiseType, Split};
use crate::dsp::mfcc;
use crate::enhance::Enhancer;
use crate::error::{Error, Result};
use crate::mat::Mat;

const VAR_FLOOR_FACTOR: f64 = 1e-4;
const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Mat, // K x D
    pub vars: Mat,  // K x D, floored
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Per-component log densities of one frame (log w_k + log N_k).
    fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.k() {
            let mu = self.means.row(k);
            let var = self.vars.row(k);
            let mut acc = self.weights[k].max(1e-300).ln();
            for d in 0..x.len() {
                let diff = x[d] - mu[d];
                acc -= 0.5 * (LN_2PI + var[d].ln() + diff * diff / var[d]);
            }
            out[k] = acc;
        }
    }

    /// Log density under the mixture (log-sum-exp stabilized).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.k()];
        self.component_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Draw one sample (tests and smoke checks).
    pub fn sample(&self, rng: &mut ChaCha20Rng) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut comp = self.k() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                comp = k;
                break;
            }
        }
        (0..self.dim())
            .map(|d| {
                let z: f64 = StandardNormal.sample(rng);
                self.means.at(comp, d) + z * self.vars.at(comp, d).sqrt()
            })
            .collect()
    }

    pub fn weights_are_simplex(&self) -> bool {
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter().all(|w| *w >= 0.0) && (sum - 1.0).abs() < 1e-12
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// EM training outcome; log-likelihoods are grouped per phase (each binary
/// split restarts the monotone sequence).
pub struct UbmTraining {
    pub model: GmmModel,
    pub ll_phases: Vec<Vec<f64>>,
}

impl UbmTraining {
    /// Per-frame total log-likelihood is non-decreasing within every EM
    /// phase, up to round-off tolerance.
    pub fn monotonic_within_phases(&self, tol: f64) -> bool {
        self.ll_phases
            .iter()
            .all(|p| p.windows(2).all(|w| w[1] >= w[0] - tol))
    }
}

/// EM on a diagonal GMM with binary-split initialization: start from the
/// global Gaussian, split every component with a +-0.2 sigma perturbation,
/// run `split_iters` EM iterations per level, then `final_iters` at full K.
pub fn train_ubm(features: &Mat, k: usize, final_iters: usize) -> Result<UbmTraining> {
    train_ubm_with(features, k, final_iters, 5)
}

pub fn train_ubm_with(
    features: &Mat,
    k: usize,
    final_iters: usize,
    split_iters: usize,
) -> Result<UbmTraining> {
    let t = features.rows();
    let d = features.cols();
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "mixture count must be a power of two, got {k}"
        )));
    }
    if t < 2 * k {
        return Err(Error::InvalidArgument(format!(
            "need at least {} frames for {k} components, got {t}",
            2 * k
        )));
    }

    // Global Gaussian and the variance floor derived from it.
    let mut mean = vec![0.0; d];
    for r in 0..t {
        for (j, v) in features.row(r).iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..t {
        for (j, v) in features.row(r).iter().enumerate() {
            let dv = v - mean[j];
            var[j] += dv * dv;
        }
    }
    for v in &mut var {
        *v /= t as f64;
    }
    if var.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("degenerate constant features".into()));
    }
    let floor: Vec<f64> = var.iter().map(|v| (v * VAR_FLOOR_FACTOR).max(1e-12)).collect();

    let mut model = GmmModel {
        weights: vec![1.0],
        means: Mat::from_vec(1, d, mean),
        vars: Mat::from_vec(1, d, var.clone()),
    };
    let mut ll_phases = Vec::new();

    while model.k() < k {
        model = split(&model);
        let ll = em_iterations(&mut model, features, split_iters, &floor);
        ll_phases.push(ll);
    }
    if final_iters > 0 || model.k() == 1 {
        let iters = if model.k() == 1 { final_iters.max(1) } else { final_iters };
        let ll = em_iterations(&mut model, features, iters, &floor);
        ll_phases.push(ll);
    }
    Ok(UbmTraining { model, ll_phases })
}

/// Duplicate each component with +-0.2 sigma mean perturbation.
fn split(model: &GmmModel) -> GmmModel {
    let (k, d) = (model.k(), model.dim());
    let mut weights = Vec::with_capacity(2 * k);
    let mut means = Mat::zeros(2 * k, d);
    let mut vars = Mat::zeros(2 * k, d);
    for c in 0..k {
        for (sign, slot) in [(1.0, 2 * c), (-1.0, 2 * c + 1)] {
            weights.push(model.weights[c] / 2.0);
            for j in 0..d {
                *means.at_mut(slot, j) =
                    model.means.at(c, j) + sign * 0.2 * model.vars.at(c, j).sqrt();
                *vars.at_mut(slot, j) = model.vars.at(c, j);
            }
        }
    }
    GmmModel {
        weights,
        means,
        vars,
    }
}

/// Run EM; returns the per-frame total log-likelihood after each iteration
/// (evaluated with that iteration's updated parameters).
fn em_iterations(model: &mut GmmModel, features: &Mat, iters: usize, floor: &[f64]) -> Vec<f64> {
    let t = features.rows();
    let d = features.cols();
    let k = model.k();
    let mut lls = Vec::with_capacity(iters);
    let mut log_buf = vec![0.0; k];

    for _ in 0..iters {
        let mut n = vec![0.0f64; k];
        let mut sum_x = Mat::zeros(k, d);
        let mut sum_x2 = Mat::zeros(k, d);
        for r in 0..t {
            let x = features.row(r);
            model.component_log_densities(x, &mut log_buf);
            let lse = log_sum_exp(&log_buf);
            for c in 0..k {
                let g = (log_buf[c] - lse).exp();
                if g < 1e-16 {
                    continue;
                }
                n[c] += g;
                let sx = sum_x.row_mut(c);
                for (j, v) in x.iter().enumerate() {
                    sx[j] += g * v;
                }
                let sx2 = sum_x2.row_mut(c);
                for (j, v) in x.iter().enumerate() {
                    sx2[j] += g * v * v;
                }
            }
        }
        let total: f64 = n.iter().sum();
        for c in 0..k {
            if n[c] < 1e-8 {
                continue; // starved component keeps its parameters
            }
            model.weights[c] = n[c] / total;
            for j in 0..d {
                let mu = sum_x.at(c, j) / n[c];
                let v = (sum_x2.at(c, j) / n[c] - mu * mu).max(floor[j]);
                *model.means.at_mut(c, j) = mu;
                *model.vars.at_mut(c, j) = v;
            }
        }
        // Renormalize in case a component was skipped.
        let wsum: f64 = model.weights.iter().sum();
        for w in &mut model.weights {
            *w /= wsum;
        }

        let mut ll = 0.0;
        for r in 0..t {
            ll += model.log_density(features.row(r));
        }
        lls.push(ll / t as f64);
    }
    lls
}

// ---------------------------------------------------------------------------
// MAP adaptation and scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrollCondition {
    Clean,
    MultiCondition,
}

/// Speaker model: UBM with means-only MAP adaptation.
pub struct SpeakerModel {
    pub base: GmmModel,
    pub speaker_id: String,
    pub condition: EnrollCondition,
}

/// Means-only MAP adaptation:
/// m'_k = (n_k x_bar_k + r m_k) / (n_k + r) with soft counts under the UBM.
pub fn map_adapt(ubm: &GmmModel, features: &Mat, relevance: f64) -> GmmModel {
    let (k, d) = (ubm.k(), ubm.dim());
    let mut n = vec![0.0f64; k];
    let mut sum_x = Mat::zeros(k, d);
    let mut log_buf = vec![0.0; k];
    for r in 0..features.rows() {
        let x = features.row(r);
        ubm.component_log_densities(x, &mut log_buf);
        let lse = log_sum_exp(&log_buf);
        for c in 0..k {
            let g = (log_buf[c] - lse).exp();
            if g < 1e-16 {
                continue;
            }
            n[c] += g;
            let sx = sum_x.row_mut(c);
            for (j, v) in x.iter().enumerate() {
                sx[j] += g * v;
            }
        }
    }
    let mut adapted = ubm.clone();
    for c in 0..k {
        if n[c] == 0.0 {
            continue; // no evidence: component stays at the UBM
        }
        for j in 0..d {
            let xbar = sum_x.at(c, j) / n[c];
            *adapted.means.at_mut(c, j) =
                (n[c] * xbar + relevance * ubm.means.at(c, j)) / (n[c] + relevance);
        }
    }
    adapted
}

/// Average per-frame log-likelihood ratio between a model and the UBM.
pub fn llr_score(model: &GmmModel, ubm: &GmmModel, features: &Mat) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::InvalidArgument("empty feature sequence".into()));
    }
    if model.dim() != ubm.dim() || features.cols() != ubm.dim() {
        return Err(Error::Shape("feature dimension mismatch".into()));
    }
    let mut acc = 0.0;
    for r in 0..features.rows() {
        acc += model.log_density(features.row(r)) - ubm.log_density(features.row(r));
    }
    Ok(acc / features.rows() as f64)
}

// ---------------------------------------------------------------------------
// EER
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub target_scores: Vec<f64>,
    pub impostor_scores: Vec<f64>,
}

/// Equal error rate by threshold sweep over the pooled scores, linearly
/// interpolated at the FAR/FRR crossing.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let tar = &scores.target_scores;
    let imp = &scores.impostor_scores;
    if tar.is_empty() || imp.is_empty() {
        return Err(Error::InvalidArgument("empty score list".into()));
    }
    let mut thresholds: Vec<f64> = tar.iter().chain(imp).cloned().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let mut tar_sorted = tar.clone();
    tar_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut imp_sorted = imp.clone();
    imp_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let far = |theta: f64| -> f64 {
        // Fraction of impostor scores >= theta.
        let idx = imp_sorted.partition_point(|s| *s < theta);
        (imp_sorted.len() - idx) as f64 / imp_sorted.len() as f64
    };
    let frr = |theta: f64| -> f64 {
        // Fraction of target scores < theta.
        tar_sorted.partition_point(|s| *s < theta) as f64 / tar_sorted.len() as f64
    };

    let mut prev_theta = thresholds[0] - 1.0;
    let mut prev_diff = far(prev_theta) - frr(prev_theta); // = 1 at -inf
    let mut prev_far = 1.0;
    for &theta in thresholds.iter().chain(std::iter::once(
        &(thresholds[thresholds.len() - 1] + 1.0),
    )) {
        let d = far(theta) - frr(theta);
        if d <= 0.0 {
            if d == 0.0 {
                return Ok(far(theta));
            }
            // Sign change in (prev_theta, theta]: interpolate.
            let t = prev_diff / (prev_diff - d);
            return Ok(prev_far + t * (far(theta) - prev_far));
        }
        prev_theta = theta;
        prev_diff = d;
        prev_far = far(theta);
    }
    let _ = prev_theta;
    Ok(0.0)
}

// ---------------------------------------------------------------------------
// Verification protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AsvConfig {
    pub components: usize,
    pub relevance: f64,
    pub final_em_iters: usize,
}

impl Default for AsvConfig {
    /// Desk-scale default: 64 components (512 is the full-scale setting,
    /// far too many for minutes of synthetic audio).
    fn default() -> Self {
        AsvConfig {
            components: 64,
            relevance: 16.0,
            final_em_iters: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialScore {
    pub trial_id: String,
    pub is_target: bool,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct EerCell {
    pub noise: Option<NoiseType>, // None = clean column
    pub snr_db: Option<f64>,
    pub eer: f64,
    pub n_trials: usize,
}

pub struct ProtocolResult {
    pub cells: Vec<EerCell>,
    pub scores: Vec<TrialScore>,
}

impl ProtocolResult {
    pub fn eer_for(&self, noise: Option<NoiseType>, snr_db: Option<f64>) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.noise == noise && c.snr_db == snr_db)
            .map(|c| c.eer)
    }

    /// CSV grid: one row per noise, columns for each SNR plus clean + mean.
    pub fn to_csv(&self) -> String {
        let mut snrs: Vec<f64> = self
            .cells
            .iter()
            .filter_map(|c| c.snr_db)
            .collect();
        snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        snrs.dedup();
        let mut noises: Vec<NoiseType> =
            self.cells.iter().filter_map(|c| c.noise).collect();
        noises.sort_by_key(|n| n.as_str());
        noises.dedup();

        let mut out = String::from("noise");
        for s in &snrs {
            out.push_str(&format!(",{s}"));
        }
        out.push_str(",clean,mean\n");
        let clean_eer = self.eer_for(None, None);
        for noise in &noises {
            out.push_str(noise.as_str());
            let mut vals = Vec::new();
            for s in &snrs {
                let v = self.eer_for(Some(*noise), Some(*s));
                out.push_str(&format!(
                    ",{}",
                    v.map(|e| format!("{:.4}", e * 100.0)).unwrap_or_default()
                ));
                if let Some(e) = v {
                    vals.push(e);
                }
            }
            out.push_str(&format!(
                ",{}",
                clean_eer.map(|e| format!("{:.4}", e * 100.0)).unwrap_or_default()
            ));
            if let Some(e) = clean_eer {
                vals.push(e);
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            out.push_str(&format!(",{:.4}\n", mean * 100.0));
        }
        out
    }

    /// Score-file lines: "trial_id target|impostor score".
    pub fn score_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.scores {
            out.push_str(&format!(
                "{} {} {:.6}\n",
                s.trial_id,
                if s.is_target { "target" } else { "impostor" },
                s.score
            ));
        }
        out
    }
}

fn features_of(manifest: &Manifest, entry: &crate::corpus::ManifestEntry) -> Result<Mat> {
    let w = load_wav(manifest.resolve(entry))?;
    Ok(mfcc(&w, 19, true)?.frames)
}

fn enhanced_features(
    manifest: &Manifest,
    entry: &crate::corpus::ManifestEntry,
    enhancer: &dyn Enhancer,
) -> Result<Mat> {
    let w = load_wav(manifest.resolve(entry))?;
    let e = enhancer.enhance(&w)?;
    Ok(mfcc(&e, 19, true)?.frames)
}

/// Run the verification protocol: UBM on the clean UBM split, per-speaker
/// MAP models from enhanced enroll data (clean only, or clean plus noisy
/// for multi-condition), same-text target/impostor trials per condition.
pub fn run_protocol(
    manifest: &Manifest,
    enhancer: &dyn Enhancer,
    protocol: EnrollCondition,
    cfg: &AsvConfig,
) -> Result<ProtocolResult> {
    // UBM from pooled clean features of the UBM split.
    let ubm_entries: Vec<_> = manifest
        .in_split(Split::Ubm)
        .into_iter()
        .filter(|e| e.is_clean())
        .collect();
    if ubm_entries.is_empty() {
        return Err(Error::Manifest("no UBM-split entries".into()));
    }
    let mut pooled: Vec<Mat> = Vec::new();
    for e in &ubm_entries {
        pooled.push(features_of(manifest, e)?);
    }
    let total: usize = pooled.iter().map(|m| m.rows()).sum();
    let dim = pooled[0].cols();
    let mut ubm_feats = Mat::zeros(total, dim);
    let mut row = 0;
    for m in &pooled {
        for r in 0..m.rows() {
            ubm_feats.row_mut(row).copy_from_slice(m.row(r));
            row += 1;
        }
    }
    let ubm = train_ubm(&ubm_feats, cfg.components, cfg.final_em_iters)?.model;

    // Speaker models from the enroll split.
    let mut speakers: Vec<String> = manifest
        .in_split(Split::Enroll)
        .iter()
        .map(|e| e.speaker_id.clone())
        .collect();
    speakers.sort();
    speakers.dedup();
    if speakers.len() < 2 {
        return Err(Error::Manifest("need at least 2 enroll speakers".into()));
    }

    let mut models: Vec<SpeakerModel> = Vec::new();
    for spk in &speakers {
        let mut frames: Vec<Mat> = Vec::new();
        for e in manifest.in_split(Split::Enroll) {
            if &e.speaker_id != spk {
                continue;
            }
            let use_entry = match protocol {
                EnrollCondition::Clean => e.is_clean(),
                EnrollCondition::MultiCondition => true,
            };
            if !use_entry {
                continue;
            }
            frames.push(enhanced_features(manifest, e, enhancer)?);
        }
        if frames.is_empty() {
            return Err(Error::Manifest(format!("no enroll data for {spk}")));
        }
        let total: usize = frames.iter().map(|m| m.rows()).sum();
        let mut feats = Mat::zeros(total, dim);
        let mut row = 0;
        for m in &frames {
            for r in 0..m.rows() {
                feats.row_mut(row).copy_from_slice(m.row(r));
                row += 1;
            }
        }
        models.push(SpeakerModel {
            base: map_adapt(&ubm, &feats, cfg.relevance),
            speaker_id: spk.clone(),
            condition: protocol,
        });
    }

    // Conditions present in the test split (plus the clean column).
    let mut conditions: Vec<Option<(NoiseType, f64)>> = vec![None];
    for e in manifest.in_split(Split::Test) {
        if let Condition::Noisy { noise_type, snr_db } = e.condition {
            if !conditions.contains(&Some((noise_type, snr_db))) {
                conditions.push(Some((noise_type, snr_db)));
            }
        }
    }
    conditions.sort_by(|a, b| match (a, b) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, _) => std::cmp::Ordering::Less,
        (_, None) => std::cmp::Ordering::Greater,
        (Some((na, sa)), Some((nb, sb))) => na
            .as_str()
            .cmp(nb.as_str())
            .then(sa.partial_cmp(sb).unwrap()),
    });

    let mut cells = Vec::new();
    let mut all_scores = Vec::new();
    for cond in &conditions {
        let mut set = ScoreSet::default();
        for e in manifest.in_split(Split::Test) {
            let matches = match cond {
                None => e.is_clean(),
                Some((noise, snr)) => matches!(
                    e.condition,
                    Condition::Noisy { noise_type, snr_db } if noise_type == *noise && snr_db == *snr
                ),
            };
            if !matches {
                continue;
            }
            let feats = enhanced_features(manifest, e, enhancer)?;
            for model in &models {
                if !manifest.in_split(Split::Enroll).iter().any(|en| {
                    en.speaker_id == model.speaker_id && en.text_id == e.text_id
                }) {
                    continue; // same-text trials only
                }
                let score = llr_score(&model.base, &ubm, &feats)?;
                let is_target = model.speaker_id == e.speaker_id;
                set
                    .target_scores
                    .extend(is_target.then_some(score));
                set.impostor_scores.extend((!is_target).then_some(score));
                all_scores.push(TrialScore {
                    trial_id: format!("{}__vs__{}", e.utterance_id, model.speaker_id),
                    is_target,
                    score,
                });
            }
        }
        if set.target_scores.is_empty() || set.impostor_scores.is_empty() {
            continue;
        }
        let n_trials = set.target_scores.len() + set.impostor_scores.len();
        cells.push(EerCell {
            noise: cond.map(|(n, _)| n),
            snr_db: cond.map(|(_, s)| s),
            eer: eer(&set)?,
            n_trials,
        });
    }

    Ok(ProtocolResult {
        cells,
        scores: all_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn gaussian_scores(n: usize, mean: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + mean
            })
            .collect()
    }

    #[test]
    fn single_component_recovers_sample_statistics() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let n = 2000;
        let feats = Mat::from_fn(n, 2, |_, c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if c == 0 {
                2.0 * z + 1.0
            } else {
                0.5 * z - 3.0
            }
        });
        let trained = train_ubm(&feats, 1, 3).unwrap();
        let m = &trained.model;
        // Exact MLE of a single Gaussian: sample mean and variance.
        let mut want_mean = [0.0f64; 2];
        for r in 0..n {
            want_mean[0] += feats.at(r, 0);
            want_mean[1] += feats.at(r, 1);
        }
        want_mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut want_var = [0.0f64; 2];
        for r in 0..n {
            for c in 0..2 {
                let d = feats.at(r, c) - want_mean[c];
                want_var[c] += d * d;
            }
        }
        want_var.iter_mut().for_each(|v| *v /= n as f64);
        for c in 0..2 {
            assert_abs_diff_eq!(m.means.at(0, c), want_mean[c], epsilon = 1e-9);
            assert_abs_diff_eq!(m.vars.at(0, c), want_var[c], epsilon = 1e-9);
        }
        assert!(m.weights_are_simplex());
    }

    #[test]
    fn recovers_separated_mixture() {
        // Three well-separated 2-D blobs; K=4 binary-split training must
        // place components within 0.1 of every true center.
        let truth = [[-6.0, 0.0], [0.0, 6.0], [6.0, -6.0]];
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let n = 3000;
        let feats = Mat::from_fn(n, 2, |r, c| {
            let blob = r % 3;
            let z: f64 = StandardNormal.sample(&mut rng);
            truth[blob][c] + 0.1 * z
        });
        let trained = train_ubm(&feats, 4, 20).unwrap();
        for target in truth {
            let best = (0..trained.model.k())
                .map(|k| {
                    let dx = trained.model.means.at(k, 0) - target[0];
                    let dy = trained.model.means.at(k, 1) - target[1];
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "blob {target:?} missed by {best}");
        }
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        for seed in 0..10 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let feats = Mat::from_fn(600, 3, |r, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + (r % 4) as f64 * 2.0
            });
            let trained = train_ubm(&feats, 8, 10).unwrap();
            assert!(
                trained.monotonic_within_phases(1e-8),
                "seed {seed}: {:?}",
                trained.ll_phases
            );
            assert!(trained.model.weights_are_simplex());
        }
    }

    #[test]
    fn rejects_bad_k_and_degenerate_features() {
        let feats = Mat::from_fn(100, 2, |r, c| (r * 2 + c) as f64);
        assert!(train_ubm(&feats, 3, 5).is_err()); // not a power of two
        assert!(train_ubm(&feats, 128, 5).is_err()); // more than frames
        let constant = Mat::zeros(100, 2);
        assert!(train_ubm(&constant, 2, 5).is_err());
    }

    #[test]
    fn map_adaptation_limits() {
        let ubm = GmmModel {
            weights: vec![0.5, 0.5],
            means: Mat::from_vec(2, 1, vec![-10.0, 10.0]),
            vars: Mat::from_vec(2, 1, vec![1.0, 1.0]),
        };
        // All data near component 1: component 0 keeps its mean.
        let feats = Mat::from_fn(200, 1, |r, _| 10.0 + ((r % 10) as f64 - 4.5) * 0.01);
        let adapted = map_adapt(&ubm, &feats, 16.0);
        assert_eq!(adapted.means.at(0, 0), -10.0);
        assert!(adapted.means.at(1, 0) != 10.0);
        assert_eq!(adapted.weights, ubm.weights);
        assert_eq!(adapted.vars, ubm.vars);

        // n_k >> r pulls the mean to the data average.
        let big = Mat::from_fn(100_000, 1, |_, _| 12.0);
        let adapted = map_adapt(&ubm, &big, 16.0);
        assert!((adapted.means.at(1, 0) - 12.0).abs() < 0.01);
    }

    #[test]
    fn map_midpoint_at_matched_counts() {
        // A single component makes the soft counts exactly the frame count:
        // with n = r = 16 the adapted mean is the exact midpoint.
        let ubm = GmmModel {
            weights: vec![1.0],
            means: Mat::from_vec(1, 1, vec![0.0]),
            vars: Mat::from_vec(1, 1, vec![1.0]),
        };
        let feats = Mat::from_fn(16, 1, |_, _| 4.0);
        let adapted = map_adapt(&ubm, &feats, 16.0);
        assert_abs_diff_eq!(adapted.means.at(0, 0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn llr_of_identical_models_is_zero() {
        let ubm = GmmModel {
            weights: vec![0.3, 0.7],
            means: Mat::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]),
            vars: Mat::from_vec(2, 2, vec![1.0, 0.5, 2.0, 1.5]),
        };
        let feats = Mat::from_fn(50, 2, |r, c| (r + c) as f64 * 0.1);
        let s = llr_score(&ubm, &ubm, &feats).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn llr_positive_for_matched_data() {
        let ubm = GmmModel {
            weights: vec![0.5, 0.5],
            means: Mat::from_vec(2, 1, vec![-2.0, 2.0]),
            vars: Mat::from_vec(2, 1, vec![1.0, 1.0]),
        };
        let mut positives = 0;
        for trial in 0..100 {
            let mut rng = ChaCha20Rng::seed_from_u64(500 + trial);
            let adapted = {
                let feats = Mat::from_fn(100, 1, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 + 0.3 * z
                });
                map_adapt(&ubm, &feats, 16.0)
            };
            // Fresh data from the adapted model itself.
            let mut sample_rng = ChaCha20Rng::seed_from_u64(9000 + trial);
            let test = Mat::from_fn(60, 1, |_, _| adapted.sample(&mut sample_rng)[0]);
            let s = llr_score(&adapted, &ubm, &test).unwrap();
            if s > 0.0 {
                positives += 1;
            }
        }
        assert!(positives > 90, "only {positives}/100 positive LLRs");
    }

    #[test]
    fn llr_is_frame_order_invariant() {
        let ubm = GmmModel {
            weights: vec![1.0],
            means: Mat::from_vec(1, 1, vec![0.0]),
            vars: Mat::from_vec(1, 1, vec![1.0]),
        };
        let model = GmmModel {
            weights: vec![1.0],
            means: Mat::from_vec(1, 1, vec![0.5]),
            vars: Mat::from_vec(1, 1, vec![1.0]),
        };
        let feats = Mat::from_vec(4, 1, vec![0.1, 0.9, -0.4, 1.7]);
        let rev = Mat::from_vec(4, 1, vec![1.7, -0.4, 0.9, 0.1]);
        let a = llr_score(&model, &ubm, &feats).unwrap();
        let b = llr_score(&model, &ubm, &rev).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }

    #[test]
    fn eer_anchors() {
        // Perfect separation.
        let s = ScoreSet {
            target_scores: vec![1.0, 2.0, 3.0],
            impostor_scores: vec![-3.0, -2.0, -1.0],
        };
        assert_eq!(eer(&s).unwrap(), 0.0);

        // Identical distributions.
        let same = ScoreSet {
            target_scores: gaussian_scores(20_000, 0.0, 1),
            impostor_scores: gaussian_scores(20_000, 0.0, 2),
        };
        let e = eer(&same).unwrap();
        assert!((e - 0.5).abs() < 0.01, "identical lists EER {e}");

        // Empty list rejected.
        assert!(eer(&ScoreSet::default()).is_err());
    }

    #[test]
    fn eer_matches_gaussian_crossing() {
        // Targets N(2,1) vs impostors N(0,1): EER = 1 - Phi(1) ~ 0.1587.
        let s = ScoreSet {
            target_scores: gaussian_scores(100_000, 2.0, 11),
            impostor_scores: gaussian_scores(100_000, 0.0, 12),
        };
        let e = eer(&s).unwrap();
        assert!((e - 0.1587).abs() < 0.005, "EER {e}");
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let s = ScoreSet {
            target_scores: gaussian_scores(5_000, 1.0, 21),
            impostor_scores: gaussian_scores(5_000, 0.0, 22),
        };
        let base = eer(&s).unwrap();
        let warped = ScoreSet {
            target_scores: s.target_scores.iter().map(|v| (v * 0.7).exp()).collect(),
            impostor_scores: s.impostor_scores.iter().map(|v| (v * 0.7).exp()).collect(),
        };
        let e = eer(&warped).unwrap();
        assert_abs_diff_eq!(base, e, epsilon = 1e-12);
    }

    #[test]
    fn zero_enrollment_map_gives_zero_llr() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let feats = Mat::from_fn(400, 2, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let ubm = train_ubm(&feats, 2, 5).unwrap().model;
        let adapted = map_adapt(&ubm, &Mat::zeros(0, 2), 16.0);
        let test = Mat::from_fn(30, 2, |r, c| (r as f64 * 0.1) - c as f64);
        let s = llr_score(&adapted, &ubm, &test).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn density_smoke_check_on_own_samples() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let feats = Mat::from_fn(500, 2, |r, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 0.5 + (r % 2) as f64 * 4.0
        });
        let model = train_ubm(&feats, 2, 10).unwrap().model;
        let mut sample_rng = ChaCha20Rng::seed_from_u64(42);
        let mut avg = 0.0;
        let n = 2000;
        for _ in 0..n {
            let x = model.sample(&mut sample_rng);
            let ld = model.log_density(&x);
            assert!(ld.is_finite());
            avg += ld;
        }
        avg /= n as f64;
        // Average log-density of own samples is the negative entropy
        // estimate: finite and in a sane range for this model.
        assert!(avg.is_finite() && avg < 0.0 && avg > -20.0, "avg {avg}");
    }
}
