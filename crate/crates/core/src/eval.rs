//! Objective metrics (CSED, cFSD) and MUSHRA statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::embed::{centroid, cosine, Embedder};
use crate::error::{Error, Result};

// ---------------------------------------------------------------- CSED

/// Mean cosine distance of each synthesized embedding to the centroid of the
/// reference embeddings.
pub fn csed(synth: &[Vec<f32>], reference: &[Vec<f32>]) -> Result<f64> {
    if synth.is_empty() || reference.is_empty() {
        return Err(Error::Invalid("CSED needs non-empty embedding sets".into()));
    }
    let c = centroid(reference)?;
    let mut total = 0.0;
    for e in synth {
        if e.len() != c.len() {
            return Err(Error::Shape("embedding dimension mismatch".into()));
        }
        let cos = cosine(e, &c);
        if !cos.is_finite() {
            return Err(Error::NonFinite("cosine of a zero embedding".into()));
        }
        total += 1.0 - cos.clamp(-1.0, 1.0);
    }
    Ok(total / synth.len() as f64)
}

// ------------------------------------------------------ linear algebra

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues and the row-major matrix whose
/// columns are the eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Shape(format!("expected {n}x{n} matrix")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            return Ok(((0..n).map(|i| m[i * n + i]).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::NoConvergence(JACOBI_MAX_SWEEPS))
}

/// Square root of a symmetric PSD matrix. Eigenvalues down to `-1e-8`
/// (relative to the largest) are clipped to zero.
pub fn sqrt_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (vals, vecs) = symmetric_eigen(a, n)?;
    let top = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut roots = Vec::with_capacity(n);
    for &l in &vals {
        if l < -1e-8 * top {
            return Err(Error::Invalid(format!("matrix is not PSD (eigenvalue {l})")));
        }
        roots.push(l.max(0.0).sqrt());
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| vecs[i * n + k] * roots[k] * vecs[j * n + k]).sum();
        }
    }
    Ok(out)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

// ------------------------------------------------------------- Fréchet

pub const SHRINKAGE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
}

impl GaussianFit {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d || d == 0 {
            return Err(Error::Shape(format!("covariance must be {d}x{d}")));
        }
        Ok(GaussianFit { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and covariance; `SHRINKAGE * I` is added when there are
    /// fewer than `dim + 1` samples.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Invalid("cannot fit a Gaussian to no samples".into()));
        };
        let d = first.len();
        let n = samples.len();
        let mut mean = vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(Error::Shape("feature dimension varies".into()));
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        if n > 1 {
            for s in samples {
                for i in 0..d {
                    let di = s[i] - mean[i];
                    for j in i..d {
                        cov[i * d + j] += di * (s[j] - mean[j]);
                    }
                }
            }
            for i in 0..d {
                for j in i..d {
                    let v = cov[i * d + j] / (n - 1) as f64;
                    cov[i * d + j] = v;
                    cov[j * d + i] = v;
                }
            }
        }
        if n < d + 1 {
            for i in 0..d {
                cov[i * d + i] += SHRINKAGE;
            }
        }
        GaussianFit::new(mean, cov)
    }
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Shape(format!("dimension {n} vs {}", b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let trace = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let ra = sqrt_psd(&a.cov, n)?;
    let mut inner = matmul(&matmul(&ra, &b.cov, n), &ra, n);
    // symmetrize rounding noise
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (inner[i * n + j] + inner[j * n + i]);
            inner[i * n + j] = s;
            inner[j * n + i] = s;
        }
    }
    let cross = trace(&sqrt_psd(&inner, n)?);
    let d = mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * cross;
    if d < -1e-6 {
        return Err(Error::NonFinite(format!("negative Fréchet distance {d}")));
    }
    Ok(d.max(0.0))
}

// ---------------------------------------------------------------- cFSD

/// Frame-level features for the Fréchet distance.
pub trait FeatureExtractor: Sync {
    fn features(&self, m: &MelSpectrogram) -> Result<Vec<Vec<f64>>>;
}

impl FeatureExtractor for Embedder<f32> {
    fn features(&self, m: &MelSpectrogram) -> Result<Vec<Vec<f64>>> {
        let f = self.frame_features(m)?;
        Ok((0..f.rows)
            .map(|r| f.row(r).iter().map(|&v| v as f64).collect())
            .collect())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CfsdReport {
    pub value: f64,
    pub pooled: bool,
    pub per_speaker: BTreeMap<String, f64>,
}

fn pool(ex: &dyn FeatureExtractor, mels: &[&MelSpectrogram]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for m in mels {
        out.extend(ex.features(m)?);
    }
    Ok(out)
}

/// Per-speaker Fréchet distances averaged over speakers, or a single
/// distance over everything when `pooled`.
pub fn cfsd(
    reference: &[(String, MelSpectrogram)],
    synth: &[(String, MelSpectrogram)],
    extractor: &dyn FeatureExtractor,
    pooled: bool,
) -> Result<CfsdReport> {
    if reference.is_empty() || synth.is_empty() {
        return Err(Error::Invalid("cFSD needs non-empty sets".into()));
    }
    if pooled {
        let r: Vec<&MelSpectrogram> = reference.iter().map(|x| &x.1).collect();
        let s: Vec<&MelSpectrogram> = synth.iter().map(|x| &x.1).collect();
        let value = frechet_distance(
            &GaussianFit::fit(&pool(extractor, &r)?)?,
            &GaussianFit::fit(&pool(extractor, &s)?)?,
        )?;
        return Ok(CfsdReport {
            value,
            pooled,
            per_speaker: BTreeMap::new(),
        });
    }
    fn group(set: &[(String, MelSpectrogram)]) -> BTreeMap<String, Vec<&MelSpectrogram>> {
        let mut g: BTreeMap<String, Vec<&MelSpectrogram>> = BTreeMap::new();
        for (s, m) in set {
            g.entry(s.clone()).or_default().push(m);
        }
        g
    }
    let (gr, gs) = (group(reference), group(synth));
    let rk: BTreeSet<&String> = gr.keys().collect();
    let sk: BTreeSet<&String> = gs.keys().collect();
    if rk != sk {
        return Err(Error::Invalid(format!(
            "speaker sets differ: reference {rk:?}, synthesized {sk:?}"
        )));
    }
    let speakers: Vec<&String> = rk.into_iter().collect();
    let dists: Vec<Result<f64>> = speakers
        .par_iter()
        .map(|s| {
            frechet_distance(
                &GaussianFit::fit(&pool(extractor, &gr[*s])?)?,
                &GaussianFit::fit(&pool(extractor, &gs[*s])?)?,
            )
        })
        .collect();
    let mut per_speaker = BTreeMap::new();
    for (s, d) in speakers.into_iter().zip(dists) {
        per_speaker.insert(s.clone(), d?);
    }
    let value = per_speaker.values().sum::<f64>() / per_speaker.len() as f64;
    Ok(CfsdReport {
        value,
        pooled,
        per_speaker,
    })
}

// ------------------------------------------------------------- MUSHRA

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MushraRecord {
    pub listener_id: String,
    pub system_id: String,
    pub utterance_id: String,
    pub score: f64,
}

pub fn validate_mushra(records: &[MushraRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !(0.0..=100.0).contains(&r.score) {
            return Err(Error::Invalid(format!(
                "score {} for ({}, {}, {}) is outside [0, 100]",
                r.score, r.listener_id, r.system_id, r.utterance_id
            )));
        }
        if !seen.insert((&r.listener_id, &r.system_id, &r.utterance_id)) {
            return Err(Error::Invalid(format!(
                "duplicate rating ({}, {}, {})",
                r.listener_id, r.system_id, r.utterance_id
            )));
        }
    }
    Ok(())
}

/// Read `listener_id,system_id,utterance_id,score` rows.
pub fn read_mushra_csv(path: impl AsRef<Path>) -> Result<Vec<MushraRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let headers = rdr.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: e.to_string(),
    })?;
    if headers != vec!["listener_id", "system_id", "utterance_id", "score"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "header must be listener_id,system_id,utterance_id,score".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<MushraRecord>().enumerate() {
        out.push(row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?);
    }
    validate_mushra(&out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemSummary {
    pub system_id: String,
    pub n: usize,
    pub mean: f64,
    /// 1.96 times the standard error of the mean.
    pub half_width: f64,
}

impl SystemSummary {
    pub fn formatted(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.half_width)
    }
}

/// Mean and normal-approximation 95% interval per system, sorted by id.
pub fn mushra_summary(records: &[MushraRecord]) -> Result<Vec<SystemSummary>> {
    if records.is_empty() {
        return Err(Error::Invalid("no MUSHRA ratings".into()));
    }
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry(&r.system_id).or_default().push(r.score);
    }
    Ok(by
        .into_iter()
        .map(|(s, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let half_width = if v.len() > 1 {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                1.96 * (var / n).sqrt()
            } else {
                0.0
            };
            SystemSummary {
                system_id: s.to_string(),
                n: v.len(),
                mean,
                half_width,
            }
        })
        .collect())
}

// ------------------------------------------------------------ t-test

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t cumulative distribution.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Zero spread with nonzero mean: infinite t, p set to 0.
    pub degenerate: bool,
}

/// Paired two-sided Student t-test on `x - y`.
pub fn paired_ttest(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} paired values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Invalid("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let df = nf - 1.0;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest { n, mean_diff: 0.0, t: 0.0, df, p: 1.0, degenerate: false });
    }
    if sd == 0.0 {
        return Ok(TTest {
            n,
            mean_diff: mean,
            t: mean.signum() * f64::INFINITY,
            df,
            p: 0.0,
            degenerate: true,
        });
    }
    let t = mean / (sd / nf.sqrt());
    let p = incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Ok(TTest { n, mean_diff: mean, t, df, p, degenerate: false })
}

/// Holm step-down: flags in the original order.
pub fn holm_bonferroni(p: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut reject = vec![false; m];
    for (i, &k) in order.iter().enumerate() {
        if p[k] <= alpha / (m - i) as f64 {
            reject[k] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub system_a: String,
    pub system_b: String,
    pub test: TTest,
    pub reject: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MushraReport {
    pub alpha: f64,
    pub systems: Vec<SystemSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Summaries plus all pairwise paired t-tests, Holm-corrected together.
/// Pairs are matched on (listener, utterance); unmatched ratings are dropped
/// from that comparison.
pub fn mushra_report(records: &[MushraRecord], alpha: f64) -> Result<MushraReport> {
    validate_mushra(records)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config("alpha must be in (0, 1)".into()));
    }
    let systems = mushra_summary(records)?;
    let mut by: BTreeMap<&str, BTreeMap<(&str, &str), f64>> = BTreeMap::new();
    for r in records {
        by.entry(&r.system_id)
            .or_default()
            .insert((&r.listener_id, &r.utterance_id), r.score);
    }
    let ids: Vec<&str> = by.keys().copied().collect();
    let mut tests = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let (a, b) = (&by[ids[i]], &by[ids[j]]);
            let (x, y): (Vec<f64>, Vec<f64>) = a
                .iter()
                .filter_map(|(k, &va)| b.get(k).map(|&vb| (va, vb)))
                .unzip();
            if x.len() < 2 {
                log::warn!("skipping {} vs {}: fewer than 2 paired ratings", ids[i], ids[j]);
                continue;
            }
            tests.push((ids[i].to_string(), ids[j].to_string(), paired_ttest(&x, &y)?));
        }
    }
    let flags = holm_bonferroni(&tests.iter().map(|t| t.2.p).collect::<Vec<_>>(), alpha)?;
    let comparisons = tests
        .into_iter()
        .zip(flags)
        .map(|((system_a, system_b, test), reject)| Comparison { system_a, system_b, test, reject })
        .collect();
    Ok(MushraReport { alpha, systems, comparisons })
}

impl MushraReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let w = self.systems.iter().map(|s| s.system_id.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        writeln!(out, "{:<w$}  {:>5}  {:>15}", "System", "n", "Score").unwrap();
        for s in &self.systems {
            writeln!(out, "{:<w$}  {:>5}  {:>15}", s.system_id, s.n, s.formatted()).unwrap();
        }
        if !self.comparisons.is_empty() {
            writeln!(out).unwrap();
            writeln!(out, "Paired t-tests, Holm-corrected at alpha = {}", self.alpha).unwrap();
            for c in &self.comparisons {
                writeln!(
                    out,
                    "{} vs {}: t = {:.3}, p = {:.4}{}{}",
                    c.system_a,
                    c.system_b,
                    c.test.t,
                    c.test.p,
                    if c.reject { "  significant" } else { "" },
                    if c.test.degenerate { "  (degenerate)" } else { "" },
                )
                .unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csed_examples() {
        let c = vec![0.6f32, 0.8];
        assert!(csed(&[c.clone()], &[c.clone()]).unwrap().abs() < 1e-7);
        assert!((csed(&[vec![0.8, -0.6]], &[c.clone()]).unwrap() - 1.0).abs() < 1e-7);
        let neg: Vec<f32> = c.iter().map(|v| -v).collect();
        assert!((csed(&[c.clone(), neg], &[c.clone()]).unwrap() - 1.0).abs() < 1e-7);
        assert!(csed(&[], &[c]).is_err());
    }

    fn g1(mu: f64, var: f64) -> GaussianFit {
        GaussianFit::new(vec![mu], vec![var]).unwrap()
    }

    #[test]
    fn one_dimensional_examples() {
        assert!((frechet_distance(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, v) = symmetric_eigen(&a, 3).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i * 3 + j] * v[j * 3 + k]).sum();
                assert!((av - vals[k] * v[i * 3 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shrinkage_applies_below_dim_plus_one() {
        let g = GaussianFit::fit(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(g.cov, vec![SHRINKAGE, 0.0, 0.0, SHRINKAGE]);
        let g = GaussianFit::fit(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!((g.cov[0] - 4.0 / 3.0).abs() < 1e-12);
    }

    fn rec(l: &str, s: &str, u: &str, score: f64) -> MushraRecord {
        MushraRecord {
            listener_id: l.into(),
            system_id: s.into(),
            utterance_id: u.into(),
            score,
        }
    }

    #[test]
    fn mushra_summary_examples() {
        let s = mushra_summary(&[rec("a", "x", "u", 50.0), rec("b", "x", "u", 50.0)]).unwrap();
        assert_eq!((s[0].mean, s[0].half_width), (50.0, 0.0));
        let s = mushra_summary(&[rec("a", "x", "u", 40.0), rec("b", "x", "u", 60.0)]).unwrap();
        assert_eq!(s[0].mean, 50.0);
        assert!((s[0].half_width - 19.6).abs() < 1e-12);
        assert_eq!(s[0].formatted(), "50.00 ± 19.60");
        assert!(mushra_summary(&[]).is_err());
    }

    #[test]
    fn mushra_validation() {
        assert!(validate_mushra(&[rec("a", "x", "u", 101.0)]).is_err());
        assert!(validate_mushra(&[rec("a", "x", "u", 1.0), rec("a", "x", "u", 2.0)]).is_err());
    }

    #[test]
    fn ttest_conventions() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(paired_ttest(&x, &x).unwrap().p, 1.0);
        let d = paired_ttest(&[2.0; 4], &[1.0; 4]).unwrap();
        assert!(d.degenerate && d.p == 0.0);
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn ttest_hand_example() {
        let t = paired_ttest(&[1.0, -1.0, 2.0, 0.0], &[0.0; 4]).unwrap();
        assert!((t.mean_diff - 0.5).abs() < 1e-15);
        assert!((t.t - 0.5 / (1.2909944487358056 / 2.0)).abs() < 1e-12);
        assert_eq!(t.df, 3.0);
        // t_3 has the closed-form CDF 1/2 + (atan(u) + u/(1+u^2)) / pi with u = t/sqrt(3)
        let u = t.t / 3f64.sqrt();
        let cdf = 0.5 + (u.atan() + u / (1.0 + u * u)) / std::f64::consts::PI;
        assert!((t.p - 2.0 * (1.0 - cdf)).abs() < 1e-12);
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_bonferroni(&[0.010, 0.040, 0.030], 0.05).unwrap(), vec![true, false, false]);
        assert_eq!(holm_bonferroni(&[0.0; 3], 0.05).unwrap(), vec![true; 3]);
        assert_eq!(holm_bonferroni(&[1.0; 3], 0.05).unwrap(), vec![false; 3]);
        assert!(holm_bonferroni(&[1.5], 0.05).is_err());
    }

    #[test]
    fn ln_gamma_integers() {
        let mut f = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - f.ln()).abs() < 1e-12, "{n}");
            f *= n as f64;
        }
    }
}
