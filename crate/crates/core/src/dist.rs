//! Watermark strength, Laplace fitting, KL divergences and the
//! maximum-entropy check behind the choice of a Laplace spreading sequence.
//!
//! All logarithms are natural; divergences are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::WatermarkKey;
use crate::model::ModelWeights;

pub const DEFAULT_BINS: usize = 64;

/// `γ = C σ_k / √2`, so that `Var(Laplace(0, γ)) = 2γ² = C² σ_k²`.
pub fn gamma_from_strength(c: f64, sigma_k: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) || !(sigma_k > 0.0 && sigma_k.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "strength C and sigma must be positive, got C = {c}, sigma = {sigma_k}"
        )));
    }
    Ok(c * sigma_k / std::f64::consts::SQRT_2)
}

/// Zero-location Laplace fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceFit {
    pub location: f64,
    pub scale: f64,
    pub n_samples: usize,
}

/// Maximum-likelihood scale with the location pinned at 0: the mean absolute
/// value.
pub fn laplace_mle(samples: &[f64]) -> Result<LaplaceFit> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("laplace_mle needs at least one sample"));
    }
    let scale = samples.iter().map(|x| x.abs()).sum::<f64>() / samples.len() as f64;
    if scale == 0.0 {
        return Err(Error::InvalidParameter("all samples are zero; Laplace scale undefined".into()));
    }
    Ok(LaplaceFit { location: 0.0, scale, n_samples: samples.len() })
}

/// `D(Laplace(0, γ) || Laplace(0, λ)) = ln(λ/γ) + γ/λ - 1`.
pub fn kl_laplace_closed_form(gamma: f64, lambda: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Laplace scales must be positive, got gamma = {gamma}, lambda = {lambda}"
        )));
    }
    Ok((lambda / gamma).ln() + gamma / lambda - 1.0)
}

/// Differential entropy of `Laplace(0, γ)`: `1 + ln(2γ)`.
pub fn laplace_entropy(gamma: f64) -> f64 {
    1.0 + (2.0 * gamma).ln()
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one sample).
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two populations binned on a shared equal-width grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts_wm: Vec<u64>,
    pub counts_non_wm: Vec<u64>,
}

/// Bins `p` and `q` over `[min, max]` of their union with `bins` equal-width
/// bins. The last bin is closed on the right.
pub fn shared_histogram(p: &[f64], q: &[f64], bins: usize) -> Result<Histogram> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyInput("histogram populations must be nonempty"));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    let (lo, hi) = p
        .iter()
        .chain(q)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();
    let bin_of = |x: f64| -> usize {
        if width == 0.0 {
            0
        } else {
            (((x - lo) / width) as usize).min(bins - 1)
        }
    };
    let count = |xs: &[f64]| {
        let mut c = vec![0u64; bins];
        for &x in xs {
            c[bin_of(x)] += 1;
        }
        c
    };
    Ok(Histogram { edges, counts_wm: count(p), counts_non_wm: count(q) })
}

/// Histogram estimate of `D(p || q)`. Empty `q` bins under nonzero `p` mass
/// receive `1 / (|p| + |q|)` and `q` is renormalised, which keeps the
/// estimate non-negative.
pub fn kl_empirical(p_samples: &[f64], q_samples: &[f64], bins: usize) -> Result<f64> {
    let hist = shared_histogram(p_samples, q_samples, bins)?;
    Ok(kl_from_counts(&hist.counts_wm, &hist.counts_non_wm))
}

fn kl_from_counts(p_counts: &[u64], q_counts: &[u64]) -> f64 {
    let np: u64 = p_counts.iter().sum();
    let nq: u64 = q_counts.iter().sum();
    let eps = 1.0 / (np + nq) as f64;
    let q: Vec<f64> = p_counts
        .iter()
        .zip(q_counts)
        .map(|(&cp, &cq)| if cp > 0 && cq == 0 { eps } else { cq as f64 / nq as f64 })
        .collect();
    let q_total: f64 = q.iter().sum();
    p_counts
        .iter()
        .zip(&q)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &qi)| {
            let pi = c as f64 / np as f64;
            pi * (pi / (qi / q_total)).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Zero-mean symmetric densities used as competitors to the Laplace law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SymmetricDensity {
    Laplace { scale: f64 },
    Gaussian { sigma: f64 },
    Uniform { half_width: f64 },
}

impl SymmetricDensity {
    /// Members of each family with `E|w| = gamma`.
    pub fn laplace_with_mean_abs(gamma: f64) -> Self {
        Self::Laplace { scale: gamma }
    }

    pub fn gaussian_with_mean_abs(gamma: f64) -> Self {
        Self::Gaussian { sigma: gamma * (std::f64::consts::PI / 2.0).sqrt() }
    }

    pub fn uniform_with_mean_abs(gamma: f64) -> Self {
        Self::Uniform { half_width: 2.0 * gamma }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Laplace { .. } => "laplace",
            Self::Gaussian { .. } => "gaussian",
            Self::Uniform { .. } => "uniform",
        }
    }

    /// `ln f(w)`; `-inf` outside the support.
    pub fn ln_pdf(&self, w: f64) -> f64 {
        match *self {
            Self::Laplace { scale } => -(2.0 * scale).ln() - w.abs() / scale,
            Self::Gaussian { sigma } => {
                -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - w * w / (2.0 * sigma * sigma)
            }
            Self::Uniform { half_width } => {
                if w.abs() <= half_width {
                    -(2.0 * half_width).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn pdf(&self, w: f64) -> f64 {
        self.ln_pdf(w).exp()
    }

    /// Upper integration limit on the positive half-line beyond which the
    /// density is negligible (or zero).
    fn upper_limit(&self) -> f64 {
        match *self {
            Self::Laplace { scale } => 60.0 * scale,
            Self::Gaussian { sigma } => 40.0 * sigma,
            Self::Uniform { half_width } => half_width,
        }
    }
}

const GRID_INTERVALS: usize = 100_000;

/// `2 ∫_0^upper g(w) dw` by composite Simpson, for even integrands.
fn integrate_symmetric(upper: f64, g: impl Fn(f64) -> f64) -> f64 {
    let n = GRID_INTERVALS;
    let h = upper / n as f64;
    let mut acc = g(0.0) + g(upper);
    for k in 1..n {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * g(h * k as f64);
    }
    2.0 * acc * h / 3.0
}

/// `f ln(f/g)` with the `0 ln 0 = 0` convention.
fn kl_integrand(f: &SymmetricDensity, g: &SymmetricDensity, w: f64) -> f64 {
    let ln_f = f.ln_pdf(w);
    if ln_f == f64::NEG_INFINITY {
        return 0.0;
    }
    let pf = ln_f.exp();
    if pf == 0.0 {
        0.0
    } else {
        pf * (ln_f - g.ln_pdf(w))
    }
}

/// Grid integral of `E|w|` under `f`.
pub fn mean_abs_numeric(f: &SymmetricDensity) -> f64 {
    integrate_symmetric(f.upper_limit(), |w| f.pdf(w) * w)
}

/// Grid integral of the differential entropy `-∫ f ln f`.
pub fn entropy_numeric(f: &SymmetricDensity) -> f64 {
    integrate_symmetric(f.upper_limit(), |w| {
        let ln_f = f.ln_pdf(w);
        let pf = ln_f.exp();
        if pf == 0.0 {
            0.0
        } else {
            -pf * ln_f
        }
    })
}

/// Grid integral of `D(f || g)`. `g` must cover the support of `f`.
pub fn kl_numeric(f: &SymmetricDensity, g: &SymmetricDensity) -> f64 {
    integrate_symmetric(f.upper_limit(), |w| kl_integrand(f, g, w))
}

/// The default competitor family with `E|w| = gamma`.
pub fn default_family(gamma: f64) -> Vec<SymmetricDensity> {
    vec![
        SymmetricDensity::laplace_with_mean_abs(gamma),
        SymmetricDensity::gaussian_with_mean_abs(gamma),
        SymmetricDensity::uniform_with_mean_abs(gamma),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub density: SymmetricDensity,
    pub mean_abs: f64,
    pub entropy: f64,
    /// `D(candidate || Laplace(0, λ))` by grid integration.
    pub kl_to_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub lambda: f64,
    pub gamma: f64,
    pub candidates: Vec<CandidateResult>,
    /// Closed-form `D(Laplace(0, γ) || Laplace(0, λ))`.
    pub laplace_kl_closed_form: f64,
    /// The Laplace candidate has strictly the smallest divergence.
    pub laplace_minimal: bool,
    /// Every other candidate has entropy at most that of the Laplace one.
    pub laplace_max_entropy: bool,
}

impl OptimalityReport {
    pub fn holds(&self) -> bool {
        self.laplace_minimal && self.laplace_max_entropy
    }

    pub fn laplace(&self) -> &CandidateResult {
        self.candidates
            .iter()
            .find(|c| matches!(c.density, SymmetricDensity::Laplace { .. }))
            .expect("verified to be present")
    }
}

pub const MEAN_ABS_TOLERANCE: f64 = 1e-6;

/// Among symmetric densities with `E|w| = γ`, checks numerically that
/// `Laplace(0, γ)` minimises the divergence to `Laplace(0, λ)` and maximises
/// the differential entropy.
pub fn verify_laplace_optimality(lambda: f64, gamma: f64, family: &[SymmetricDensity]) -> Result<OptimalityReport> {
    let laplace_kl_closed_form = kl_laplace_closed_form(gamma, lambda)?;
    let reference = SymmetricDensity::Laplace { scale: lambda };
    let mut candidates = Vec::with_capacity(family.len());
    for density in family {
        let mean_abs = mean_abs_numeric(density);
        if (mean_abs - gamma).abs() > MEAN_ABS_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "{} candidate has E|w| = {mean_abs}, expected {gamma}",
                density.name()
            )));
        }
        candidates.push(CandidateResult {
            density: *density,
            mean_abs,
            entropy: entropy_numeric(density),
            kl_to_reference: kl_numeric(density, &reference),
        });
    }
    let laplace = candidates
        .iter()
        .find(|c| matches!(c.density, SymmetricDensity::Laplace { scale } if (scale - gamma).abs() <= MEAN_ABS_TOLERANCE))
        .ok_or_else(|| Error::InvalidParameter(format!("family lacks Laplace(0, {gamma})")))?
        .clone();
    let others = candidates.iter().filter(|c| !matches!(c.density, SymmetricDensity::Laplace { .. }));
    let laplace_minimal = others.clone().all(|c| laplace.kl_to_reference < c.kl_to_reference);
    let laplace_max_entropy = others.clone().all(|c| c.entropy <= laplace.entropy);
    Ok(OptimalityReport { lambda, gamma, candidates, laplace_kl_closed_form, laplace_minimal, laplace_max_entropy })
}

/// Watermarked vs non-watermarked statistics of one host layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerIndistinguishability {
    pub layer: String,
    pub std_wm: f64,
    pub std_non_wm: f64,
    pub kl_empirical_nats: f64,
    pub kl_closed_form_nats: f64,
    pub histogram: Histogram,
}

impl LayerIndistinguishability {
    pub fn std_ratio(&self) -> f64 {
        self.std_wm / self.std_non_wm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishabilityReport {
    pub layers: Vec<LayerIndistinguishability>,
    /// Host layers with fewer than two non-watermarked weights.
    #[serde(default)]
    pub skipped_layers: Vec<String>,
}

/// Splits every host layer into watermarked / non-watermarked populations
/// according to `key` and compares them.
pub fn indistinguishability_report(
    model: &ModelWeights,
    key: &WatermarkKey,
    bins: usize,
) -> Result<IndistinguishabilityReport> {
    if key.layers.iter().all(|l| l.indices.is_empty()) {
        return Err(Error::EmptyInput("key has no watermarked weights"));
    }
    key.resolve(model)?;
    let mut layers = Vec::new();
    let mut skipped_layers = Vec::new();
    for key_layer in &key.layers {
        let layer = model.layer(&key_layer.name).ok_or_else(|| Error::UnknownLayer(key_layer.name.clone()))?;
        let mut is_host = vec![false; layer.weight_count()];
        for &i in &key_layer.indices {
            is_host[i] = true;
        }
        let (mut wm, mut non_wm) = (Vec::new(), Vec::new());
        for (&w, &host) in layer.weights.iter().zip(&is_host) {
            if host { &mut wm } else { &mut non_wm }.push(f64::from(w));
        }
        if wm.is_empty() {
            continue;
        }
        if non_wm.len() < 2 {
            skipped_layers.push(key_layer.name.clone());
            continue;
        }
        let histogram = shared_histogram(&wm, &non_wm, bins)?;
        let kl_empirical_nats = kl_from_counts(&histogram.counts_wm, &histogram.counts_non_wm);
        let kl_closed_form_nats = kl_laplace_closed_form(laplace_mle(&wm)?.scale, laplace_mle(&non_wm)?.scale)?;
        layers.push(LayerIndistinguishability {
            layer: key_layer.name.clone(),
            std_wm: mean_std(&wm).1,
            std_non_wm: mean_std(&non_wm).1,
            kl_empirical_nats,
            kl_closed_form_nats,
            histogram,
        });
    }
    Ok(IndistinguishabilityReport { layers, skipped_layers })
}
