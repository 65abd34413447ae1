//! Allele-frequency observations and the K-component mixture model fit by EM.
//!
//! Heterogeneous sites contribute their allele percentages as observations;
//! a binomial or Gaussian mixture over those percentages estimates the
//! strain proportions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::math::{ln_binomial, log_sum_exp};
use crate::pileup::{FilterConfig, SampleProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Density family of the mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Binomial,
    Gaussian,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::Binomial => write!(f, "binomial"),
            ModelFamily::Gaussian => write!(f, "gaussian"),
        }
    }
}

/// Allele percentages collected from heterogeneous sites, with the source
/// position and depth of each value.
#[derive(Debug, Clone, Default)]
pub struct FrequencyObservations {
    /// Percentages in (0, 100), ordered by position (values from one site
    /// are adjacent, largest first).
    pub values: Vec<f64>,
    /// Source position of each value.
    pub site_index: Vec<usize>,
    /// Depth of the source site for each value.
    pub depths: Vec<u32>,
}

impl FrequencyObservations {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One mixture component on the percentage scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
}

/// A fitted mixture model. Components are sorted by descending mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub family: ModelFamily,
    pub components: Vec<Component>,
}

impl MixtureModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }
}

/// Diagnostics of one EM run.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub model: MixtureModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Log-likelihood after each E-step; non-decreasing by construction.
    pub ll_trace: Vec<f64>,
}

/// Extract the mixture observations from a filtered profile: every
/// heterogeneous site emits its nonzero allele percentages at or above the
/// noise threshold (both alleles of a biallelic site, all qualifying alleles
/// of a multi-allelic site). Zero percentages are never emitted.
pub fn build_observations(
    profile: &SampleProfile,
    config: &FilterConfig,
) -> Result<FrequencyObservations> {
    let mut obs = FrequencyObservations::default();
    for site in &profile.filtered_sites {
        if !site.is_heterogeneous() {
            continue;
        }
        for &b in site.ranked_bases().iter() {
            let pct = site.percent[b];
            if pct > 0.0 && pct >= config.noise_threshold {
                obs.values.push(pct);
                obs.site_index.push(site.position);
                obs.depths.push(site.depth);
            }
        }
    }
    if obs.is_empty() {
        return Err(DemixError::NoVariantEvidence);
    }
    Ok(obs)
}

const WEIGHT_COLLAPSE: f64 = 1e-6;
const SIGMA_COLLAPSE: f64 = 1e-3;
const MAX_RESTARTS: usize = 5;
const Q_CLAMP: f64 = 1e-9;

fn ln_density(family: ModelFamily, comp: &Component, value: f64, depth: u32) -> f64 {
    match family {
        ModelFamily::Gaussian => {
            let z = (value - comp.mu) / comp.sigma;
            -comp.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
        }
        ModelFamily::Binomial => {
            let d = depth as u64;
            let s = ((value * depth as f64 / 100.0).round() as u64).min(d);
            let q = (comp.mu / 100.0).clamp(Q_CLAMP, 1.0 - Q_CLAMP);
            ln_binomial(d, s) + s as f64 * q.ln() + (d - s) as f64 * (1.0 - q).ln()
        }
    }
}

/// Per-observation responsibilities under the model; rows sum to 1.
pub fn responsibilities(model: &MixtureModel, obs: &FrequencyObservations) -> Vec<Vec<f64>> {
    e_step(model, obs).0
}

fn e_step(model: &MixtureModel, obs: &FrequencyObservations) -> (Vec<Vec<f64>>, f64) {
    let k = model.k();
    let mut gamma = vec![vec![0.0; k]; obs.len()];
    let mut ll = 0.0;
    let mut terms = vec![0.0; k];
    for (n, row) in gamma.iter_mut().enumerate() {
        for (j, comp) in model.components.iter().enumerate() {
            terms[j] = comp.weight.ln()
                + ln_density(model.family, comp, obs.values[n], obs.depths[n]);
        }
        let lse = log_sum_exp(&terms);
        ll += lse;
        for (g, term) in row.iter_mut().zip(&terms) {
            *g = (term - lse).exp();
        }
    }
    (gamma, ll)
}

fn m_step(
    family: ModelFamily,
    obs: &FrequencyObservations,
    gamma: &[Vec<f64>],
    k: usize,
) -> Vec<Component> {
    let n = obs.len() as f64;
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = gamma.iter().map(|g| g[j]).sum();
        let weight = nk / n;
        match family {
            ModelFamily::Gaussian => {
                let mu: f64 = gamma
                    .iter()
                    .zip(&obs.values)
                    .map(|(g, &x)| g[j] * x)
                    .sum::<f64>()
                    / nk;
                let var: f64 = gamma
                    .iter()
                    .zip(&obs.values)
                    .map(|(g, &x)| g[j] * (x - mu) * (x - mu))
                    .sum::<f64>()
                    / nk;
                out.push(Component {
                    mu,
                    sigma: var.sqrt(),
                    weight,
                });
            }
            ModelFamily::Binomial => {
                let mut successes = 0.0;
                let mut trials = 0.0;
                for (g, (&x, &d)) in gamma.iter().zip(obs.values.iter().zip(obs.depths.iter())) {
                    let s = (x * d as f64 / 100.0).round();
                    successes += g[j] * s;
                    trials += g[j] * d as f64;
                }
                let q = (successes / trials).clamp(Q_CLAMP, 1.0 - Q_CLAMP);
                let mean_depth = trials / nk;
                out.push(Component {
                    mu: 100.0 * q,
                    // sigma is derived from the binomial variance at the
                    // weighted mean depth, not a free parameter.
                    sigma: 100.0 * (q * (1.0 - q) / mean_depth).sqrt(),
                    weight,
                });
            }
        }
    }
    out
}

fn collapsed(family: ModelFamily, components: &[Component]) -> bool {
    components.iter().any(|c| {
        c.weight < WEIGHT_COLLAPSE
            || (family == ModelFamily::Gaussian && c.sigma < SIGMA_COLLAPSE)
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let t = q * (sorted.len() - 1) as f64;
    let lo = t.floor() as usize;
    let hi = t.ceil() as usize;
    let frac = t - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Run EM from an explicit initialization. Fails with a non-convergence
/// error when a component collapses.
pub fn em_fit_with_init(
    obs: &FrequencyObservations,
    init: Vec<Component>,
    family: ModelFamily,
    tol: f64,
    max_iter: usize,
) -> Result<EmOutcome> {
    let k = init.len();
    let mut model = MixtureModel {
        family,
        components: init,
    };
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        let (gamma, ll) = e_step(&model, obs);
        let converged = trace
            .last()
            .is_some_and(|&prev| (ll - prev).abs() < tol);
        trace.push(ll);
        if converged || iterations >= max_iter {
            break;
        }
        model.components = m_step(family, obs, &gamma, k);
        if collapsed(family, &model.components) {
            return Err(DemixError::NonConvergence {
                message: "mixture component collapsed".into(),
                best: model.components.iter().map(|c| c.mu).collect(),
            });
        }
        iterations += 1;
    }
    model
        .components
        .sort_by(|a, b| b.mu.partial_cmp(&a.mu).unwrap().then(b.weight.partial_cmp(&a.weight).unwrap()));
    let log_likelihood = *trace.last().unwrap();
    Ok(EmOutcome {
        model,
        log_likelihood,
        iterations,
        restarts: 0,
        ll_trace: trace,
    })
}

/// Fit a K-component mixture by EM.
///
/// Initial means are evenly spaced quantiles of the observations, perturbed
/// deterministically from the seed. A collapsed component triggers a restart
/// with a fresh perturbation, up to five times.
pub fn em_fit(
    obs: &FrequencyObservations,
    k: usize,
    family: ModelFamily,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EmOutcome> {
    if k == 0 {
        return Err(DemixError::InvalidInput("K must be at least 1".into()));
    }
    let mut sorted = obs.values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(DemixError::InvalidInput(format!(
            "need at least {k} distinct observation values, found {}",
            distinct.len()
        )));
    }
    let spread = (sorted[sorted.len() - 1] - sorted[0]).max(1.0);
    let sigma0 = (spread / (2.0 * k as f64)).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for restart in 0..=MAX_RESTARTS {
        let jitter_scale = spread / (20.0 * k as f64) * (1.0 + restart as f64);
        let init: Vec<Component> = (0..k)
            .map(|j| {
                let q = (j as f64 + 0.5) / k as f64;
                let jitter = (rng.gen::<f64>() - 0.5) * 2.0 * jitter_scale;
                Component {
                    mu: (quantile(&sorted, q) + jitter).clamp(0.5, 99.5),
                    sigma: sigma0,
                    weight: 1.0 / k as f64,
                }
            })
            .collect();
        match em_fit_with_init(obs, init, family, tol, max_iter) {
            Ok(mut outcome) => {
                outcome.restarts = restart;
                return Ok(outcome);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// How one strain proportion was derived from the fitted components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPair {
    /// Component whose mean estimates the strain proportion.
    pub primary: usize,
    /// Complementary component (mean near 100 - primary), when paired.
    pub complement: Option<usize>,
    /// Proportion estimate before normalization, in [0, 1].
    pub raw_proportion: f64,
}

/// Strain proportions derived from a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionEstimate {
    /// Normalized to sum 1, descending.
    pub proportions: Vec<f64>,
    pub pairing: Vec<ComponentPair>,
    pub warnings: Vec<String>,
}

const PAIR_TOLERANCE: f64 = 15.0;

/// Derive strain proportions from the fitted components.
///
/// With K == n_strains the means are read directly as proportions. With
/// K == 2 * n_strains the components are greedily matched into complement
/// pairs (mean sums closest to 100); each pair yields the average of its
/// strain-side mean and 100 minus its complement mean. Which side of a pair
/// is the strain's own cluster is chosen globally so the raw proportions
/// sum closest to 100.
#[allow(clippy::needless_range_loop)]
pub fn proportions_from_model(model: &MixtureModel, n_strains: usize) -> Result<ProportionEstimate> {
    let k = model.k();
    if n_strains == 0 {
        return Err(DemixError::InvalidInput("n_strains must be at least 1".into()));
    }
    if k == n_strains {
        return Ok(direct_estimate(model, Vec::new()));
    }
    if k != 2 * n_strains {
        return Err(DemixError::InvalidInput(format!(
            "model has {k} components; expected {n_strains} or {}",
            2 * n_strains
        )));
    }

    // Greedy complement pairing.
    let mut used = vec![false; k];
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n_strains);
    for _ in 0..n_strains {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..k {
            if used[i] {
                continue;
            }
            for j in (i + 1)..k {
                if used[j] {
                    continue;
                }
                let delta = (model.components[i].mu + model.components[j].mu - 100.0).abs();
                if best.is_none_or(|(d, _, _)| delta < d) {
                    best = Some((delta, i, j));
                }
            }
        }
        let (delta, i, j) = best.expect("k >= 2 components remain");
        if delta > PAIR_TOLERANCE {
            let warning = format!(
                "components {:.1} and {:.1} sum to {:.1}; no complement pairing within \u{00b1}{PAIR_TOLERANCE} of 100, falling back to direct normalization",
                model.components[i].mu,
                model.components[j].mu,
                model.components[i].mu + model.components[j].mu,
            );
            return Ok(direct_estimate(model, vec![warning]));
        }
        used[i] = true;
        used[j] = true;
        pairs.push((i, j));
    }

    // Each pair estimates some strain proportion q twice: as the strain-side
    // mean and as 100 minus the complement mean. The orientation (which side
    // is the strain's own cluster) is resolved globally: raw proportions of
    // all strains should sum to about 100.
    let candidates: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(i, j)| {
            let (lo, hi) = if model.components[i].mu <= model.components[j].mu {
                (model.components[i].mu, model.components[j].mu)
            } else {
                (model.components[j].mu, model.components[i].mu)
            };
            let q_low = (lo + (100.0 - hi)) / 2.0;
            (q_low, 100.0 - q_low)
        })
        .collect();
    let mut best_mask = 0usize;
    let mut best_delta = f64::INFINITY;
    for mask in 0..(1usize << pairs.len()) {
        let total: f64 = candidates
            .iter()
            .enumerate()
            .map(|(idx, &(lo, hi))| if mask & (1 << idx) != 0 { hi } else { lo })
            .sum();
        let delta = (total - 100.0).abs();
        if delta < best_delta {
            best_delta = delta;
            best_mask = mask;
        }
    }

    let mut pairing: Vec<ComponentPair> = pairs
        .iter()
        .enumerate()
        .map(|(idx, &(i, j))| {
            let take_high = best_mask & (1 << idx) != 0;
            let (lo_idx, hi_idx) = if model.components[i].mu <= model.components[j].mu {
                (i, j)
            } else {
                (j, i)
            };
            let raw = if take_high {
                candidates[idx].1
            } else {
                candidates[idx].0
            } / 100.0;
            let (primary, complement) = if take_high {
                (hi_idx, lo_idx)
            } else {
                (lo_idx, hi_idx)
            };
            ComponentPair {
                primary,
                complement: Some(complement),
                raw_proportion: raw,
            }
        })
        .collect();
    pairing.sort_by(|a, b| b.raw_proportion.partial_cmp(&a.raw_proportion).unwrap());
    let total: f64 = pairing.iter().map(|p| p.raw_proportion).sum();
    let proportions: Vec<f64> = pairing.iter().map(|p| p.raw_proportion / total).collect();
    Ok(ProportionEstimate {
        proportions,
        pairing,
        warnings: Vec::new(),
    })
}

fn direct_estimate(model: &MixtureModel, warnings: Vec<String>) -> ProportionEstimate {
    let total: f64 = model.components.iter().map(|c| c.mu).sum();
    // Components are already sorted descending by mean.
    let pairing: Vec<ComponentPair> = model
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| ComponentPair {
            primary: i,
            complement: None,
            raw_proportion: c.mu / total,
        })
        .collect();
    ProportionEstimate {
        proportions: pairing.iter().map(|p| p.raw_proportion).collect(),
        pairing,
        warnings,
    }
}

/// The allele percentages one strain's reads can produce: its own frequency
/// cluster plus, for every other strain, the complement cluster its reads
/// show when they carry the shared base at that strain's sites.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainComponentSet {
    /// Prior probability that a read belongs to this strain.
    pub prior: f64,
    /// Component weights are normalized within the set.
    pub components: Vec<Component>,
}

/// Per-strain densities for read assignment, with means normalized so the
/// component geometry is coherent (complement pairs sum to 100, or direct
/// means sum to 100).
#[derive(Debug, Clone, PartialEq)]
pub struct StrainModel {
    pub family: ModelFamily,
    pub strains: Vec<StrainComponentSet>,
}

impl StrainModel {
    pub fn n_strains(&self) -> usize {
        self.strains.len()
    }

    /// One singleton set per component; priors are the component weights.
    pub fn from_mixture(model: &MixtureModel) -> StrainModel {
        let total_mu: f64 = model.components.iter().map(|c| c.mu).sum();
        let scale = 100.0 / total_mu;
        StrainModel {
            family: model.family,
            strains: model
                .components
                .iter()
                .map(|c| StrainComponentSet {
                    prior: c.weight,
                    components: vec![Component {
                        mu: c.mu * scale,
                        sigma: c.sigma * scale,
                        weight: 1.0,
                    }],
                })
                .collect(),
        }
    }
}

/// Build the per-strain densities used for read assignment.
///
/// For a direct estimate each fitted component stands alone for its strain.
/// For a complement-paired estimate, strain k's set holds its own cluster
/// plus the complement cluster of every other strain, with the fitted
/// weights renormalized inside the set and the strain proportion as prior.
/// With two strains the minor's complement is the major's own cluster, so
/// both forms coincide.
pub fn strain_assignment_model(model: &MixtureModel, estimate: &ProportionEstimate) -> StrainModel {
    if estimate.pairing.iter().all(|p| p.complement.is_none()) {
        return StrainModel::from_mixture(model);
    }
    let k = model.k();
    let total_mu: f64 = model.components.iter().map(|c| c.mu).sum();
    // Scale means so each complement pair sums to 100.
    let scale = (50.0 * k as f64) / total_mu;
    let scaled: Vec<Component> = model
        .components
        .iter()
        .map(|c| Component {
            mu: c.mu * scale,
            sigma: c.sigma * scale,
            weight: c.weight,
        })
        .collect();
    let strains = estimate
        .pairing
        .iter()
        .zip(&estimate.proportions)
        .map(|(pair, &prop)| {
            let mut components = vec![scaled[pair.primary]];
            for other in &estimate.pairing {
                if other.primary != pair.primary {
                    if let Some(complement) = other.complement {
                        components.push(scaled[complement]);
                    }
                }
            }
            let total_weight: f64 = components.iter().map(|c| c.weight).sum();
            for c in &mut components {
                c.weight /= total_weight;
            }
            StrainComponentSet {
                prior: prop,
                components,
            }
        })
        .collect();
    StrainModel {
        family: model.family,
        strains,
    }
}

/// Write the responsibility table: observation value then one column per
/// component.
pub fn write_responsibility_tsv<W: Write>(
    writer: &mut W,
    obs: &FrequencyObservations,
    model: &MixtureModel,
) -> Result<()> {
    let gamma = responsibilities(model, obs);
    write!(writer, "value")?;
    for j in 0..model.k() {
        write!(writer, "\tresp_{j}")?;
    }
    writeln!(writer)?;
    for (n, &value) in obs.values.iter().enumerate() {
        write!(writer, "{value:.4}")?;
        for g in &gamma[n] {
            write!(writer, "\t{g:.6}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}
