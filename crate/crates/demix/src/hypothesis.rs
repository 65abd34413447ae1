//! Single-strain vs two-strain likelihoods and the likelihood-ratio test.
//!
//! Under the null hypothesis every site carries one true base and reads
//! disagree only through sequencing error; under the alternative two strains
//! at proportions p and 1-p contribute the major and minor bases. Both
//! likelihoods are maximized over bounded parameters and compared with a
//! chi-squared(1) threshold.

use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::math::{chi2_quantile_1df, golden_section_max, ln_binomial, ln_trinomial};
use crate::pileup::{SampleProfile, SiteFeature};

/// Lower bound for error-rate parameters.
pub const EPSILON_MIN: f64 = 1e-6;
/// Upper bound for error-rate parameters (just inside 1/3).
pub const EPSILON_MAX: f64 = 1.0 / 3.0 - 1e-6;
/// Upper bound for the major-strain proportion during fitting.
pub const P_MAX: f64 = 1.0 - 1e-6;
/// Convergence tolerance on fitted parameters.
const FIT_TOL: f64 = 1e-8;
/// Iteration cap for the bounded optimizers.
const FIT_MAX_ITER: usize = 500;
/// Multi-start initial values for the major proportion.
const P_STARTS: [f64; 4] = [0.55, 0.70, 0.85, 0.95];

/// Per-site counts ordered by frequency: most frequent base, second most
/// frequent base, and everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteCounts {
    pub depth: u32,
    /// Count of the most frequent base (the k_i of the null likelihood).
    pub n_major: u32,
    /// Count of the second most frequent base.
    pub n_minor: u32,
    /// Count of the remaining bases.
    pub n_error: u32,
}

impl SiteCounts {
    /// k_i: reads carrying the most frequent base.
    pub fn k_major(&self) -> u32 {
        self.n_major
    }
}

/// Rank a site's counts; ties between bases break by the fixed order
/// A < C < G < T.
pub fn site_counts(site: &SiteFeature) -> SiteCounts {
    debug_assert!(site.depth > 0, "site_counts requires depth > 0");
    let ranked = site.ranked_bases();
    let n_major = site.counts[ranked[0]];
    let n_minor = site.counts[ranked[1]];
    SiteCounts {
        depth: site.depth,
        n_major,
        n_minor,
        n_error: site.depth - n_major - n_minor,
    }
}

/// Outcome of the likelihood-ratio test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Call {
    Pure,
    Mixed,
}

impl std::fmt::Display for Call {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Call::Pure => write!(f, "pure"),
            Call::Mixed => write!(f, "mixed"),
        }
    }
}

/// Fitted parameters, log-likelihoods, and the test decision.
#[derive(Debug, Clone)]
pub struct HypothesisResult {
    pub epsilon0: f64,
    pub p: f64,
    pub epsilon1: f64,
    pub log_l0: f64,
    pub log_l1: f64,
    /// -2 (log L0 - log L1); may be negative when the null fits better.
    pub lr_statistic: f64,
    pub threshold_c: f64,
    pub alpha: f64,
    pub call: Call,
}

/// Sufficient statistics of the profile for both likelihoods. Both are
/// linear in the per-site counts, so fitting never has to rescan the sites.
#[derive(Debug, Clone, Copy)]
struct LikelihoodStats {
    sum_ln_binom: f64,
    sum_ln_trinom: f64,
    sum_depth: f64,
    sum_major: f64,
    sum_minor: f64,
    sum_error: f64,
}

impl LikelihoodStats {
    fn from_sites(sites: &[SiteFeature]) -> Self {
        let mut stats = LikelihoodStats {
            sum_ln_binom: 0.0,
            sum_ln_trinom: 0.0,
            sum_depth: 0.0,
            sum_major: 0.0,
            sum_minor: 0.0,
            sum_error: 0.0,
        };
        for site in sites {
            let c = site_counts(site);
            stats.sum_ln_binom += ln_binomial(c.depth as u64, c.n_major as u64);
            stats.sum_ln_trinom += ln_trinomial(
                c.depth as u64,
                c.n_major as u64,
                c.n_minor as u64,
                c.n_error as u64,
            );
            stats.sum_depth += c.depth as f64;
            stats.sum_major += c.n_major as f64;
            stats.sum_minor += c.n_minor as f64;
            stats.sum_error += c.n_error as f64;
        }
        stats
    }

    fn log_l0(&self, epsilon0: f64) -> f64 {
        self.sum_ln_binom
            + (self.sum_depth - self.sum_major) * epsilon0.ln()
            + self.sum_major * (1.0 - 3.0 * epsilon0).ln()
    }

    fn log_l1(&self, p: f64, epsilon1: f64) -> f64 {
        let p_major = p * (1.0 - 3.0 * epsilon1) + (1.0 - p) * epsilon1;
        let p_minor = (1.0 - p) * (1.0 - 3.0 * epsilon1) + p * epsilon1;
        let mut ll = self.sum_ln_trinom
            + self.sum_major * p_major.ln()
            + self.sum_minor * p_minor.ln();
        // With no residual-base reads the error term contributes exactly 0.
        if self.sum_error > 0.0 {
            ll += self.sum_error * epsilon1.ln();
        }
        ll
    }
}

fn check_epsilon(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0 / 3.0) {
        return Err(DemixError::Domain(format!(
            "{name} must lie in (0, 1/3), got {value}"
        )));
    }
    Ok(())
}

fn check_nonempty(profile: &SampleProfile) -> Result<()> {
    if profile.filtered_sites.is_empty() {
        return Err(DemixError::InvalidInput(
            "profile has no filtered sites".into(),
        ));
    }
    Ok(())
}

/// Log-likelihood of the profile under the single-strain hypothesis.
pub fn log_likelihood_h0(profile: &SampleProfile, epsilon0: f64) -> Result<f64> {
    check_epsilon("epsilon0", epsilon0)?;
    check_nonempty(profile)?;
    Ok(LikelihoodStats::from_sites(&profile.filtered_sites).log_l0(epsilon0))
}

/// Log-likelihood of the profile under the two-strain hypothesis.
pub fn log_likelihood_h1(profile: &SampleProfile, p: f64, epsilon1: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&p) {
        return Err(DemixError::Domain(format!(
            "p must lie in [0.5, 1], got {p}"
        )));
    }
    check_epsilon("epsilon1", epsilon1)?;
    check_nonempty(profile)?;
    Ok(LikelihoodStats::from_sites(&profile.filtered_sites).log_l1(p, epsilon1))
}

/// Per-site log-likelihood term of the two-strain hypothesis, exposed for
/// the exhaustive probability checks.
pub fn site_log_likelihood_h1(counts: &SiteCounts, p: f64, epsilon1: f64) -> f64 {
    let p_major = p * (1.0 - 3.0 * epsilon1) + (1.0 - p) * epsilon1;
    let p_minor = (1.0 - p) * (1.0 - 3.0 * epsilon1) + p * epsilon1;
    let mut ll = ln_trinomial(
        counts.depth as u64,
        counts.n_major as u64,
        counts.n_minor as u64,
        counts.n_error as u64,
    ) + counts.n_major as f64 * p_major.ln()
        + counts.n_minor as f64 * p_minor.ln();
    if counts.n_error > 0 {
        ll += counts.n_error as f64 * epsilon1.ln();
    }
    ll
}

/// Maximum-likelihood estimate of the null error rate.
pub fn fit_h0(profile: &SampleProfile) -> Result<f64> {
    check_nonempty(profile)?;
    let stats = LikelihoodStats::from_sites(&profile.filtered_sites);
    let m = golden_section_max(
        |e| stats.log_l0(e),
        EPSILON_MIN,
        EPSILON_MAX,
        FIT_TOL,
        FIT_MAX_ITER,
    )?;
    Ok(m.x)
}

/// Maximum-likelihood estimate of (p, epsilon1) under the two-strain
/// hypothesis: coordinate ascent with golden-section line searches,
/// multi-started over several initial proportions.
pub fn fit_h1(profile: &SampleProfile) -> Result<(f64, f64)> {
    check_nonempty(profile)?;
    let stats = LikelihoodStats::from_sites(&profile.filtered_sites);
    let mut best: Option<(f64, f64, f64)> = None;
    for &p_start in &P_STARTS {
        let mut p = p_start;
        let mut eps = 0.01;
        for _ in 0..FIT_MAX_ITER {
            let eps_next =
                golden_section_max(|e| stats.log_l1(p, e), EPSILON_MIN, EPSILON_MAX, FIT_TOL, FIT_MAX_ITER)?
                    .x;
            let p_next =
                golden_section_max(|q| stats.log_l1(q, eps_next), 0.5, P_MAX, FIT_TOL, FIT_MAX_ITER)?.x;
            let moved = (p_next - p).abs().max((eps_next - eps).abs());
            p = p_next;
            eps = eps_next;
            if moved < FIT_TOL {
                break;
            }
        }
        let ll = stats.log_l1(p, eps);
        if best.is_none_or(|(_, _, b)| ll > b) {
            best = Some((p, eps, ll));
        }
    }
    let (p, eps, _) = best.expect("multi-start list is non-empty");
    Ok((p, eps))
}

/// Upper-tail chi-squared(1) quantile used as the test threshold.
pub fn chi2_quantile(alpha: f64) -> Result<f64> {
    chi2_quantile_1df(alpha)
}

/// Fit both hypotheses and decide pure vs mixed at significance `alpha`.
pub fn likelihood_ratio_test(profile: &SampleProfile, alpha: f64) -> Result<HypothesisResult> {
    check_nonempty(profile)?;
    let threshold_c = chi2_quantile(alpha)?;
    let epsilon0 = fit_h0(profile)?;
    let (p, epsilon1) = fit_h1(profile)?;
    let stats = LikelihoodStats::from_sites(&profile.filtered_sites);
    let log_l0 = stats.log_l0(epsilon0);
    let log_l1 = stats.log_l1(p, epsilon1);
    let lr_statistic = -2.0 * (log_l0 - log_l1);
    let call = if lr_statistic >= threshold_c {
        Call::Mixed
    } else {
        Call::Pure
    };
    Ok(HypothesisResult {
        epsilon0,
        p,
        epsilon1,
        log_l0,
        log_l1,
        lr_statistic,
        threshold_c,
        alpha,
        call,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pileup::Interval;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feature(counts: [u32; 4]) -> SiteFeature {
        let depth: u32 = counts.iter().sum();
        let mut percent = [0.0; 4];
        for (p, &c) in percent.iter_mut().zip(counts.iter()) {
            *p = 100.0 * c as f64 / depth as f64;
        }
        SiteFeature {
            position: 0,
            counts,
            depth,
            percent,
        }
    }

    fn profile_of(sites: Vec<SiteFeature>) -> SampleProfile {
        let sites: Vec<SiteFeature> = sites
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.position = i;
                s
            })
            .collect();
        SampleProfile {
            mean_depth: sites.iter().map(|s| s.depth as f64).sum::<f64>() / sites.len() as f64,
            filtered_sites: sites.clone(),
            sites,
            regions: vec![Interval {
                start: 0,
                end: usize::MAX,
            }],
        }
    }

    #[test]
    fn site_counts_six_against_two() {
        let c = site_counts(&feature([6, 0, 0, 2]));
        assert_eq!(c.n_major, 6);
        assert_eq!(c.n_minor, 2);
        assert_eq!(c.n_error, 0);
        assert_eq!(c.k_major(), 6);
    }

    #[test]
    fn site_counts_monoallelic() {
        let c = site_counts(&feature([0, 10, 0, 0]));
        assert_eq!((c.n_major, c.n_minor, c.n_error), (10, 0, 0));
    }

    #[test]
    fn site_counts_tie_breaks_by_base_order() {
        // 5 A and 5 C: A wins the major slot.
        let c = site_counts(&feature([5, 5, 0, 0]));
        assert_eq!(c.n_major, 5);
        assert_eq!(c.n_minor, 5);
        assert_eq!(c.n_error, 0);
    }

    #[test]
    fn log_l0_error_free_site_tends_to_zero() {
        let profile = profile_of(vec![feature([8, 0, 0, 0])]);
        let ll = log_likelihood_h0(&profile, 1e-9).unwrap();
        assert!(ll.abs() < 1e-6, "ll = {ll}");
    }

    #[test]
    fn log_l0_matches_direct_arithmetic() {
        // log(28 * 0.01^2 * 0.97^6) = -6.060891..., frozen from an
        // independent calculator.
        let profile = profile_of(vec![feature([6, 1, 1, 0])]);
        let ll = log_likelihood_h0(&profile, 0.01).unwrap();
        assert!((ll - (-6.060891)).abs() < 1e-5, "ll = {ll}");
    }

    #[test]
    fn log_l0_two_identical_sites_double_the_single_site_value() {
        let one = profile_of(vec![feature([6, 2, 0, 0])]);
        let two = profile_of(vec![feature([6, 2, 0, 0]), feature([6, 2, 0, 0])]);
        let a = log_likelihood_h0(&one, 0.01).unwrap();
        let b = log_likelihood_h0(&two, 0.01).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9);
    }

    #[test]
    fn log_l0_rejects_out_of_domain_epsilon() {
        let profile = profile_of(vec![feature([6, 2, 0, 0])]);
        assert!(log_likelihood_h0(&profile, 0.0).is_err());
        assert!(log_likelihood_h0(&profile, 1.0 / 3.0).is_err());
    }

    #[test]
    fn log_l1_matches_direct_arithmetic() {
        // log(28 * 0.5^8) = -2.212973..., frozen from an independent
        // calculator; with n_e = 0 the epsilon term contributes nothing.
        let profile = profile_of(vec![feature([6, 2, 0, 0])]);
        let ll = log_likelihood_h1(&profile, 0.5, 1e-12_f64.max(EPSILON_MIN)).unwrap();
        assert!((ll - (-2.2129729)).abs() < 1e-4, "ll = {ll}");
    }

    #[test]
    fn h1_at_p_one_reduces_to_h0_on_monoallelic_profiles() {
        let profile = profile_of(vec![
            feature([50, 0, 0, 0]),
            feature([0, 80, 0, 0]),
            feature([0, 0, 0, 33]),
        ]);
        for eps in [0.001, 0.01, 0.1, 0.3] {
            let l0 = log_likelihood_h0(&profile, eps).unwrap();
            let l1 = log_likelihood_h1(&profile, 1.0, eps).unwrap();
            assert!((l0 - l1).abs() < 1e-9, "eps={eps}: {l0} vs {l1}");
        }
    }

    #[test]
    fn eq3_category_probabilities_sum_to_one_for_small_depths() {
        // Exhaustive enumeration oracle. The two-strain model spreads reads
        // over four categories (major base, minor base, two error bases with
        // probability epsilon each). The per-site term lumps the two error
        // bases into n_error, so each (n_M, n_m, n_e) partition accounts for
        // 2^{n_e} ways of splitting errors between the two bases.
        for d in 1..=6u32 {
            for &p in &[0.5, 0.7, 0.95] {
                for &eps in &[0.01, 0.05, 0.2] {
                    let mut total = 0.0;
                    for n_major in 0..=d {
                        for n_minor in 0..=(d - n_major) {
                            let n_error = d - n_major - n_minor;
                            let counts = SiteCounts {
                                depth: d,
                                n_major,
                                n_minor,
                                n_error,
                            };
                            total += site_log_likelihood_h1(&counts, p, eps).exp()
                                * 2.0_f64.powi(n_error as i32);
                        }
                    }
                    assert!(
                        (total - 1.0).abs() < 1e-9,
                        "d={d} p={p} eps={eps}: sum={total}"
                    );
                }
            }
        }
    }

    #[test]
    fn fit_h0_error_free_profile_hits_lower_bound() {
        let profile = profile_of(vec![feature([100, 0, 0, 0]); 20]);
        let eps = fit_h0(&profile).unwrap();
        assert!(eps < EPSILON_MIN + 1e-6, "eps = {eps}");
    }

    #[test]
    fn fit_h0_single_site_matches_closed_form() {
        // d = 10, k = 9: stationary point of the null likelihood is
        // (d - k) / (3 d) = 1/30.
        let profile = profile_of(vec![feature([9, 1, 0, 0])]);
        let eps = fit_h0(&profile).unwrap();
        assert!((eps - 1.0 / 30.0).abs() < 1e-6, "eps = {eps}");
    }

    #[test]
    fn fit_h0_recovers_simulated_error_rate() {
        // Simulate directly from the null model: each read is correct with
        // probability 1 - 3*eps, otherwise lands on one of three error bases.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let true_eps = 0.02;
        let mut sites = Vec::new();
        for _ in 0..200 {
            let mut counts = [0u32; 4];
            for _ in 0..100 {
                let u: f64 = rng.gen();
                if u < 1.0 - 3.0 * true_eps {
                    counts[0] += 1;
                } else {
                    counts[1 + (rng.gen::<usize>() % 3)] += 1;
                }
            }
            sites.push(feature(counts));
        }
        let profile = profile_of(sites);
        let eps = fit_h0(&profile).unwrap();
        assert!((eps - true_eps).abs() < 0.005, "eps = {eps}");
        // Analytic oracle: the stationary point is (sum d - sum k) / (3 sum d).
        let (mut sum_d, mut sum_k) = (0.0, 0.0);
        for s in &profile.filtered_sites {
            let c = site_counts(s);
            sum_d += c.depth as f64;
            sum_k += c.n_major as f64;
        }
        let closed = (sum_d - sum_k) / (3.0 * sum_d);
        assert!((eps - closed).abs() < 1e-6, "eps={eps} closed={closed}");
    }

    #[test]
    fn fit_h1_recovers_simulated_proportion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (true_p, true_eps) = (0.7, 0.005);
        let p_major = true_p * (1.0 - 3.0 * true_eps) + (1.0 - true_p) * true_eps;
        let p_minor = (1.0 - true_p) * (1.0 - 3.0 * true_eps) + true_p * true_eps;
        let mut sites = Vec::new();
        for _ in 0..200 {
            let mut counts = [0u32; 4];
            for _ in 0..100 {
                let u: f64 = rng.gen();
                if u < p_major {
                    counts[0] += 1;
                } else if u < p_major + p_minor {
                    counts[1] += 1;
                } else if u < p_major + p_minor + true_eps {
                    counts[2] += 1;
                } else {
                    counts[3] += 1;
                }
            }
            sites.push(feature(counts));
        }
        let profile = profile_of(sites);
        let (p, _eps) = fit_h1(&profile).unwrap();
        assert!((p - true_p).abs() < 0.02, "p = {p}");
    }

    #[test]
    fn fit_h1_monoallelic_profile_pushes_p_to_upper_bound() {
        let profile = profile_of(vec![feature([100, 0, 0, 0]); 10]);
        let (p, _) = fit_h1(&profile).unwrap();
        assert!(p > P_MAX - 1e-6, "p = {p}");
    }

    #[test]
    fn fit_h1_symmetric_counts_give_half() {
        let profile = profile_of(vec![feature([50, 50, 0, 0]); 10]);
        let (p, _) = fit_h1(&profile).unwrap();
        assert!((p - 0.5).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn fit_h1_is_invariant_to_site_order() {
        let sites = vec![
            feature([70, 30, 0, 0]),
            feature([65, 33, 1, 1]),
            feature([80, 20, 0, 0]),
            feature([100, 0, 0, 0]),
        ];
        let mut reversed = sites.clone();
        reversed.reverse();
        let a = fit_h1(&profile_of(sites)).unwrap();
        let b = fit_h1(&profile_of(reversed)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lr_test_flags_strong_biallelic_profile_as_mixed() {
        let mut sites = vec![feature([70, 30, 0, 0]); 50];
        sites.extend(vec![feature([100, 0, 0, 0]); 200]);
        let result = likelihood_ratio_test(&profile_of(sites), 0.05).unwrap();
        assert_eq!(result.call, Call::Mixed);
        assert!(result.lr_statistic > result.threshold_c);
        // The test's fitted p blends monoallelic and biallelic sites
        // (here 23500/25000); the mixture model, not this p, estimates
        // the strain proportions.
        assert!((result.p - 0.94).abs() < 0.01, "p = {}", result.p);
    }

    #[test]
    fn lr_test_monoallelic_profile_is_pure() {
        let result =
            likelihood_ratio_test(&profile_of(vec![feature([100, 0, 0, 0]); 200]), 0.05).unwrap();
        assert_eq!(result.call, Call::Pure);
        // Negative statistics are reported as-is.
        assert!(result.lr_statistic <= 1e-6);
    }

    #[test]
    fn chi2_quantile_frozen_values() {
        assert!((chi2_quantile(0.05).unwrap() - 3.841459).abs() < 1e-5);
        assert!((chi2_quantile(0.10).unwrap() - 2.705543).abs() < 1e-5);
        assert!((chi2_quantile(0.5).unwrap() - 0.454936).abs() < 1e-5);
    }
}
