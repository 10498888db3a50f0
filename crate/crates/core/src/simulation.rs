//! Simulation harness: data generators, replicate drivers and FSR/power
//! reports for comparing nominal and realized false sign rates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adjustment::{adjust_prior, AdjustMethod};
use crate::error::{Error, Result};
use crate::fitting::{em_fit, EmConfig, EmTrace};
use crate::linalg::{eigendecompose, truncate_rank};
use crate::model::{Dataset, MixturePrior, NoiseCov, PriorComponent};
use crate::posterior::{effect_tables, fsp, posterior_summaries, reject_at_level, responsibilities};

/// Noise covariance of the generated observations.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Identity,
    Fixed(DMatrix<f64>),
    /// Per-sample `W / divisor` with `W ~ Wishart(df, scale)`.
    Wishart { df: usize, scale: DMatrix<f64>, divisor: f64 },
}

/// Which prior an arm feeds to the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    Truth,
    Fitted,
}

/// One analysis applied to every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub source: PriorSource,
    pub adjust: Option<AdjustMethod<f64>>,
}

impl Arm {
    pub fn new(name: &str, source: PriorSource, adjust: Option<AdjustMethod<f64>>) -> Self {
        Self { name: name.to_string(), source, adjust }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_samples: usize,
    pub true_prior: MixturePrior<f64>,
    pub noise: NoiseModel,
    pub n_reps: usize,
    pub alpha_grid: Vec<f64>,
    /// Number of fitted components.
    pub fit_k: usize,
    pub fit: EmConfig<f64>,
    pub arms: Vec<Arm>,
    /// Ranks used by [`rank_sweep`].
    pub ranks: Option<Vec<usize>>,
    pub seed: u64,
}

pub const PRESETS: [&str; 4] = ["sec3_rank1", "sec6_sim1_identity", "sec6_sim1_wishart", "sec6_sim2_ranksweep"];

fn fine_grid() -> Vec<f64> {
    vec![0.001, 0.0025, 0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5]
}

fn outer(u: &[f64], scale: f64) -> DMatrix<f64> {
    let u = DVector::from_column_slice(u);
    &u * u.transpose() * scale
}

/// The three 6x6 covariances of the rank-sweep study, already multiplied by 3.
pub fn rank_sweep_priors() -> Vec<DMatrix<f64>> {
    let build = |at: usize, off: f64| {
        let mut m = DMatrix::from_diagonal_element(6, 6, 0.01);
        m[(at, at)] = 1.0;
        m[(at + 1, at + 1)] = 1.0;
        m[(at, at + 1)] = off;
        m[(at + 1, at)] = off;
        m * 3.0
    };
    vec![build(0, 0.5), build(2, -0.5), build(4, 0.5)]
}

impl ScenarioConfig {
    pub fn dim(&self) -> usize {
        self.true_prior.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_samples == 0 || self.n_reps == 0 {
            return bad("n_samples and n_reps must be positive".into());
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|&a| !(a > 0.0 && a <= 0.5)) {
            return bad("alpha_grid must be a non-empty subset of (0, 0.5]".into());
        }
        if self.arms.is_empty() {
            return bad("at least one arm is required".into());
        }
        match &self.noise {
            NoiseModel::Wishart { df, scale, divisor } => {
                if *df < self.dim() || !(*divisor > 0.0) || scale.shape() != (self.dim(), self.dim()) {
                    return bad("wishart noise needs df >= R, a positive divisor and an R x R scale".into());
                }
            }
            NoiseModel::Fixed(v) if v.shape() != (self.dim(), self.dim()) => {
                return Err(Error::DimensionMismatch { expected: self.dim(), found: v.nrows() });
            }
            _ => {}
        }
        if let Some(ranks) = &self.ranks {
            if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > self.dim()) {
                return Err(Error::RankOutOfRange { rank: r, dim: self.dim() });
            }
        }
        Ok(())
    }

    /// Named simulation scenarios.
    pub fn preset(name: &str) -> Result<Self> {
        let fitted = |adjust| Arm::new(name_of(adjust), PriorSource::Fitted, adjust);
        fn name_of(adjust: Option<AdjustMethod<f64>>) -> &'static str {
            adjust.map_or("unadjusted", |m| m.name())
        }
        let truth = Arm::new("truth", PriorSource::Truth, None);
        let info = Some(AdjustMethod::InfoMat { alpha: crate::adjustment::DEFAULT_ALPHA });
        let lower = Some(AdjustMethod::LowerBound { multiplier: crate::adjustment::DEFAULT_MULTIPLIER });
        let sim1 = |noise| -> Result<Self> {
            let u1 = [1.0, 1.0, 0.01, 0.01, 0.01];
            let u2 = [1.0, -1.0, 1.0, 0.01, 0.01];
            Ok(Self {
                name: name.to_string(),
                n_samples: 1000,
                true_prior: MixturePrior::new(vec![
                    PriorComponent::new(0.5, outer(&u1, 3.0)),
                    PriorComponent::new(0.5, outer(&u2, 3.0)),
                ])?,
                noise,
                n_reps: 30,
                alpha_grid: fine_grid(),
                fit_k: 2,
                fit: EmConfig::default().with_ranks(vec![1, 1]),
                arms: vec![truth.clone(), fitted(None), fitted(info), fitted(lower)],
                ranks: None,
                seed: 20_240_601,
            })
        };
        match name {
            "sec3_rank1" => Ok(Self {
                name: name.to_string(),
                n_samples: 1000,
                true_prior: MixturePrior::single(outer(&[1.0, 1.0, 0.01, 0.01, 0.01], 1.0))?,
                noise: NoiseModel::Identity,
                n_reps: 30,
                alpha_grid: fine_grid(),
                fit_k: 2,
                fit: EmConfig::default().with_ranks(vec![1, 1]),
                arms: vec![truth.clone(), fitted(None), fitted(Some(AdjustMethod::Constant(0.03)))],
                ranks: None,
                seed: 20_240_301,
            }),
            "sec6_sim1_identity" => sim1(NoiseModel::Identity),
            "sec6_sim1_wishart" => {
                sim1(NoiseModel::Wishart { df: 10, scale: DMatrix::identity(5, 5), divisor: 10.0 })
            }
            "sec6_sim2_ranksweep" => Ok(Self {
                name: name.to_string(),
                n_samples: 2000,
                true_prior: MixturePrior::new(
                    rank_sweep_priors().into_iter().map(|u| PriorComponent::new(1.0 / 3.0, u)).collect(),
                )?,
                noise: NoiseModel::Identity,
                n_reps: 15,
                alpha_grid: vec![0.01, 0.05, 0.1, 0.2],
                fit_k: 3,
                fit: EmConfig::default(),
                arms: vec![fitted(None), fitted(info)],
                ranks: Some((1..=6).collect()),
                seed: 20_240_602,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset '{other}'; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }
}

/// Independent seed for `(seed, replicate, stream)`.
pub fn derive_seed(seed: u64, rep: usize, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((rep as u64).to_le_bytes());
    h.update(stream.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn sqrt_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = eigendecompose(cov)?;
    let mut f = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        f.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    Ok(f)
}

fn standard_normal(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// `W ~ Wishart(df, scale)` by the Bartlett decomposition `W = L A A^T L^T`.
pub fn sample_wishart(rng: &mut ChaCha8Rng, df: usize, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = scale.nrows();
    if df < dim {
        return Err(Error::InvalidArgument(format!("wishart needs df >= {dim}, got {df}")));
    }
    let l = crate::linalg::cholesky(scale, || "wishart scale".into())?.l();
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let chi = ChiSquared::new((df - i) as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let mut w = &la * la.transpose();
    crate::linalg::symmetrize(&mut w);
    Ok(w)
}

/// Draws replicate `rep`: effects from the true prior and `x_i = mu_i + e_i`.
/// Returns the dataset and the `N x R` matrix of true effects.
pub fn generate_dataset(config: &ScenarioConfig, rep: usize) -> Result<(Dataset<f64>, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, rep, 0));
    let dim = config.dim();
    let n = config.n_samples;
    let comps = config.true_prior.components();
    let factors = comps.iter().map(|c| sqrt_factor(&c.covariance())).collect::<Result<Vec<_>>>()?;
    let pick = WeightedIndex::new(comps.iter().map(|c| c.weight)).map_err(|e| Error::WeightsInvalid { reason: e.to_string() })?;
    let mut truth = DMatrix::zeros(n, dim);
    let mut xs = Vec::with_capacity(n);
    let shared_factor = match &config.noise {
        NoiseModel::Identity => Some(DMatrix::identity(dim, dim)),
        NoiseModel::Fixed(v) => Some(crate::linalg::cholesky(v, || "noise covariance".into())?.l()),
        NoiseModel::Wishart { .. } => None,
    };
    let mut per_sample = Vec::new();
    for i in 0..n {
        let k = pick.sample(&mut rng);
        let mu = &factors[k] * standard_normal(&mut rng, dim);
        truth.set_row(i, &mu.transpose());
        let noise = match (&shared_factor, &config.noise) {
            (Some(l), _) => l * standard_normal(&mut rng, dim),
            (None, NoiseModel::Wishart { df, scale, divisor }) => {
                let v = sample_wishart(&mut rng, *df, scale)? / *divisor;
                let e = crate::linalg::cholesky(&v, || format!("noise covariance {i}"))?.l() * standard_normal(&mut rng, dim);
                per_sample.push(v);
                e
            }
            _ => unreachable!(),
        };
        xs.push(mu + noise);
    }
    let noise = match &config.noise {
        NoiseModel::Identity => NoiseCov::Shared(DMatrix::identity(dim, dim)),
        NoiseModel::Fixed(v) => NoiseCov::Shared(v.clone()),
        NoiseModel::Wishart { .. } => NoiseCov::PerSample(per_sample),
    };
    Ok((Dataset::new(xs, noise)?, truth))
}

/// Outcome of one arm at one nominal level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub alpha: f64,
    pub selected: usize,
    /// Zero when nothing is selected.
    pub fsp: f64,
    /// Zero when nothing is selected.
    pub fsr_hat: f64,
    /// `|Gamma| / (N R)`.
    pub power: f64,
}

/// Sign decisions and their realized error at every level in `alphas`.
pub fn evaluate_levels(
    lfsr: &DMatrix<f64>,
    means: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    alphas: &[f64],
) -> Result<Vec<LevelStats>> {
    if truth.shape() != lfsr.shape() {
        return Err(Error::DimensionMismatch { expected: lfsr.len(), found: truth.len() });
    }
    let total = lfsr.len() as f64;
    alphas
        .iter()
        .map(|&alpha| {
            let set = reject_at_level(lfsr, means, alpha)?;
            let fsp = if set.is_empty() { 0.0 } else { fsp(&set, truth)? };
            Ok(LevelStats { alpha, selected: set.len(), fsp, fsr_hat: set.fsr_hat, power: set.len() as f64 / total })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub arm: String,
    /// Rank the fitted covariances were truncated to, if any.
    pub rank: Option<usize>,
    pub rep: usize,
    pub outcome: std::result::Result<Vec<LevelStats>, String>,
}

/// Mean and standard error over successful replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arm: String,
    pub rank: Option<usize>,
    pub alpha: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_fsp: f64,
    pub se_fsp: f64,
    pub mean_fsr_hat: f64,
    pub se_fsr_hat: f64,
    pub mean_power: f64,
    pub se_power: f64,
    pub mean_selected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsrReport {
    pub scenario: String,
    pub alpha_grid: Vec<f64>,
    pub replicates: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn rank_label(rank: Option<usize>) -> String {
    rank.map_or_else(|| "fitted".to_string(), |r| r.to_string())
}

impl FsrReport {
    fn build(scenario: &str, alpha_grid: &[f64], replicates: Vec<ReplicateRecord>) -> Self {
        // groups in first-appearance order of (arm, rank)
        let mut groups: Vec<(String, Option<usize>)> = Vec::new();
        for r in &replicates {
            if !groups.iter().any(|(a, k)| *a == r.arm && *k == r.rank) {
                groups.push((r.arm.clone(), r.rank));
            }
        }
        let mut summary = Vec::new();
        for (arm, rank) in groups {
            let members: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.arm == arm && r.rank == rank).collect();
            let ok: Vec<&Vec<LevelStats>> = members.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            for (a, &alpha) in alpha_grid.iter().enumerate() {
                let pick = |f: fn(&LevelStats) -> f64| ok.iter().map(|s| f(&s[a])).collect::<Vec<_>>();
                let (mean_fsp, se_fsp) = mean_se(&pick(|s| s.fsp));
                let (mean_fsr_hat, se_fsr_hat) = mean_se(&pick(|s| s.fsr_hat));
                let (mean_power, se_power) = mean_se(&pick(|s| s.power));
                let (mean_selected, _) = mean_se(&pick(|s| s.selected as f64));
                summary.push(SummaryRow {
                    arm: arm.clone(),
                    rank,
                    alpha,
                    n_ok: ok.len(),
                    n_failed: members.len() - ok.len(),
                    mean_fsp,
                    se_fsp,
                    mean_fsr_hat,
                    se_fsr_hat,
                    mean_power,
                    se_power,
                    mean_selected,
                });
            }
        }
        Self { scenario: scenario.to_string(), alpha_grid: alpha_grid.to_vec(), replicates, summary }
    }

    pub fn row(&self, arm: &str, rank: Option<usize>, alpha: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.arm == arm && r.rank == rank && r.alpha == alpha)
    }

    /// Largest mean power over the nominal grid among levels whose mean FSP
    /// is at most `level`; zero if no level qualifies.
    pub fn power_at_empirical_fsr(&self, arm: &str, rank: Option<usize>, level: f64) -> f64 {
        self.summary
            .iter()
            .filter(|r| r.arm == arm && r.rank == rank && r.mean_fsp <= level)
            .map(|r| r.mean_power)
            .fold(0.0, f64::max)
    }

    /// `(rank, alpha, mean FSP)` for one arm.
    pub fn fsp_table(&self, arm: &str) -> Vec<(Option<usize>, f64, f64)> {
        self.summary.iter().filter(|r| r.arm == arm).map(|r| (r.rank, r.alpha, r.mean_fsp)).collect()
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub const SUMMARY_HEADER: &'static str =
        "scenario,arm,rank,alpha,n_ok,n_failed,mean_fsp,se_fsp,mean_fsr_hat,se_fsr_hat,mean_power,se_power,mean_selected";
    pub const REPLICATE_HEADER: &'static str = "scenario,arm,rank,rep,alpha,status,selected,fsp,fsr_hat,power";

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::SUMMARY_HEADER)?;
        for r in &self.summary {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.scenario,
                r.arm,
                rank_label(r.rank),
                r.alpha,
                r.n_ok,
                r.n_failed,
                r.mean_fsp,
                r.se_fsp,
                r.mean_fsr_hat,
                r.se_fsr_hat,
                r.mean_power,
                r.se_power,
                r.mean_selected
            )?;
        }
        Ok(())
    }

    pub fn write_replicates_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::REPLICATE_HEADER)?;
        for r in &self.replicates {
            let rank = rank_label(r.rank);
            match &r.outcome {
                Ok(levels) => {
                    for s in levels {
                        writeln!(
                            w,
                            "{},{},{},{},{},ok,{},{},{},{}",
                            self.scenario, r.arm, rank, r.rep, s.alpha, s.selected, s.fsp, s.fsr_hat, s.power
                        )?;
                    }
                }
                Err(msg) => {
                    let msg = msg.replace([',', '\n'], ";");
                    for alpha in &self.alpha_grid {
                        writeln!(w, "{},{},{},{},{},failed: {msg},,,,", self.scenario, r.arm, rank, r.rep, alpha)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn analyze(
    prior: &MixturePrior<f64>,
    gamma: Option<&DMatrix<f64>>,
    adjust: Option<AdjustMethod<f64>>,
    data: &Dataset<f64>,
    truth: &DMatrix<f64>,
    alphas: &[f64],
) -> Result<Vec<LevelStats>> {
    let adjusted;
    let used = match adjust {
        None => prior,
        Some(method) => {
            let owned;
            let g = match gamma {
                Some(g) => g,
                None => {
                    owned = responsibilities(data, prior)?.0;
                    &owned
                }
            };
            adjusted = adjust_prior(prior, g, data, method)?;
            &adjusted
        }
    };
    let (means, lfsr) = effect_tables(&posterior_summaries(data, used)?);
    evaluate_levels(&lfsr, &means, truth, alphas)
}

fn fit_replicate(config: &ScenarioConfig, data: &Dataset<f64>, rep: usize) -> Result<(MixturePrior<f64>, EmTrace<f64>)> {
    let fit_config = config.fit.clone().with_seed(derive_seed(config.seed, rep, 1));
    em_fit(data, config.fit_k, &fit_config)
}

fn run_replicate(config: &ScenarioConfig, rep: usize, ranks: Option<&[usize]>) -> Vec<ReplicateRecord> {
    let record = |arm: &Arm, rank, outcome: Result<Vec<LevelStats>>| ReplicateRecord {
        arm: arm.name.clone(),
        rank,
        rep,
        outcome: outcome.map_err(|e| e.to_string()),
    };
    let (data, truth) = match generate_dataset(config, rep) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return config
                .arms
                .iter()
                .map(|a| ReplicateRecord { arm: a.name.clone(), rank: None, rep, outcome: Err(msg.clone()) })
                .collect();
        }
    };
    let needs_fit = config.arms.iter().any(|a| a.source == PriorSource::Fitted);
    let fit = if needs_fit { Some(fit_replicate(config, &data, rep)) } else { None };
    let mut out = Vec::new();
    for arm in &config.arms {
        match (arm.source, &fit) {
            (PriorSource::Truth, _) => out.push(record(
                arm,
                None,
                analyze(&config.true_prior, None, arm.adjust, &data, &truth, &config.alpha_grid),
            )),
            (PriorSource::Fitted, Some(Err(e))) => {
                let msg = format!("fit failed: {e}");
                match ranks {
                    None => out.push(ReplicateRecord { arm: arm.name.clone(), rank: None, rep, outcome: Err(msg) }),
                    Some(rs) => out.extend(rs.iter().map(|&r| ReplicateRecord {
                        arm: arm.name.clone(),
                        rank: Some(r),
                        rep,
                        outcome: Err(msg.clone()),
                    })),
                }
            }
            (PriorSource::Fitted, Some(Ok((prior, trace)))) => match ranks {
                None => out.push(record(
                    arm,
                    None,
                    analyze(prior, Some(&trace.responsibilities), arm.adjust, &data, &truth, &config.alpha_grid),
                )),
                Some(rs) => {
                    for &r in rs {
                        let outcome = truncated(prior, r)
                            .and_then(|p| analyze(&p, None, arm.adjust, &data, &truth, &config.alpha_grid));
                        out.push(record(arm, Some(r), outcome));
                    }
                }
            },
            (PriorSource::Fitted, None) => unreachable!("fit runs whenever a fitted arm exists"),
        }
    }
    out
}

fn truncated(prior: &MixturePrior<f64>, rank: usize) -> Result<MixturePrior<f64>> {
    let components = prior
        .components()
        .iter()
        .map(|c| Ok(PriorComponent { weight: c.weight, u: truncate_rank(&c.u, rank)?, d: c.d.clone() }))
        .collect::<Result<Vec<_>>>()?;
    MixturePrior::new(components)
}

fn run_all(config: &ScenarioConfig, ranks: Option<&[usize]>) -> Result<FsrReport> {
    config.validate()?;
    let per_rep: Vec<Vec<ReplicateRecord>> =
        (0..config.n_reps).into_par_iter().map(|rep| run_replicate(config, rep, ranks)).collect();
    let mut records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    // arm-major order, then rank, then replicate
    let arm_pos = |name: &str| config.arms.iter().position(|a| a.name == name).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (arm_pos(&r.arm), r.rank, r.rep));
    let report = FsrReport::build(&config.name, &config.alpha_grid, records);
    if report.failures() > 0 {
        log::warn!("{}: {} failed replicate records", config.name, report.failures());
    }
    Ok(report)
}

/// Runs every replicate: generate, fit once, then each arm's optional
/// adjustment, posterior and sign decisions at every nominal level.
pub fn run_scenario(config: &ScenarioConfig) -> Result<FsrReport> {
    run_all(config, None)
}

/// Like [`run_scenario`], but each fitted prior is truncated to every rank in
/// `ranks` before the arm's adjustment. Truth arms are reported once.
pub fn rank_sweep(config: &ScenarioConfig, ranks: &[usize]) -> Result<FsrReport> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("rank list is empty".into()));
    }
    if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > config.dim()) {
        return Err(Error::RankOutOfRange { rank: r, dim: config.dim() });
    }
    if config.fit.rank_constraints.is_some() {
        return Err(Error::InvalidArgument("rank sweep truncates an unconstrained fit; drop the rank constraints".into()));
    }
    run_all(config, Some(ranks))
}
