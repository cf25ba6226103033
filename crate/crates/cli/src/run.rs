//! The named experiments: per-seed artifacts, aggregated JSON summaries,
//! and a manifest with content hashes.

use std::path::Path;

use serde::Serialize;

use scorelab_core::analysis::{
    conditional_noise_bin_check, expected_l2, kappa_estimate, loglog_slope,
    martingale_decompose, mode_weights, time_regularity_check, variance_rate_sweep,
};
use scorelab_core::dataset::sample_and_noise;
use scorelab_core::experiments::{
    dimension_sweep, gaussian_linear_compare_on, scaled_error_profile, SweepSettings,
};
use scorelab_core::io::{write_csv, write_checkpoint, ModelCheckpoint};
use scorelab_core::models::{fit_affine, LinearScoreModel};
use scorelab_core::rng::{stream, StreamDomain};
use scorelab_core::sample::{
    best_subset, reverse_sample, subsample_schedule, Integrator, SampleSet, SamplerConfig,
};
use scorelab_core::targets::{sample_target_with, ScoreOracle, TargetSpec};
use scorelab_core::train::{
    alpha, train_bsm_linear, train_bsm_mlp, train_dsm_linear, train_per_timestep_dsm_mlp,
    AlphaMode, BsmConfig, MlpArch,
};
use scorelab_core::{sigma, sigma_sq, Error, Result, Schedule, ScoreFn};

use crate::config::{ExperimentConfig, ExperimentName, ModelConfig, TargetConfig};
use crate::manifest::Manifest;

pub fn run_experiment(cfg: &ExperimentConfig, config_json: &str, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest =
        Manifest::new(cfg.experiment.as_str(), config_json, &cfg.seeds, out_dir);
    match cfg.experiment {
        ExperimentName::GaussianLinear => gaussian_linear(cfg, out_dir, &mut manifest)?,
        ExperimentName::GmmBsm => gmm_bsm(cfg, out_dir, &mut manifest)?,
        ExperimentName::DimensionSweep => sweep(cfg, out_dir, &mut manifest)?,
        ExperimentName::VarianceCompare => variance_compare(cfg, out_dir, &mut manifest)?,
        ExperimentName::MartingaleCheck => martingale_check(cfg, out_dir, &mut manifest)?,
        ExperimentName::FastInference => fast_inference(cfg, out_dir, &mut manifest)?,
        ExperimentName::IdentitySuite => identity_suite(cfg, out_dir, &mut manifest)?,
    }
    manifest.write()?;
    Ok(())
}

fn f(v: f64) -> String {
    v.to_string()
}

fn bsm_config(cfg: &ExperimentConfig, seed: u64) -> BsmConfig {
    BsmConfig {
        k0: cfg.k0(),
        alpha_mode: cfg.train.alpha,
        per_step_epochs: cfg.train.per_step_epochs,
        first_step_epochs: cfg.train.first_step_epochs,
        batch_size: cfg.train.batch_size,
        optimizer: cfg.train.optimizer,
        lr_schedule: cfg.train.lr_schedule,
        seed,
    }
}

// ---------------------------------------------------------------- gaussian

#[derive(Serialize)]
struct GaussianLinearSeedSummary {
    seed: u64,
    win_fraction: f64,
    dsm_late_mean: f64,
    bsm_late_mean: f64,
}

#[derive(Serialize)]
struct GaussianLinearSummary {
    k0: usize,
    per_seed: Vec<GaussianLinearSeedSummary>,
    pooled_win_fraction: f64,
    strict_late_wins: usize,
}

fn gaussian_linear(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let schedule = cfg.schedule.build()?;
    let k0 = cfg.k0();
    let mut per_seed = Vec::new();
    let (mut wins, mut total, mut strict) = (0usize, 0usize, 0usize);
    for &seed in &cfg.seeds {
        let target = cfg.target.resolve(seed)?;
        let run =
            gaussian_linear_compare_on(&target, cfg.m, &schedule, k0, cfg.train.alpha, seed)?;
        let name = format!("seed_{seed}_errors.csv");
        write_csv(
            &out.join(&name),
            &["step", "t", "dsm_err", "bsm_err"],
            (0..run.times.len()).map(|j| {
                vec![(j + 1).to_string(), f(run.times[j]), f(run.dsm_err[j]), f(run.bsm_err[j])]
            }),
        )?;
        man.add(name);
        for j in k0..run.times.len() {
            total += 1;
            if run.bsm_err[j] <= run.dsm_err[j] {
                wins += 1;
            }
        }
        let (dsm_late, bsm_late) = run.late_means();
        if bsm_late < dsm_late {
            strict += 1;
        }
        per_seed.push(GaussianLinearSeedSummary {
            seed,
            win_fraction: run.bsm_win_fraction(),
            dsm_late_mean: dsm_late,
            bsm_late_mean: bsm_late,
        });
    }
    let summary = GaussianLinearSummary {
        k0,
        per_seed,
        pooled_win_fraction: wins as f64 / total.max(1) as f64,
        strict_late_wins: strict,
    };
    write_summary(out, man, &summary)
}

fn write_summary<S: Serialize>(out: &Path, man: &mut Manifest, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(out.join("summary.json"), text)?;
    man.add("summary.json");
    Ok(())
}

// -------------------------------------------------------------------- gmm

#[derive(Serialize)]
struct GmmSeedSummary {
    seed: u64,
    dsm_mode_weights: Vec<f64>,
    bsm_mode_weights: Vec<f64>,
    target_weights: Vec<f64>,
}

fn gmm_bsm(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let (means, weights) = match &cfg.target {
        TargetConfig::Gmm { means, weights, .. } => (means.clone(), weights.clone()),
        _ => {
            return Err(Error::InvalidArgument(
                "the gmm-bsm experiment needs a gmm target".into(),
            ))
        }
    };
    let hidden = match &cfg.model {
        ModelConfig::Mlp { hidden, activation } => MlpArch {
            hidden: hidden.clone(),
            activation: *activation,
        },
        ModelConfig::Linear => {
            return Err(Error::InvalidArgument(
                "the gmm-bsm experiment trains per-timestep MLPs; set model.kind = mlp".into(),
            ))
        }
    };
    let schedule = cfg.schedule.build()?;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let target = cfg.target.resolve(seed)?;
        let ds = sample_and_noise(&target, cfg.m, schedule.clone(), seed)?;
        let bsm = train_bsm_mlp(&ds, &hidden, &bsm_config(cfg, seed))?;
        let dsm = train_per_timestep_dsm_mlp(&ds, &hidden, &bsm_config(cfg, seed))?;

        let sampler = SamplerConfig {
            n: cfg.sample.n,
            seed,
            integrator: cfg.sample.integrator,
            t_min: None,
            zero_noise: false,
        };
        let bsm_samples = reverse_sample(&bsm, &schedule, &sampler)?;
        let dsm_samples = reverse_sample(&dsm, &schedule, &sampler)?;

        for (tag, s) in [("bsm", &bsm_samples), ("dsm", &dsm_samples)] {
            let name = format!("seed_{seed}_samples_{tag}.csv");
            scorelab_core::io::write_samples_csv(&out.join(&name), s)?;
            man.add(name);
        }
        let density_name = format!("seed_{seed}_density.csv");
        write_density_csv(&out.join(&density_name), &target, &dsm_samples, &bsm_samples)?;
        man.add(density_name);

        for (tag, model) in [("bsm", bsm), ("dsm", dsm)] {
            let name = format!("seed_{seed}_{tag}.ckpt");
            write_checkpoint(&out.join(&name), &ModelCheckpoint::MlpPerStep(model))?;
            man.add(name);
        }

        let mode_means: Vec<Vec<f64>> = means.clone();
        summaries.push(GmmSeedSummary {
            seed,
            dsm_mode_weights: mode_weights(&dsm_samples, &mode_means)?,
            bsm_mode_weights: mode_weights(&bsm_samples, &mode_means)?,
            target_weights: weights.clone(),
        });
    }
    write_summary(out, man, &summaries)
}

/// Histogram of sampled densities against the exact target density (d = 1).
fn write_density_csv(
    path: &Path,
    target: &TargetSpec,
    dsm: &SampleSet,
    bsm: &SampleSet,
) -> Result<()> {
    let oracle = ScoreOracle::new(target.clone());
    let (lo, hi, nbins) = (-9.0f64, 9.0f64, 90usize);
    let width = (hi - lo) / nbins as f64;
    let count = |s: &SampleSet, b: usize| {
        let (a, z) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
        s.data.iter().filter(|&&v| v >= a && v < z).count() as f64 / s.len() as f64 / width
    };
    write_csv(
        path,
        &["center", "target_pdf", "dsm_density", "bsm_density"],
        (0..nbins).map(|b| {
            let center = lo + (b as f64 + 0.5) * width;
            let pdf = oracle
                .log_density(0.0, &[center])
                .map(|l| l.exp())
                .unwrap_or(f64::NAN);
            vec![f(center), f(pdf), f(count(dsm, b)), f(count(bsm, b))]
        }),
    )
}

// ------------------------------------------------------------------ sweep

#[derive(Serialize)]
struct SweepSummary {
    dims: Vec<usize>,
    scaled_profile: Vec<f64>,
    slope: f64,
    error_space: String,
}

fn sweep(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let sw = cfg.sweep.as_ref().expect("validated");
    let settings = SweepSettings {
        m_train: cfg.m,
        m_test: sw.m_test,
        n_steps: cfg.schedule.n,
        horizon: cfg.schedule.horizon,
        hidden: sw.hidden,
        epochs: sw.epochs,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.optimizer.base_lr(),
        noise_space_error: sw.error_space == "noise",
    };
    let points = dimension_sweep(&sw.dims, &cfg.seeds, &settings)?;
    write_csv(
        &out.join("sweep.csv"),
        &["d", "seed", "params", "time_avg_error", "scaled_error"],
        points.iter().map(|p| {
            vec![
                p.d.to_string(),
                p.seed.to_string(),
                p.n_params.to_string(),
                f(p.time_avg_error),
                f(p.scaled_error()),
            ]
        }),
    )?;
    man.add("sweep.csv");
    let profile = scaled_error_profile(&points, &sw.dims);
    let dims_f: Vec<f64> = sw.dims.iter().map(|&d| d as f64).collect();
    let slope = loglog_slope(&dims_f, &profile)?;
    write_summary(
        out,
        man,
        &SweepSummary {
            dims: sw.dims.clone(),
            scaled_profile: profile,
            slope,
            error_space: sw.error_space.clone(),
        },
    )
}

// ------------------------------------------------------------ variance

#[derive(Serialize)]
struct VarianceSeedSummary {
    seed: u64,
    bsm_slope: Option<f64>,
    dsm_slope: Option<f64>,
}

fn variance_compare(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let mut rows_csv = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let target = cfg.target.resolve(seed)?;
        let oracle = ScoreOracle::new(target);
        let sweep = variance_rate_sweep(
            &oracle,
            cfg.analysis.t,
            &cfg.analysis.deltas,
            cfg.analysis.n_mc,
            seed,
            cfg.train.alpha,
        )?;
        for r in &sweep.rows {
            rows_csv.push(vec![
                seed.to_string(),
                f(r.delta),
                f(r.bsm_tr_cov),
                f(r.bsm_se),
                f(r.dsm_tr_cov),
                f(r.dsm_se),
                f(r.bsm_max_mean_over_se),
            ]);
        }
        per_seed.push(VarianceSeedSummary {
            seed,
            bsm_slope: sweep.bsm_slope,
            dsm_slope: sweep.dsm_slope,
        });
    }
    write_csv(
        &out.join("variance.csv"),
        &["seed", "delta", "bsm_tr_cov", "bsm_se", "dsm_tr_cov", "dsm_se", "bsm_bias_over_se"],
        rows_csv,
    )?;
    man.add("variance.csv");
    write_summary(out, man, &per_seed)
}

// ----------------------------------------------------------- martingale

#[derive(Serialize)]
struct MartingaleSummary {
    instances: usize,
    worst_relative_gap: f64,
}

fn martingale_check(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let schedule = cfg.schedule.build()?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut instances = 0usize;
    for &seed in &cfg.seeds {
        let target = cfg.target.resolve(seed)?;
        let oracle = ScoreOracle::with_schedule(target.clone(), &schedule)?;
        let ds = sample_and_noise(&target, cfg.m, schedule.clone(), seed)?;
        for inst in 0..20u64 {
            let model = perturbed_model(&oracle, schedule.times(), 0.8, seed * 100 + inst)?;
            let ledger = martingale_decompose(&ds, &model, &oracle)?;
            let gap = ledger.relative_gap();
            worst = worst.max(gap);
            instances += 1;
            rows.push(vec![
                seed.to_string(),
                inst.to_string(),
                f(ledger.h_direct),
                f(ledger.h_decomposed),
                f(gap),
            ]);
        }
    }
    write_csv(
        &out.join("martingale.csv"),
        &["seed", "instance", "h_direct", "h_decomposed", "relative_gap"],
        rows,
    )?;
    man.add("martingale.csv");
    write_summary(out, man, &MartingaleSummary { instances, worst_relative_gap: worst })
}

fn perturbed_model(
    oracle: &ScoreOracle,
    times: &[f64],
    scale: f64,
    seed: u64,
) -> Result<LinearScoreModel> {
    use rand::Rng;
    use rand_distr_shim::sample_normal;
    let mut model = LinearScoreModel::from_gaussian_oracle(oracle, times)?;
    let mut rng = stream(seed, StreamDomain::Experiment, 42);
    let d = oracle.dim();
    for j in 0..times.len() {
        let (a, b) = model.map_mut(j);
        for r in 0..d {
            for c in 0..d {
                a[(r, c)] += scale * sample_normal(&mut rng);
            }
            b[r] += scale * rng.random_range(-scale..scale);
        }
    }
    Ok(model)
}

/// Tiny shim: a normal draw via Box-Muller so this crate does not need the
/// rand_distr dependency for one call site.
mod rand_distr_shim {
    use rand::Rng;

    pub fn sample_normal(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

// -------------------------------------------------------- fast inference

#[derive(Serialize)]
struct FastInferenceSeedSummary {
    seed: u64,
    stride: usize,
    best_offset: usize,
    subset_weighted_error: f64,
    total_weighted_error: f64,
    bound_ok: bool,
    cov_err_full: f64,
    cov_err_strided: f64,
}

fn fast_inference(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let schedule = cfg.schedule.build()?;
    let k = cfg.sample.stride;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let target = cfg.target.resolve(seed)?;
        let oracle = ScoreOracle::with_schedule(target.clone(), &schedule)?;
        let ds = sample_and_noise(&target, cfg.m, schedule.clone(), seed)?;
        let model = train_dsm_linear(&ds)?;

        let report = expected_l2(&model, &oracle, &schedule, cfg.analysis.n_mc, seed)?;
        let errs = report.values();
        let best = best_subset(&errs, schedule.weights(), k)?;

        let name = format!("seed_{seed}_per_step_error.csv");
        write_csv(
            &out.join(&name),
            &["step", "t", "gamma", "error", "std_err"],
            report.per_timestep.iter().enumerate().map(|(j, r)| {
                vec![
                    (j + 1).to_string(),
                    f(r.t),
                    f(r.gamma),
                    f(r.value),
                    f(r.std_err.unwrap_or(0.0)),
                ]
            }),
        )?;
        man.add(name);

        let sampler = SamplerConfig {
            n: cfg.sample.n,
            seed,
            integrator: cfg.sample.integrator,
            t_min: None,
            zero_noise: false,
        };
        let full = reverse_sample(&model, &schedule, &sampler)?;
        let strided_schedule = subsample_schedule(&schedule, k, best.offset)?;
        let strided = reverse_sample(&model, &strided_schedule, &sampler)?;

        let sigma_ref = match &target {
            TargetSpec::Gaussian { sigma } => sigma.clone(),
            _ => {
                return Err(Error::InvalidArgument(
                    "fast-inference expects a Gaussian-family target".into(),
                ))
            }
        };
        summaries.push(FastInferenceSeedSummary {
            seed,
            stride: k,
            best_offset: best.offset,
            subset_weighted_error: best.subset_error,
            total_weighted_error: best.total_error,
            bound_ok: best.bound_ok,
            cov_err_full: covariance_error(&full, &sigma_ref),
            cov_err_strided: covariance_error(&strided, &sigma_ref),
        });
    }
    write_summary(out, man, &summaries)
}

fn covariance_error(samples: &SampleSet, sigma: &nalgebra::DMatrix<f64>) -> f64 {
    let d = samples.d;
    let n = samples.len() as f64;
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..samples.len() {
        let row = samples.row(i);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += row[a] * row[b];
            }
        }
    }
    cov /= n;
    scorelab_core::linalg::frobenius(&(cov - sigma))
}

// -------------------------------------------------------- identity suite

#[derive(Serialize)]
struct IdentityCheck {
    check: &'static str,
    statistic: f64,
    threshold: f64,
    pass: bool,
}

fn push(list: &mut Vec<IdentityCheck>, check: &'static str, statistic: f64, threshold: f64) {
    list.push(IdentityCheck { check, statistic, threshold, pass: statistic <= threshold });
}

fn identity_suite(cfg: &ExperimentConfig, out: &Path, man: &mut Manifest) -> Result<()> {
    let seed = cfg.seeds[0];
    let target = cfg.target.resolve(seed)?;
    if !matches!(target, TargetSpec::Gaussian { .. }) {
        return Err(Error::InvalidArgument(
            "identity-suite needs a Gaussian-family target".into(),
        ));
    }
    let d = target.dim();
    let oracle = ScoreOracle::new(target.clone());
    let mut checks = Vec::new();

    // Noise-level and bootstrap-weight formula spot values.
    let sigma_direct = (1.0 - (-1.0f64).exp()).sqrt();
    push(&mut checks, "sigma-формула".trim_matches(|_| false), 0.0, 0.0); // placeholder removed below
    checks.pop();
    push(&mut checks, "sigma-formula", (sigma(0.5) - sigma_direct).abs(), 1e-15);
    let alpha_direct = (-0.1f64).exp() * (1.0 - (-2.0f64).exp()) / (1.0 - (-2.2f64).exp());
    push(
        &mut checks,
        "alpha-lemma-formula",
        (alpha(1.0, 1.1, AlphaMode::Lemma)? - alpha_direct).abs(),
        1e-15,
    );

    // First-order Tweedie as a regression: -z/sigma^2 on x_t.
    let t = 0.5;
    let m = cfg.m;
    let mut rng = stream(seed, StreamDomain::McDraws, 10);
    let x0 = sample_target_with(&target, m, &mut rng)?;
    let s2 = sigma_sq(t);
    let decay = (-t).exp();
    let mut xs = vec![0.0; m * d];
    let mut ys = vec![0.0; m * d];
    use rand::Rng;
    for i in 0..m {
        for c in 0..d {
            let z = s2.sqrt() * rand_distr_shim::sample_normal(&mut rng);
            xs[i * d + c] = decay * x0[i * d + c] + z;
            ys[i * d + c] = -z / s2;
        }
    }
    let truth = oracle.hessian(t, &vec![0.0; d])?;
    let (a_fit, _) = fit_affine(&xs, &ys, m, d, d)?;
    push(
        &mut checks,
        "tweedie-regression",
        scorelab_core::linalg::frobenius(&(&a_fit - &truth)),
        5.0 / (m as f64).sqrt(),
    );

    // Score transport: e^{t-t'} s(t', x_{t'}) regressed on x_t matches s(t, .).
    let t_lo = 0.3;
    let grow = (t - t_lo).exp();
    let mut ys2 = vec![0.0; m * d];
    let mut rng2 = stream(seed, StreamDomain::McDraws, 11);
    let x0b = sample_target_with(&target, m, &mut rng2)?;
    let s2_lo = sigma_sq(t_lo);
    let s2_gap = sigma_sq(t - t_lo);
    let at_lo = oracle.at(t_lo)?;
    let mut xs2 = vec![0.0; m * d];
    let mut s_buf = vec![0.0; d];
    for i in 0..m {
        let mut x_lo = vec![0.0; d];
        for c in 0..d {
            x_lo[c] =
                (-t_lo). exp() * x0b[i * d + c] + s2_lo.sqrt() * rand_distr_shim::sample_normal(&mut rng2);
        }
        at_lo.score_into(&x_lo, &mut s_buf);
        for c in 0..d {
            xs2[i * d + c] = (-(t - t_lo)).exp() * x_lo[c]
                + s2_gap.sqrt() * rand_distr_shim::sample_normal(&mut rng2);
            ys2[i * d + c] = grow * s_buf[c];
        }
    }
    let (a_fit2, _) = fit_affine(&xs2, &ys2, m, d, d)?;
    push(
        &mut checks,
        "score-transport",
        scorelab_core::linalg::frobenius(&(&a_fit2 - &truth)),
        8.0 / (m as f64).sqrt(),
    );

    // Second-order Tweedie on the canonical 1-D target.
    let std1 = ScoreOracle::new(TargetSpec::gaussian(nalgebra::DMatrix::identity(1, 1))?);
    let bins =
        conditional_noise_bin_check(&std1, 1.0, 0.8, cfg.analysis.n_mc, seed, &[-1.0, 0.0, 1.0], 0.1)?;
    let worst_bin = bins
        .iter()
        .map(|b| (b.mean_gap / b.std_err).abs())
        .fold(0.0f64, f64::max);
    push(&mut checks, "second-order-tweedie", worst_bin, 3.0);

    // Local time regularity of the oracle score.
    let schedule = cfg.schedule.build()?;
    let lipschitz = ScoreOracle::with_schedule(target.clone(), &schedule)?
        .lipschitz_max(&schedule)?;
    let tail = 0.05;
    let n_reg = 10_000;
    let frac =
        time_regularity_check(&oracle, &oracle, 0.6, 0.5, lipschitz, tail, n_reg, seed)?;
    push(
        &mut checks,
        "time-regularity",
        frac,
        tail + 3.0 * (tail * (1.0 - tail) / n_reg as f64).sqrt(),
    );

    // Hypercontractivity ratio under a linear 1-D error.
    let kappa_model = {
        let mut mdl = LinearScoreModel::from_gaussian_oracle(&std1, &[1.0])?;
        let (ka, _) = mdl.map_mut(0);
        ka[(0, 0)] += 0.5;
        mdl
    };
    let kappa = kappa_estimate(&kappa_model, &std1, 1.0, cfg.analysis.n_mc, seed)?;
    push(&mut checks, "kappa-linear-gaussian", (kappa - 3.0f64.powf(0.25)).abs(), 0.05);

    // Martingale two-path identity.
    let ds = sample_and_noise(&target, 10.min(cfg.m), schedule.clone(), seed)?;
    let mut worst_gap = 0.0f64;
    for inst in 0..20 {
        let model = perturbed_model(&oracle, schedule.times(), 0.8, seed * 31 + inst)?;
        let oracle_s = ScoreOracle::with_schedule(target.clone(), &schedule)?;
        let ledger = martingale_decompose(&ds, &model, &oracle_s)?;
        worst_gap = worst_gap.max(ledger.relative_gap());
    }
    push(&mut checks, "martingale-identity", worst_gap, 1e-8);

    // Pigeonhole over random error vectors.
    let mut rng3 = stream(seed, StreamDomain::Experiment, 12);
    let mut failures = 0usize;
    for _ in 0..200 {
        let n = 1 + rng3.random_range(0..64usize);
        let k = 1 + rng3.random_range(0..n);
        let errors: Vec<f64> = (0..n).map(|_| rng3.random::<f64>()).collect();
        let res = best_subset(&errors, &vec![0.01; n], k)?;
        if !res.bound_ok {
            failures += 1;
        }
    }
    push(&mut checks, "fast-inference-pigeonhole", failures as f64, 0.0);

    write_csv(
        &out.join("identities.csv"),
        &["check", "statistic", "threshold", "pass"],
        checks.iter().map(|c| {
            vec![c.check.to_string(), f(c.statistic), f(c.threshold), c.pass.to_string()]
        }),
    )?;
    man.add("identities.csv");
    write_summary(out, man, &checks)?;
    let failed: Vec<&str> =
        checks.iter().filter(|c| !c.pass).map(|c| c.check).collect();
    if !failed.is_empty() {
        return Err(Error::NumericFailure(format!(
            "identity checks failed: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}
