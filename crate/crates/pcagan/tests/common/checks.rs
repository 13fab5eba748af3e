//! One function per acceptance criterion. Each returns whether it passed and
//! a one-line summary of what was measured.

use super::oracles::{sample_cov_eig, schur_posterior, w2_oracle};
use super::{normal_mat, normal_vec, random_measurement, random_prior, random_spd, rng};
use nalgebra::DVector;
use pcagan::experiment::{read_results, run_sweep, Profile, SweepAxis, SweepSpec, RESULTS_HEADER};
use pcagan::gaussian_world::{analytic_posterior, w2_gaussian, GaussianDist, PosteriorOperator};
use pcagan::netcore::{
    check_gradient, AffineGenerator, GeneratorObjective, GeneratorTerm, LinearDiscriminator, Objective, SampleLoss,
    SampleLossEval,
};
use pcagan::regularizers::{
    l1_reg_grad, pca_extract, sd_reward_grad, AdvGenLoss, DiscriminatorObjective, DiscriminatorSample, EigvalScale,
    PcaLoss, PcaStopGrad, RcLoss, SdStats,
};
use pcagan::rng::StreamRng;
use pcagan::trainer::{lazy_step_count, train, Mode, TrainConfig};
use rand::Rng;
use std::path::Path;

pub struct Outcome {
    pub ok: bool,
    pub detail: String,
}

// Gradient-check problem size.
pub const D: usize = 6;
pub const DZ: usize = 4;
pub const K: usize = 2;
pub const P_RC: usize = 2;
pub const P_PCA: usize = 5;
pub const POINTS: usize = 20;
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;

pub struct L1Only {
    pub x: DVector<f64>,
}

impl SampleLoss for L1Only {
    fn evaluate(&self, _y: &DVector<f64>, samples: &[DVector<f64>]) -> SampleLossEval {
        let (value, sample_grads) = l1_reg_grad(&self.x, samples);
        SampleLossEval {
            value,
            sample_grads,
            parts: vec![("l1", value)],
        }
    }
}

pub struct SdOnly;

impl SampleLoss for SdOnly {
    fn evaluate(&self, _y: &DVector<f64>, samples: &[DVector<f64>]) -> SampleLossEval {
        let (value, sample_grads) = sd_reward_grad(samples);
        SampleLossEval {
            value,
            sample_grads,
            parts: vec![("sd", value)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Adversarial,
    L1,
    SdReward,
    RcTotal,
    Evec,
    Eval,
    PcaTotal,
    CriticPenalty,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Adversarial,
        LossKind::L1,
        LossKind::SdReward,
        LossKind::RcTotal,
        LossKind::Evec,
        LossKind::Eval,
        LossKind::PcaTotal,
        LossKind::CriticPenalty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Adversarial => "adversarial",
            LossKind::L1 => "l1",
            LossKind::SdReward => "sd_reward",
            LossKind::RcTotal => "rc_total",
            LossKind::Evec => "evec",
            LossKind::Eval => "eval",
            LossKind::PcaTotal => "pca_total",
            LossKind::CriticPenalty => "critic_gp",
        }
    }
}

pub fn random_generator(rng: &mut StreamRng) -> AffineGenerator {
    let mut g = AffineGenerator::zeros(D, DZ).unwrap();
    g.set_a(&(normal_mat(rng, D, D) * 0.4));
    g.set_b_matrix(&(normal_mat(rng, D, DZ) * 0.7));
    g.set_bias(&(normal_vec(rng, D) * 0.3));
    g
}

pub fn random_critic(rng: &mut StreamRng) -> LinearDiscriminator {
    let mut c = LinearDiscriminator::zeros(D).unwrap();
    c.set_w(&normal_vec(rng, 2 * D));
    c.set_bias(rng.random_range(-1.0..1.0));
    c
}

/// Frozen mean and eigenvalue targets computed from a first pass at `gen`.
pub fn two_pass_frozen(
    gen: &AffineGenerator,
    y: &DVector<f64>,
    codes: &[DVector<f64>],
    x: &DVector<f64>,
) -> PcaStopGrad {
    let samples: Vec<DVector<f64>> = codes.iter().map(|z| gen.forward(z, y).unwrap()).collect();
    let mut mean = DVector::zeros(D);
    for s in &samples {
        mean += s;
    }
    mean /= samples.len() as f64;
    let pca = pcagan::regularizers::pca_extract_with_mean(&samples, K, &mean).unwrap();
    let tilde = pcagan::regularizers::eval_loss(&pca, x, &samples, EigvalScale::PerSample).lambda_tilde;
    PcaStopGrad {
        mean: Some(mean),
        lambda_tilde: Some(tilde),
    }
}

fn pca_loss(x: &DVector<f64>, evec: bool, eval: bool, frozen: PcaStopGrad) -> PcaLoss {
    PcaLoss {
        x: x.clone(),
        k: K,
        beta_pca: 1.0,
        use_evec: evec,
        use_eval: eval,
        scale: EigvalScale::PerSample,
        frozen,
    }
}

/// Worst relative error of the analytic gradient of `kind` at one random point.
pub fn gradient_error(kind: LossKind, point: u64) -> f64 {
    let mut r = rng(1000 + point);
    let gen = random_generator(&mut r);
    let critic = random_critic(&mut r);
    if kind == LossKind::CriticPenalty {
        let samples = (0..3)
            .map(|_| {
                let fakes = (0..P_RC).map(|_| normal_vec(&mut r, D)).collect();
                let eps = r.random_range(0.0..1.0);
                DiscriminatorSample::new(normal_vec(&mut r, D), normal_vec(&mut r, D), fakes, eps)
            })
            .collect();
        let obj = DiscriminatorObjective {
            dim: D,
            gp_weight: 10.0,
            samples,
        };
        return check_gradient(&obj, critic.params().values(), FD_STEP).max_rel_err;
    }
    let mut obj = GeneratorObjective::new(D, DZ, 1.0);
    for _ in 0..3 {
        let y = normal_vec(&mut r, D);
        let x = normal_vec(&mut r, D);
        let p = match kind {
            LossKind::Evec | LossKind::Eval | LossKind::PcaTotal => P_PCA,
            _ => P_RC,
        };
        let codes: Vec<DVector<f64>> = (0..p).map(|_| normal_vec(&mut r, DZ)).collect();
        let adversarial = AdvGenLoss {
            critic: critic.clone(),
            beta_adv: 0.3,
        };
        let loss: Box<dyn SampleLoss> = match kind {
            LossKind::Adversarial => Box::new(adversarial),
            LossKind::L1 => Box::new(L1Only { x: x.clone() }),
            LossKind::SdReward => Box::new(SdOnly),
            LossKind::RcTotal => Box::new(RcLoss {
                x: x.clone(),
                adversarial,
                beta_sd: 0.2,
            }),
            LossKind::Evec => Box::new(pca_loss(&x, true, false, two_pass_frozen(&gen, &y, &codes, &x))),
            LossKind::Eval => Box::new(pca_loss(&x, false, true, two_pass_frozen(&gen, &y, &codes, &x))),
            LossKind::PcaTotal => Box::new(pca_loss(&x, true, true, two_pass_frozen(&gen, &y, &codes, &x))),
            LossKind::CriticPenalty => unreachable!(),
        };
        obj.push(GeneratorTerm { y, codes, loss }).unwrap();
    }
    check_gradient(&obj, gen.params().values(), FD_STEP).max_rel_err
}

pub fn criterion_1() -> Outcome {
    let mut worst_all = 0.0f64;
    let mut parts = Vec::new();
    for kind in LossKind::ALL {
        let worst = (0..POINTS as u64).map(|p| gradient_error(kind, p)).fold(0.0, f64::max);
        worst_all = worst_all.max(worst);
        parts.push(format!("{} {:.1e}", kind.name(), worst));
    }
    Outcome {
        ok: worst_all < FD_TOL,
        detail: format!("max rel err over {POINTS} points: {}", parts.join(", ")),
    }
}

/// Largest discrepancy between the library posterior and the Schur oracle,
/// relative to the size of the quantities compared.
pub fn posterior_error(d: usize, instance: u64) -> f64 {
    let mut r = rng(2000 + 100 * d as u64 + instance);
    let prior = random_prior(&mut r, d);
    let mm = random_measurement(&mut r, d);
    let y = normal_vec(&mut r, d);
    let (mean, cov) = schur_posterior(&prior, &mm, &y);
    let got = analytic_posterior(&prior, &mm, &y).unwrap();
    let op = PosteriorOperator::new(&prior, &mm).unwrap();
    let scale = 1.0f64.max(mean.amax()).max(cov.amax());
    let errs = [
        (got.mean() - &mean).amax(),
        (got.cov() - &cov).amax(),
        (op.mean(&y).unwrap() - &mean).amax(),
        (op.cov() - &cov).amax(),
    ];
    errs.iter().fold(0.0f64, |m, e| m.max(*e)) / scale
}

pub fn w2_error(d: usize, instance: u64) -> f64 {
    let mut r = rng(3000 + 100 * d as u64 + instance);
    let (ma, mb) = (normal_vec(&mut r, d), normal_vec(&mut r, d));
    let (a, b) = (random_spd(&mut r, d), random_spd(&mut r, d));
    let oracle = w2_oracle(&ma, &a, &mb, &b);
    let got = w2_gaussian(&GaussianDist::new(ma, a).unwrap(), &GaussianDist::new(mb, b).unwrap()).unwrap();
    (got - oracle).abs() / oracle.abs().max(1.0)
}

/// (eigenvalue rel err, 1 - min |<v, u>|) against the sample covariance.
pub fn pca_error(d: usize, k: usize, instance: u64) -> (f64, f64) {
    let mut r = rng(4000 + 100 * d as u64 + instance);
    let n = 4 * d;
    // Well separated spectrum so eigenvectors are identifiable.
    let scales = DVector::from_fn(d, |i, _| 3.0 * 0.6f64.powi(i as i32));
    let samples: Vec<DVector<f64>> = (0..n)
        .map(|_| normal_vec(&mut r, d).component_mul(&scales) + DVector::from_element(d, 2.0))
        .collect();
    let pca = pca_extract(&samples, k).unwrap();
    let (vals, vecs) = sample_cov_eig(&samples);
    let lam = pca.eigvals() / (n - 1) as f64;
    let mut val_err = 0.0f64;
    let mut vec_err = 0.0f64;
    for i in 0..k {
        val_err = val_err.max((lam[i] - vals[i]).abs() / vals[i]);
        vec_err = vec_err.max(1.0 - pca.component(i).dot(&vecs.column(i)).abs());
    }
    (val_err, vec_err)
}

pub const ORACLE_TOL: f64 = 1e-8;
pub const PCA_VAL_TOL: f64 = 1e-10;
pub const PCA_VEC_TOL: f64 = 1e-10;

pub fn criterion_2() -> Outcome {
    let mut post = 0.0f64;
    let mut w2 = 0.0f64;
    let (mut pv, mut pu) = (0.0f64, 0.0f64);
    for d in [2usize, 4, 8] {
        for i in 0..50 {
            post = post.max(posterior_error(d, i));
            w2 = w2.max(w2_error(d, i));
            let (v, u) = pca_error(d, d.min(3), i);
            pv = pv.max(v);
            pu = pu.max(u);
        }
    }
    Outcome {
        ok: post < ORACLE_TOL && w2 < ORACLE_TOL && pv < PCA_VAL_TOL && pu < PCA_VEC_TOL,
        detail: format!(
            "posterior {post:.1e}, W2 {w2:.1e}, pca eigval {pv:.1e}, pca 1-|cos| {pu:.1e} (150 instances each)"
        ),
    }
}

/// (evec: live vs frozen-mean gradient, eval: live vs frozen-target gradient)
/// as max absolute differences, plus how much the eigenvalue targets would
/// have contributed if they were differentiated.
pub fn stopgrad_gaps(point: u64) -> (f64, f64, f64) {
    let mut r = rng(5000 + point);
    let gen = random_generator(&mut r);
    let y = normal_vec(&mut r, D);
    let x = normal_vec(&mut r, D);
    let codes: Vec<DVector<f64>> = (0..P_PCA).map(|_| normal_vec(&mut r, DZ)).collect();
    let frozen = two_pass_frozen(&gen, &y, &codes, &x);
    let grad_of = |loss: PcaLoss| {
        let mut obj = GeneratorObjective::new(D, DZ, 1.0);
        obj.push(GeneratorTerm {
            y: y.clone(),
            codes: codes.clone(),
            loss: Box::new(loss),
        })
        .unwrap();
        obj
    };
    let params = gen.params().values();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));

    let live = grad_of(pca_loss(&x, true, false, PcaStopGrad::default()))
        .value_and_grad(params)
        .1;
    let oracle = grad_of(pca_loss(
        &x,
        true,
        false,
        PcaStopGrad {
            mean: frozen.mean.clone(),
            lambda_tilde: None,
        },
    ))
    .value_and_grad(params)
    .1;
    let evec_gap = diff(&live, &oracle);

    let live = grad_of(pca_loss(&x, false, true, PcaStopGrad::default()))
        .value_and_grad(params)
        .1;
    let frozen_obj = grad_of(pca_loss(&x, false, true, frozen.clone()));
    let pinned = frozen_obj.value_and_grad(params).1;
    let eval_gap = diff(&live, &pinned);

    // Full derivative of the live loss, targets included, by differences.
    let full = pcagan::netcore::finite_difference_grad(
        &grad_of(pca_loss(
            &x,
            false,
            true,
            PcaStopGrad {
                mean: frozen.mean.clone(),
                lambda_tilde: None,
            },
        )),
        params,
        FD_STEP,
    );
    let target_path = diff(&full, &pinned);
    (evec_gap, eval_gap, target_path)
}

pub fn criterion_3() -> Outcome {
    let (mut evec, mut eval, mut path) = (0.0f64, 0.0f64, f64::INFINITY);
    for p in 0..POINTS as u64 {
        let (a, b, c) = stopgrad_gaps(p);
        evec = evec.max(a);
        eval = eval.max(b);
        path = path.min(c);
    }
    Outcome {
        ok: evec <= 1e-12 && eval <= 1e-12,
        detail: format!(
            "evec vs frozen-mean oracle {evec:.1e}, eval gradient through targets {eval:.1e} \
             (the target path would have contributed at least {path:.1e})"
        ),
    }
}

/// Monte-Carlo value of the controller ratio for `P` samples whose
/// covariance is `Sigma / t`, with the exact conditional mean.
pub fn trace_ratio_mc(p: usize, t: f64, draws: usize, seed: u64) -> f64 {
    let d = 6;
    let mut r = rng(6000 + seed);
    let cov = random_spd(&mut r, d);
    let l = cov.clone().cholesky().unwrap().l();
    let l_hat = &l / t.sqrt();
    let mu = normal_vec(&mut r, d);
    let (mut err, mut spread) = (0.0, 0.0);
    for _ in 0..draws {
        let x = &mu + &l * normal_vec(&mut r, d);
        let samples: Vec<DVector<f64>> = (0..p).map(|_| &mu + &l_hat * normal_vec(&mut r, d)).collect();
        let mean = samples.iter().fold(DVector::zeros(d), |acc, s| acc + s) / p as f64;
        err += (&x - &mean).norm_squared();
        spread += samples.iter().map(|s| (s - &mean).norm_squared()).sum::<f64>() / p as f64;
    }
    let stats = SdStats {
        p,
        err_sq_mean: err / draws as f64,
        spread_sq_mean: spread / draws as f64,
    };
    stats.ratio().unwrap()
}

pub fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, p) in [2usize, 8].into_iter().enumerate() {
        for (j, t) in [1.0, 2.0].into_iter().enumerate() {
            let got = trace_ratio_mc(p, t, 100_000, (2 * i + j) as u64);
            let want = (p as f64 * t + 1.0) / (p as f64 + 1.0);
            let err = (got - want).abs() / want;
            worst = worst.max(err);
            parts.push(format!("P={p} t={t}: {got:.4} vs {want:.4}"));
        }
    }
    Outcome {
        ok: worst < 0.03,
        detail: format!("{}; max rel err {:.2}%", parts.join(", "), 100.0 * worst),
    }
}

/// Mean of `column` over the rows matching `(axis_value, mode)`, and the
/// per-seed values keyed by seed.
fn column_by_seed(rows: &[pcagan::experiment::ResultRow], value: u64, mode: Mode, column: &str) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let p = r.point()?;
            (p.axis_value == value && p.mode == mode).then(|| (p.seed, r.number(column)))
        })
        .collect();
    out.sort_by_key(|(s, _)| *s);
    out
}

fn mean(v: &[(u64, f64)]) -> f64 {
    v.iter().map(|(_, x)| x).sum::<f64>() / v.len() as f64
}

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`: the one-sided sign-test p-value
/// for `k` of `n` untied pairs going one way.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut choose = 1.0;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += choose;
        }
        choose = choose * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

/// Significance level at which the sign test counts as contradicting an ordering.
pub const SIGN_TEST_ALPHA: f64 = 0.05;

pub fn criterion_5(out: &Path) -> Outcome {
    let spec = SweepSpec {
        axis: SweepAxis::D,
        values: vec![10, 20, 40],
        seeds: SEEDS.to_vec(),
        config: Profile::Desk.base(),
    };
    let summary = match run_sweep(&spec, Some(Profile::Desk), out, 1, false) {
        Ok(s) => s,
        Err(e) => {
            return Outcome {
                ok: false,
                detail: format!("sweep failed: {e}"),
            }
        }
    };
    let mut ok = summary.diverged == 0;
    let mut parts = Vec::new();
    for d in [10u64, 20, 40] {
        let pca = column_by_seed(&summary.rows, d, Mode::PcaGan, "val_w2_per_d");
        let rc = column_by_seed(&summary.rows, d, Mode::RcGan, "val_w2_per_d");
        let (mp, mr) = (mean(&pca), mean(&rc));
        let wins = pca.iter().zip(&rc).filter(|(a, b)| a.1 < b.1).count();
        let losses = pca.iter().zip(&rc).filter(|(a, b)| a.1 > b.1).count();
        // The ordering is contradicted when the seeds favor rcGAN significantly.
        let p_against = sign_test_p(losses, wins + losses);
        ok &= mp < mr && p_against >= SIGN_TEST_ALPHA;
        parts.push(format!(
            "d={d}: pcaGAN {mp:.5} rcGAN {mr:.5} wins {wins} losses {losses} p(rcGAN better) {p_against:.3}"
        ));
    }
    Outcome {
        ok,
        detail: format!("{} ({} diverged)", parts.join("; "), summary.diverged),
    }
}

pub fn criterion_6(out: &Path) -> Outcome {
    let mut config = Profile::Desk.base();
    config.data.dim = 40;
    let spec = SweepSpec {
        axis: SweepAxis::K,
        values: vec![10, 20, 40],
        seeds: SEEDS.to_vec(),
        config,
    };
    let summary = match run_sweep(&spec, Some(Profile::Desk), out, 1, false) {
        Ok(s) => s,
        Err(e) => {
            return Outcome {
                ok: false,
                detail: format!("sweep failed: {e}"),
            }
        }
    };
    let means: Vec<f64> = [10u64, 20, 40]
        .iter()
        .map(|k| mean(&column_by_seed(&summary.rows, *k, Mode::PcaGan, "val_w2")))
        .collect();
    let ok = summary.diverged == 0 && means.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Outcome {
        ok,
        detail: format!(
            "d=40 mean validation W2: K=10 {:.4}, K=20 {:.4}, K=40 {:.4} ({} diverged)",
            means[0], means[1], means[2], summary.diverged
        ),
    }
}

/// The numeric columns of a results file, with the wall-clock column left out.
pub fn numeric_fields(path: &Path) -> Vec<Vec<String>> {
    let rows = read_results(path).unwrap();
    rows.iter()
        .map(|r| {
            RESULTS_HEADER
                .iter()
                .filter(|c| **c != "wall_seconds")
                .map(|c| r.get(c).to_string())
                .collect()
        })
        .collect()
}

pub fn criterion_7(out: &Path) -> Outcome {
    let spec = SweepSpec {
        axis: SweepAxis::D,
        values: vec![10],
        seeds: vec![3],
        config: Profile::Desk.base(),
    };
    let mut files = Vec::new();
    for name in ["first", "second"] {
        let dir = out.join(name);
        match run_sweep(&spec, Some(Profile::Desk), &dir, 1, false) {
            Ok(s) => files.push(s.results_path),
            Err(e) => {
                return Outcome {
                    ok: false,
                    detail: format!("sweep failed: {e}"),
                }
            }
        }
    }
    let (a, b) = (numeric_fields(&files[0]), numeric_fields(&files[1]));
    let ckpt = |f: &Path| std::fs::read(f.parent().unwrap().join("runs/d10-pcaGAN-seed3/best.ckpt.json")).unwrap();
    let same_ckpt = ckpt(&files[0]) == ckpt(&files[1]);
    Outcome {
        ok: a == b && !a.is_empty() && same_ckpt,
        detail: format!(
            "{} rows, numeric fields equal: {}, best checkpoints byte-equal: {same_ckpt}",
            a.len(),
            a == b
        ),
    }
}

/// Brute-force list of `(epoch, step)` pairs at which a term gated from
/// `start_epoch` with period `m` should fire.
pub fn expected_steps(epochs: usize, steps_per_epoch: u64, m: u64, start_epoch: usize) -> Vec<(usize, u64)> {
    let mut out = Vec::new();
    let mut s = 0u64;
    for e in 0..epochs {
        for _ in 0..steps_per_epoch {
            s += 1;
            if e >= start_epoch && s.is_multiple_of(m) {
                out.push((e, s));
            }
        }
    }
    out
}

pub fn schedule_run(m: u64, e_evec: usize, e_eval: usize, mode: Mode) -> (pcagan::trainer::ScheduleAudit, u64, usize) {
    let mut r = rng(8000);
    let prior = random_prior(&mut r, 4);
    let mm = pcagan::gaussian_world::MeasurementModel::masked_even(4, 1e-2, Default::default()).unwrap();
    // 7 batches per epoch, so the lazy period straddles epoch boundaries.
    let counts = pcagan::datakit::SplitCounts {
        train: 52,
        val: 8,
        test: 4,
    };
    let data = pcagan::datakit::generate_dataset(&prior, &mm, counts, 5).unwrap();
    let epochs = 6;
    let config = TrainConfig {
        mode,
        epochs,
        batch_size: 8,
        lazy_period: m,
        e_evec,
        e_eval: Some(e_eval),
        k: Some(2),
        ..TrainConfig::default()
    };
    let out = train(&config, &data).unwrap();
    (out.audit, 7, epochs)
}

pub fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut checked = 0;
    for (m, e_evec, e_eval) in [(3u64, 1usize, 3usize), (5, 0, 2), (1, 2, 2), (100, 0, 0)] {
        let (audit, spe, epochs) = schedule_run(m, e_evec, e_eval, Mode::PcaGan);
        let want_evec = expected_steps(epochs, spe, m, e_evec);
        let want_eval = expected_steps(epochs, spe, m, e_eval);
        ok &= audit.evec_steps == want_evec && audit.eval_steps == want_eval;
        let total = spe * epochs as u64;
        ok &= audit.evec_steps.len() as u64 == lazy_step_count(e_evec as u64 * spe, total - e_evec as u64 * spe, m);
        checked += audit.evec_steps.len() + audit.eval_steps.len();
    }
    let (rc, _, _) = schedule_run(3, 0, 0, Mode::RcGan);
    ok &= rc.evec_steps.is_empty() && rc.eval_steps.is_empty();
    Outcome {
        ok,
        detail: format!("{checked} PCA evaluations matched s mod M = 0 after E_evec/E_eval; rcGAN had none"),
    }
}
