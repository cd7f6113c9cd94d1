//! One PASS/FAIL line per headline criterion. Runs as a plain binary so the
//! lines appear in order; exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};

use rebel_core::bilevel::{run_envelope_suite, run_lower_bound_suite, run_penalty_suite, VerifyConfig};
use rebel_core::config::RunConfig;
use rebel_core::envs::{BehaviorTag, GridSpec, Segment, Trajectory};
use rebel_core::math::{finite_diff_grad4, Mlp, NetSpec, OutputActivation};
use rebel_core::policy::{QPolicy, TdConfig, Transition};
use rebel_core::reward::{bt_prob, rebel_loss, rebel_loss_grad, RewardModel};
use rebel_core::teacher::{myopic_return, teacher_label, Label, Preference, PreferenceRecord, TeacherConfig, TeacherSource};
use rebel_core::trainer::{run_experiment, seed_csv_path, Trainer};
use rebel_core::{ParamVector, Result, SimRng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(n: usize, name: &str, run: impl FnOnce() -> Result<Outcome>) -> bool {
    let t0 = Instant::now();
    let (passed, detail) = match run() {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {n} {name}: {detail} ({:.1} s)", t0.elapsed().as_secs_f64());
    passed
}

fn within(t0: Instant, budget_s: f64) -> (bool, String) {
    let s = t0.elapsed().as_secs_f64();
    (s < budget_s, format!("runtime {s:.1} s < {budget_s} s"))
}

fn envelope() -> Result<Outcome> {
    let t0 = Instant::now();
    let config = VerifyConfig::default();
    let check = run_envelope_suite(&GridSpec::default(), &config)?;
    let (fast, time) = within(t0, 30.0);
    Ok(Outcome {
        passed: check.passed && check.tolerance == 1e-3 && config.envelope_draws == 20 && fast,
        detail: format!(
            "max |fd - partial| = {:.3e} <= {:.0e} over {} draws, temperature {}; {time}",
            check.achieved, check.tolerance, config.envelope_draws, config.temperature
        ),
    })
}

fn lower_bound() -> Result<Outcome> {
    let t0 = Instant::now();
    let config = VerifyConfig::default();
    let check = run_lower_bound_suite(&GridSpec::default(), &config)?;
    let (fast, time) = within(t0, 10.0);
    Ok(Outcome {
        passed: check.passed && check.tolerance == 1e-10 && config.lower_bound_draws == 200 && fast,
        detail: format!(
            "bound held, max |gap - lambda V(pi)| = {:.3e} <= {:.0e} over {} draws; {time}",
            check.achieved, check.tolerance, config.lower_bound_draws
        ),
    })
}

fn penalty() -> Result<Outcome> {
    let t0 = Instant::now();
    let config = VerifyConfig::default();
    let (check, sweep, _) = run_penalty_suite(&GridSpec::default(), &config)?;
    let gaps: Vec<String> = sweep
        .iter()
        .map(|r| format!("{}:{:.4}", r.lambda, r.constraint_gap))
        .collect();
    let lambdas: Vec<f64> = sweep.iter().map(|r| r.lambda).collect();
    let monotone = sweep
        .windows(2)
        .all(|w| w[1].constraint_gap <= w[0].constraint_gap + 1e-3);
    let (fast, time) = within(t0, 120.0);
    Ok(Outcome {
        passed: monotone && lambdas == [0.0, 0.1, 1.0, 10.0] && check.passed && fast,
        detail: format!("gap by lambda [{}] nonincreasing within 1e-3; {time}", gaps.join(", ")),
    })
}

/// Elementwise `|a - b| / max(|a|, |b|, 1e-8)`, worst coordinate.
fn max_rel_err(analytic: &ParamVector, fd: &ParamVector) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(fd.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn random_segment(rng: &mut SimRng, h: usize, dim: usize, n_actions: usize, tag: BehaviorTag) -> Segment {
    let states = (0..(h + 1) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let actions = (0..h).map(|_| rng.gen_range(0..n_actions)).collect();
    Segment::new(states, dim, actions, tag).unwrap()
}

// The oracle is the fourth-order central stencil: at the two-point rule's
// usable step its rounding noise (~1e-10) dominates near-zero coordinates.
fn gradients() -> Result<Outcome> {
    let t0 = Instant::now();
    let mut rng = SimRng::seed_from_u64(2024);
    let (mut worst_reward, mut worst_td) = (0.0_f64, 0.0_f64);
    for i in 0..50 {
        let (dim, na, h) = (rng.gen_range(2..5), rng.gen_range(2..6), rng.gen_range(2..8));
        let hidden = vec![rng.gen_range(3..9); rng.gen_range(1..3)];
        let model = RewardModel::new(dim, na, hidden.clone(), i)?;
        let records: Vec<PreferenceRecord> = (0..4)
            .map(|_| {
                let label = if rng.gen() { Preference::A } else { Preference::B };
                let (a, b) = (
                    random_segment(&mut rng, h, dim, na, BehaviorTag::Pretrain),
                    random_segment(&mut rng, h, dim, na, BehaviorTag::Pretrain),
                );
                PreferenceRecord::new(a, b, label, TeacherSource::Scripted).unwrap()
            })
            .collect();
        let agents: Vec<Segment> = (0..3)
            .map(|_| random_segment(&mut rng, h, dim, na, BehaviorTag::PolicyIter(1)))
            .collect();
        let batch: Vec<_> = records.iter().collect();
        let agent: Vec<_> = agents.iter().collect();
        let (lambda, gamma) = (rng.gen_range(0.0..2.0), rng.gen_range(0.8..0.99));
        let (_, g) = rebel_loss_grad(&model, &batch, &agent, lambda, gamma)?;
        let fd = finite_diff_grad4(
            |p: &ParamVector| {
                let mut m = model.clone();
                m.net.params = p.clone();
                rebel_loss(&m, &batch, &agent, lambda, gamma).unwrap().total
            },
            model.params(),
            1e-3,
        )?;
        worst_reward = worst_reward.max(max_rel_err(&g, &fd));

        let spec = NetSpec::new(dim, hidden, na, OutputActivation::Identity)?;
        let config = TdConfig {
            alpha: rng.gen_range(0.05..1.0),
            ..TdConfig::default()
        };
        let mut policy = QPolicy::from_net(Mlp::new(spec, 100 + i)?, config)?;
        // a target that differs from the online net
        policy.net.params.as_mut_slice().iter_mut().for_each(|p| *p += rng.gen_range(-0.1..0.1));
        let data: Vec<(Vec<f64>, usize, Vec<f64>, f64)> = (0..8)
            .map(|_| {
                let s = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s2 = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (s, rng.gen_range(0..na), s2, rng.gen_range(0.0..1.0))
            })
            .collect();
        let tb: Vec<Transition> = data
            .iter()
            .map(|(s, a, s2, r)| Transition {
                state: s,
                action: *a,
                next_state: s2,
                reward: *r,
            })
            .collect();
        let (_, g) = policy.td_loss_grad(&tb, gamma)?;
        let fd = finite_diff_grad4(
            |p: &ParamVector| {
                let mut q = policy.clone();
                q.net.params = p.clone();
                q.td_loss_grad(&tb, gamma).unwrap().0
            },
            policy.params(),
            1e-3,
        )?;
        worst_td = worst_td.max(max_rel_err(&g, &fd));
    }
    let (fast, time) = within(t0, 60.0);
    Ok(Outcome {
        passed: worst_reward <= 1e-5 && worst_td <= 1e-5 && fast,
        detail: format!(
            "max relative error: reward loss {worst_reward:.2e}, TD loss {worst_td:.2e} (<= 1e-5, 50 instances each); {time}"
        ),
    })
}

fn traj(rewards: Vec<f64>) -> Trajectory {
    let n = rewards.len();
    let seg = Segment::new(vec![0.0; n + 1], 1, vec![0; n], BehaviorTag::Eval).unwrap();
    Trajectory::new(seg, rewards).unwrap()
}

fn bradley_terry() -> Result<Outcome> {
    let mut rng = SimRng::seed_from_u64(7);
    let (mut norm, mut shift) = (0.0_f64, 0.0_f64);
    for _ in 0..100_000 {
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        norm = norm.max((bt_prob(a, b) + bt_prob(b, a) - 1.0).abs());
        shift = shift.max((bt_prob(a + c, b + c) - bt_prob(a, b)).abs());
    }
    // label frequencies against eps + (1 - 2 eps) sigma(beta (R_a - R_b))
    let cases = [
        (vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], 5.0, 0.1, 0.9),
        (vec![0.3, 0.2], vec![0.1, 0.5], 2.0, 0.0, 1.0),
        (vec![1.0; 4], vec![0.0; 4], 0.5, 0.25, 0.95),
        (vec![0.0, 0.0], vec![0.0, 0.0], 5.0, 0.1, 0.9),
    ];
    let n = 10_000;
    let mut worst_z = 0.0_f64;
    for (ra, rb, beta, eps, g) in cases {
        let (a, b) = (traj(ra), traj(rb));
        let config = TeacherConfig {
            beta,
            epsilon_mistake: eps,
            gamma_myopic: Some(g),
            skip_threshold: 0.0,
        };
        let diff = myopic_return(a.true_rewards(), g) - myopic_return(b.true_rewards(), g);
        let p = eps + (1.0 - 2.0 * eps) / (1.0 + (-beta * diff).exp());
        let mut hits = 0;
        for _ in 0..n {
            if teacher_label(&a, &b, &config, 0.99, &mut rng)? == Label::PreferA {
                hits += 1;
            }
        }
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        worst_z = worst_z.max((hits as f64 / n as f64 - p).abs() / sd);
    }
    Ok(Outcome {
        passed: norm <= 1e-12 && shift <= 1e-12 && worst_z <= 3.0,
        detail: format!(
            "normalisation {norm:.1e}, shift {shift:.1e} (<= 1e-12, 1e5 pairs); worst label deviation {worst_z:.2} sigma (<= 3, 1e4 samples x 4 cases)"
        ),
    })
}

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn determinism() -> Result<Outcome> {
    let config = RunConfig::load(&configs_dir().join("smoke.toml"))?;
    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_experiment(&config, &a, None)?;
    run_experiment(&config, &b, None)?;
    let mut identical = true;
    for &s in &config.train.seeds {
        identical &= std::fs::read(seed_csv_path(&a, s))? == std::fs::read(seed_csv_path(&b, s))?;
    }
    Ok(Outcome {
        passed: identical,
        detail: format!(
            "smoke config (T={}, M={}, k1={}), seeds {:?}: per-seed CSVs {}",
            config.train.iterations,
            config.train.pairs_per_session,
            config.train.reward_steps,
            config.train.seeds,
            if identical { "bit-identical" } else { "differ" }
        ),
    })
}

/// Mean final true return over the configured seeds.
fn final_return(config: &RunConfig) -> Result<f64> {
    let mut total = 0.0;
    for &seed in &config.train.seeds {
        let mut t = Trainer::new(config.clone(), seed, None)?;
        let mut last = 0.0;
        for _ in 0..config.train.iterations {
            last = t.iterate()?.true_return_mean;
        }
        total += last;
    }
    Ok(total / config.train.seeds.len() as f64)
}

fn comparison() -> Result<Outcome> {
    let t0 = Instant::now();
    let base = RunConfig::load(&configs_dir().join("point_mass.toml"))?;
    let labels = base.train.feedback_iterations * base.train.pairs_per_session;
    let fixed = base.teacher.beta == 5.0
        && base.teacher.epsilon_mistake == 0.1
        && labels == 600
        && base.train.seeds.len() == 10;

    let mut oracle = base.clone();
    oracle.train.oracle_reward = true;
    let oracle_ret = final_return(&oracle)?;
    let with_lambda = |lambda: f64| {
        let mut c = base.clone();
        c.train.lambda = lambda;
        final_return(&c)
    };
    let baseline = with_lambda(0.0)?;
    let mut rebel = Vec::new();
    for lambda in [0.1, 0.5, 1.0] {
        rebel.push((lambda, with_lambda(lambda)?));
    }
    let (best_lambda, best) = rebel
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let (fast, time) = within(t0, 1800.0);
    let per_lambda: Vec<String> = rebel.iter().map(|(l, r)| format!("{l}:{r:.3}")).collect();
    Ok(Outcome {
        passed: fixed && best >= baseline && best >= 0.7 * oracle_ret && fast,
        detail: format!(
            "mean final return over {} seeds, {labels} labels: REBEL best lambda={best_lambda} {best:.3} \
             (per lambda {}), lambda=0 {baseline:.3}, oracle {oracle_ret:.3}; need best >= lambda=0 and >= {:.3}; {time}",
            base.train.seeds.len(),
            per_lambda.join(", "),
            0.7 * oracle_ret
        ),
    })
}

fn main() {
    let results = [
        report(1, "envelope identity", envelope),
        report(2, "lower bound", lower_bound),
        report(3, "penalty sweep", penalty),
        report(4, "gradient suite", gradients),
        report(5, "Bradley-Terry invariants", bradley_terry),
        report(6, "determinism", determinism),
        report(7, "point-mass comparison", comparison),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
