use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use glassflow::config::RunConfig;
use glassflow::harness::{evaluate, run_episode, Policy};
use glassflow::ppo::{
    clipped_surrogate, compute_gae, ppo_gradient_check, probability_ratio, Minibatch,
    PolicyParams, PpoConfig, Trainer,
};
use glassflow::tact::{
    arms_used, build_timetable, decompose_tact, find_exchanges, glass_breakdown,
    process_tact_general, process_tact_single, TactTerms,
};
use glassflow::world::{Command, Event, EventKind, GlassId, GlassState, WorldConfig, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n} [{name}]: {verdict} ({:.1} s) {detail}\n", elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn load(name: &str) -> RunConfig {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    RunConfig::load(Path::new(&path)).unwrap()
}

fn random_terms(rng: &mut ChaCha8Rng, k: usize) -> TactTerms {
    let mut v = |n: usize, hi: u64| (0..n).map(|_| rng.gen_range(0..hi)).collect::<Vec<_>>();
    let scalars = v(4, 500);
    TactTerms {
        load: scalars[0],
        unload: scalars[1],
        get: scalars[2] % 50,
        put: scalars[3] % 50,
        rotations: v(k, 500),
        process: v(k, 5000),
        waits: v(k, 500),
    }
}

#[test]
fn criterion_1_tact_arithmetic() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let k = rng.gen_range(1..8);
        let t = random_terms(&mut rng, k);
        let mut oracle = t.load + t.unload + (k as u64 + 1) * (t.get + t.put);
        oracle += (0..k).map(|i| t.rotations[i] + t.process[i] + t.waits[i]).sum::<u64>();
        let split = decompose_tact(&t, k).unwrap();
        let general = process_tact_general(&t, k).unwrap();
        if split.fixed + split.delta != general || general != oracle {
            bad += 1;
        }
    }
    let single = TactTerms {
        rotations: vec![1, 1, 1],
        get: 1,
        put: 1,
        process: vec![30],
        waits: vec![0],
        unload: 2,
        ..Default::default()
    };
    let general = TactTerms {
        load: 2,
        unload: 2,
        rotations: vec![1, 1, 1],
        get: 1,
        put: 1,
        process: vec![30, 30, 30],
        waits: vec![0, 0, 0],
    };
    let split = decompose_tact(&general, 3).unwrap();
    let examples = process_tact_single(&single).unwrap() == 39
        && process_tact_general(&general, 3).unwrap() == 105
        && (split.fixed, split.delta) == (102, 3);
    let elapsed = start.elapsed();
    let pass = bad == 0 && examples && elapsed < Duration::from_secs(1);
    report(1, "tact arithmetic", pass, elapsed, &format!("{bad}/1000 mismatches, worked examples {examples}"));
    assert!(pass);
}

#[test]
fn criterion_2_ppo_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut ratio_ok = true;
    for _ in 0..100 {
        let params = PolicyParams::init(8, 5, 16, &mut rng);
        let obs: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for a in 0..5 {
            ratio_ok &= probability_ratio(&params, &params, &obs, a).unwrap() == 1.0;
        }
    }

    let mut clip_violations = 0;
    for _ in 0..100_000 {
        let r = rng.gen_range(0.0..4.0);
        let adv = rng.gen_range(-10.0..10.0);
        let eps = rng.gen_range(0.01..1.0);
        if clipped_surrogate(r, adv, eps) > r * adv {
            clip_violations += 1;
        }
    }

    let mut gae_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=64);
        let gamma = rng.gen_range(0.0..1.0);
        let lambda = rng.gen_range(0.0..1.0);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let bootstrap = rng.gen_range(-5.0..5.0);
        let (adv, _) = compute_gae(&rewards, &values, bootstrap, gamma, lambda).unwrap();
        for t in 0..n {
            let mut expected = 0.0;
            for l in 0..n - t {
                let next = if t + l + 1 < n { values[t + l + 1] } else { bootstrap };
                let delta = rewards[t + l] + gamma * next - values[t + l];
                expected += (gamma * lambda).powi(l as i32) * delta;
            }
            gae_err = gae_err.max((adv[t] - expected).abs());
        }
    }

    let config = PpoConfig { beta_eff: 0.01, ..PpoConfig::default() };
    let mut grad_err: f64 = 0.0;
    for _ in 0..20 {
        let old = PolicyParams::init(10, 5, 16, &mut rng);
        let mut params = old.clone();
        params.for_each_param_mut(|_, p| *p += rng.gen_range(-0.05..0.05));
        let mut batch = Minibatch::default();
        for _ in 0..32 {
            batch.observations.push((0..10).map(|_| rng.gen_range(-1.0..1.0)).collect());
            batch.actions.push(rng.gen_range(0..5));
            batch.advantages.push(rng.gen_range(-2.0..2.0));
            batch.returns.push(rng.gen_range(-3.0..3.0));
        }
        batch.set_old_policy(&old).unwrap();
        grad_err = grad_err.max(ppo_gradient_check(&params, &batch, &config, 1e-5, 300, &mut rng).unwrap());
    }

    let elapsed = start.elapsed();
    let pass = ratio_ok
        && clip_violations == 0
        && gae_err <= 1e-10
        && grad_err <= 1e-4
        && elapsed < Duration::from_secs(60);
    report(
        2,
        "ppo oracles",
        pass,
        elapsed,
        &format!(
            "ratio==1 {ratio_ok}, clip violations {clip_violations}, gae max err {gae_err:.2e}, gradcheck max rel err {grad_err:.2e}"
        ),
    );
    assert!(pass);
}

fn random_command(rng: &mut ChaCha8Rng, chambers: usize, arms: usize) -> Command {
    match rng.gen_range(0..4) {
        0 => Command::RotateTo(rng.gen_range(0..chambers)),
        1 => Command::ArmLoad(rng.gen_range(0..arms)),
        2 => Command::ArmUnload(rng.gen_range(0..arms)),
        _ => Command::Wait,
    }
}

/// Drives a world with random commands, counting invariant violations.
fn drive(config: WorldConfig, seed: u64, ticks: u64) -> (Vec<Event>, u64) {
    let mut world = WorldState::build(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chambers, arms) = (world.num_chambers(), world.num_arms());
    let mut states: BTreeMap<GlassId, GlassState> = BTreeMap::new();
    let mut violations = 0;
    for _ in 0..ticks {
        let cmd = random_command(&mut rng, chambers, arms);
        let busy = world.is_busy();
        let before = world.clone();
        let accepted = world.issue_command(cmd).is_ok();
        if (busy && accepted) || (!accepted && world != before) {
            violations += 1;
        }
        let loader_busy = world.chambers[world.loader()].occupant.is_some();
        let events = world.tick();
        if loader_busy && events.iter().any(|e| matches!(e.kind, EventKind::GlassSpawned { .. })) {
            violations += 1;
        }
        if !world.conservation_holds() {
            violations += 1;
        }
        for (id, glass) in &world.glasses {
            if let Some(prev) = states.insert(*id, glass.state) {
                let regressed = if prev.is_terminal() { prev != glass.state } else { glass.state.rank() < prev.rank() };
                if regressed {
                    violations += 1;
                }
            }
        }
    }
    (world.event_log.clone(), violations)
}

#[test]
fn criterion_3_simulator_invariants() {
    let start = Instant::now();
    let mut violations = 0;
    let mut deterministic = true;
    let mut ticks = 0;
    for (i, (k, arms, speed)) in [(0, 1, 0.01), (1, 1, 0.012), (2, 2, 0.008), (3, 2, 0.01), (3, 2, 0.02)]
        .into_iter()
        .enumerate()
    {
        let mut config = WorldConfig::default();
        config.process.num_process_chambers = k;
        config.process.num_arms = arms;
        config.process.process_time_s = 3.0;
        config.process.glass_input_interval_s = 2.5;
        config.physical.transfer_speed = speed;
        let (log_a, v) = drive(config.clone(), 100 + i as u64, 20_000);
        let (log_b, _) = drive(config, 100 + i as u64, 20_000);
        violations += v;
        deterministic &= log_a == log_b;
        ticks += 20_000;
    }
    let elapsed = start.elapsed();
    let pass = violations == 0 && deterministic && elapsed < Duration::from_secs(60);
    report(
        3,
        "simulator invariants",
        pass,
        elapsed,
        &format!("{ticks} ticks, {violations} violations, repeat logs identical {deterministic}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_rotation_speed_split_test() {
    let start = Instant::now();
    let base = load("production.toml");
    let safe = base.geometry.speed_reference;
    let mut lines = Vec::new();
    let mut pass = true;
    for factor in [0.5, 1.0, 1.5, 2.0] {
        let mut config = base.clone();
        config.physical.transfer_speed = factor * safe;
        let env = config.env_config();
        let a = run_episode(&Policy::Baseline, &env, 4, 3000, None).unwrap();
        let b = run_episode(&Policy::Baseline, &env, 4, 3000, None).unwrap();
        pass &= a.events == b.events;
        let m = &a.metrics;
        let lost: HashSet<GlassId> = a
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::GlassDropped { glass, .. } | EventKind::GlassBroken { glass, .. } => Some(glass),
                _ => None,
            })
            .collect();
        let picked: HashSet<GlassId> = a
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::GlassPicked { glass, .. } => Some(glass),
                _ => None,
            })
            .collect();
        let placed = a.events.iter().filter(|e| matches!(e.kind, EventKind::GlassPlaced { .. })).count();
        let ok = if factor <= 1.0 {
            lost.is_empty() && m.successes > 0
        } else {
            // every picked glass is lost on its first carried rotation, except
            // ones still on an arm when the run stops
            !lost.is_empty()
                && lost.is_subset(&picked)
                && picked.len() - lost.len() <= config.process.num_arms
                && placed == 0
                && m.successes == 0
        };
        pass &= ok;
        lines.push(format!(
            "{:.3}: picked {} lost {} processed {}",
            factor * safe,
            picked.len(),
            lost.len(),
            m.successes
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    report(4, "rotation-speed split test", pass, elapsed, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_5_baseline_soundness() {
    let start = Instant::now();
    let config = load("production.toml");
    let env = config.env_config();
    let episode = run_episode(&Policy::Baseline, &env, 5, 1_000_000, Some(2000)).unwrap();
    let m = &episode.metrics;
    let world = WorldState::build(config.world_config(), 0).unwrap();
    let handling = world.handling_ticks() as u64;
    let process = config.world_config().process.process_ticks() as u64;
    let unloaded: Vec<GlassId> = episode
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::GlassUnloaded { glass, processed: true, .. } => Some(glass),
            _ => None,
        })
        .collect();
    let mut worst = 0i64;
    for &glass in &unloaded {
        let b = glass_breakdown(&episode.events, glass).unwrap();
        let split = decompose_tact(&b.terms(handling, process), b.stations.max(1) as usize).unwrap();
        worst = worst.max((b.tact() as i64 - split.total() as i64).abs());
    }
    let elapsed = start.elapsed();
    let pass = m.successes >= 2000
        && m.failures() == 0
        && unloaded.len() as u64 == m.successes
        && worst <= 1
        && elapsed < Duration::from_secs(120);
    report(
        5,
        "baseline soundness",
        pass,
        elapsed,
        &format!(
            "{} processed, {} drops, {} breaks, {} incomplete, worst decomposition gap {worst} ticks",
            m.successes, m.drops, m.breaks, m.incompletes
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_basic_experiment() {
    let start = Instant::now();
    let config = load("basic.toml");
    let mut ratios = Vec::new();
    let mut windows = Vec::new();
    for seed in 1..=3 {
        let mut trainer = Trainer::new(config.clone(), seed).unwrap();
        trainer.run(|_, _| {}).unwrap();
        assert!(trainer.env_steps <= config.ppo.max_steps);
        let (s, f) = trainer.best_window.unwrap_or((0, 1));
        windows.push(format!("seed {seed} {s}:{f}"));
        ratios.push(glassflow::harness::success_ratio(s as u64, f as u64));
    }
    let at_ten = ratios.iter().filter(|&&r| r >= 10.0).count();
    let best = ratios.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = at_ten >= 2 && best >= 20.0;
    report(
        6,
        "basic experiment",
        pass,
        elapsed,
        &format!("best trailing windows {}; {at_ten}/3 at >= 10:1", windows.join(", ")),
    );
    assert!(pass);
}

struct ExtensionRun {
    gamma: f64,
    seed: u64,
    reward: f64,
    params: PolicyParams,
}

const EVAL_EPISODES: usize = 3;
const EVAL_HORIZON: u64 = 2048;

fn extension_runs() -> &'static (Vec<ExtensionRun>, Duration) {
    static RUNS: OnceLock<(Vec<ExtensionRun>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let base = load("extension.toml");
        let mut runs = Vec::new();
        for gamma in [0.01, 0.99] {
            for seed in 1..=3 {
                let mut config = base.clone();
                config.ppo.gamma = gamma;
                let mut trainer = Trainer::new(config.clone(), seed).unwrap();
                trainer.run(|_, _| {}).unwrap();
                let policy = Policy::Greedy(trainer.params.clone());
                let m = evaluate(&policy, &config.env_config(), EVAL_EPISODES, EVAL_HORIZON, 1000 + seed).unwrap();
                runs.push(ExtensionRun { gamma, seed, reward: m.total_reward / EVAL_EPISODES as f64, params: trainer.params });
            }
        }
        (runs, start.elapsed())
    })
}

#[test]
fn criterion_7_gamma_direction() {
    let (runs, elapsed) = extension_runs();
    let mean = |g: f64| {
        let r: Vec<f64> = runs.iter().filter(|r| r.gamma == g).map(|r| r.reward).collect();
        r.iter().sum::<f64>() / r.len() as f64
    };
    let (low, high) = (mean(0.01), mean(0.99));
    let per_seed: Vec<String> =
        runs.iter().map(|r| format!("g{} s{} {:.1}", r.gamma, r.seed, r.reward)).collect();
    let pass = low > high && *elapsed < Duration::from_secs(3600);
    report(
        7,
        "gamma direction",
        pass,
        *elapsed,
        &format!("mean greedy reward gamma 0.01 = {low:.1}, gamma 0.99 = {high:.1} [{}]", per_seed.join(", ")),
    );
    assert!(pass, "gamma 0.01 mean {low} does not exceed gamma 0.99 mean {high}");
}

#[test]
fn criterion_8_trained_policy_behavior() {
    let (runs, _) = extension_runs();
    let start = Instant::now();
    let best = runs.iter().max_by(|a, b| a.reward.total_cmp(&b.reward)).unwrap();
    let config = load("extension.toml");
    let episode =
        run_episode(&Policy::Greedy(best.params.clone()), &config.env_config(), 7, 100_000, Some(50)).unwrap();
    let timetable = build_timetable(&episode.events).unwrap();
    let arms = arms_used(&episode.events);
    let exchanges = find_exchanges(&episode.events);
    let left = episode.metrics.successes + episode.metrics.failures();
    let pass = left >= 50 && !timetable.is_empty() && arms.len() == 2 && !exchanges.is_empty();
    report(
        8,
        "trained policy behavior",
        pass,
        start.elapsed(),
        &format!(
            "best run gamma {} seed {}: {left} glasses out, arms used {arms:?}, {} exchanges, {} timetable rows",
            best.gamma,
            best.seed,
            exchanges.len(),
            timetable.resources().iter().map(|r| timetable.rows_for(*r).count()).sum::<usize>()
        ),
    );
    assert!(pass);
}
