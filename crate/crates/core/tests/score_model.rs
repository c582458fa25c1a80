use pdm_core::expert::{build_dataset, ExpertConfig};
use pdm_core::rng::{fill_standard_normal, rng_from_seed};
use pdm_core::scenario::{generate, FamilyKind, ScenarioFamily};
use pdm_core::score_model::{
    conditioning, perturb, train, Example, NetworkLayout, ScoreModel, ScoreNetwork, TrainConfig,
};
use pdm_core::NoiseSchedule;

fn smoothed(h: &[f64], w: usize) -> (f64, f64) {
    let first = h[..w].iter().sum::<f64>() / w as f64;
    let last = h[h.len() - w..].iter().sum::<f64>() / w as f64;
    (first, last)
}

#[test]
fn perturbed_mean_matches_the_kernel() {
    let s = NoiseSchedule::default();
    let x0 = [0.3, -0.2, 0.05];
    let t = 20;
    let mut rng = rng_from_seed(17);
    let n = 100_000;
    let mut sum = [0.0; 3];
    for _ in 0..n {
        let (xt, _) = perturb(&x0, t, &s, &mut rng).unwrap();
        for k in 0..3 {
            sum[k] += xt[k];
        }
    }
    let (keep, sd) = ((1.0 - s.beta(t)).sqrt(), s.beta(t).sqrt());
    let se = sd / (n as f64).sqrt();
    for k in 0..3 {
        let mean = sum[k] / n as f64;
        assert!((mean - keep * x0[k]).abs() <= 3.0 * se, "coordinate {k}: {mean}");
    }
}

#[test]
fn single_trajectory_loss_halves_within_200_epochs() {
    let sc = generate(&ScenarioFamily::new(FamilyKind::NarrowCorridor, 3)).unwrap();
    let layout = NetworkLayout {
        n_agents: sc.n_agents(),
        horizon: 16,
        obstacle_slots: 8,
        hidden: vec![64, 64],
    };
    let line = pdm_core::TrajectorySet::straight_lines(&sc.starts, &sc.goals, 16);
    let ex = Example::new(&line, &sc, layout.obstacle_slots);
    let data = vec![ex; 32];
    let mut net = ScoreNetwork::new(layout, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        seed: 4,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &data, &NoiseSchedule::default(), &cfg).unwrap();
    let (first, last) = smoothed(&report.loss_history, 10);
    assert!(last < 0.5 * first, "smoothed loss {first} -> {last}");
    assert!(net.params().iter().all(|p| p.is_finite()));
}

#[test]
fn point_mass_score_is_recovered_at_the_top_level() {
    let sc = generate(&ScenarioFamily::new(FamilyKind::NarrowCorridor, 8)).unwrap();
    let layout = NetworkLayout {
        n_agents: sc.n_agents(),
        horizon: 8,
        obstacle_slots: 4,
        hidden: vec![32, 32],
    };
    let line = pdm_core::TrajectorySet::straight_lines(&sc.starts, &sc.goals, 8);
    let ex = Example::new(&line, &sc, layout.obstacle_slots);
    let schedule = NoiseSchedule::default();
    let mut net = ScoreNetwork::new(layout, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    train(&mut net, &vec![ex.clone(); 32], &schedule, &cfg).unwrap();

    let top = schedule.n_levels();
    let beta = schedule.beta(top);
    let mut rng = rng_from_seed(99);
    for _ in 0..20 {
        let mut xt = vec![0.0; ex.x0.len()];
        fill_standard_normal(&mut rng, &mut xt);
        let want: Vec<f64> = xt
            .iter()
            .zip(&ex.x0)
            .map(|(x, m)| -(x - (1.0 - beta).sqrt() * m) / beta)
            .collect();
        let got = net.forward(&xt, top, &schedule, &ex.cond).unwrap();
        let dot: f64 = got.iter().zip(&want).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (norm(&got) * norm(&want)) >= 0.9);
    }
}

#[test]
fn trained_network_responds_to_conditioning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExpertConfig::default();
    let family = ScenarioFamily::new(FamilyKind::NarrowCorridor, 21);
    build_dataset(&[family], 16, &cfg, dir.path()).unwrap();
    let ds = pdm_core::expert::load_dataset(dir.path()).unwrap();
    let layout = NetworkLayout {
        n_agents: 2,
        horizon: 32,
        obstacle_slots: 25,
        hidden: vec![48, 48],
    };
    let examples: Vec<Example> = ds
        .items
        .iter()
        .map(|it| Example::new(&it.trajectory, &it.scenario, layout.obstacle_slots))
        .collect();
    let schedule = NoiseSchedule::default();
    let mut net = ScoreNetwork::new(layout, 5).unwrap();
    let tc = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    train(&mut net, &examples, &schedule, &tc).unwrap();

    let mut rng = rng_from_seed(3);
    let mut responsive = 0;
    let probes = 50;
    for p in 0..probes {
        let a = &ds.items[p % ds.items.len()].scenario;
        let b = generate(&ScenarioFamily::new(FamilyKind::NarrowCorridor, 1000 + p as u64)).unwrap();
        let mut x = vec![0.0; 128];
        fill_standard_normal(&mut rng, &mut x);
        x.iter_mut().for_each(|v| *v *= 0.3);
        let t = 1 + p % (schedule.n_levels() - 1);
        let mut sa = vec![0.0; 128];
        let mut sb = vec![0.0; 128];
        net.score(&x, t, &schedule, &conditioning(a, 25), &mut sa).unwrap();
        net.score(&x, t, &schedule, &conditioning(&b, 25), &mut sb).unwrap();
        let diff: f64 = sa.iter().zip(&sb).map(|(u, v)| (u - v).abs()).sum();
        if diff > 1e-9 {
            responsive += 1;
        }
    }
    assert!(responsive * 10 >= probes * 9, "{responsive}/{probes}");
}
