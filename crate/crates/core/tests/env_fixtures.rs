use mombo::envs::{
    generate_dataset, make_env, read_dataset, reference_returns, write_dataset, Behavior, BehaviorMix, ENV_NAMES,
};

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn reference_returns_reproduce_on_fresh_seed() {
    for name in ENV_NAMES {
        let env = make_env(name).unwrap();
        let (random, expert) = reference_returns(&env, 2000, 0);
        assert_eq!(random, env.random_return, "{name}");
        assert_eq!(expert, env.expert_return, "{name}");
        let (random, expert) = reference_returns(&env, 2000, 99);
        assert!((random - env.random_return).abs() < 0.02 * env.random_return + 0.5, "{name}: {random}");
        assert!((expert - env.expert_return).abs() < 0.01 * env.expert_return, "{name}: {expert}");
    }
}

#[test]
fn linereach_reference_controller_fixture() {
    let env = make_env("linereach").unwrap();
    assert!(env.expert_return >= 90.0);
}

#[test]
fn pure_datasets_match_reference_returns() {
    for name in ENV_NAMES {
        let env = make_env(name).unwrap();
        let random = generate_dataset(&env, BehaviorMix::pure(Behavior::Random), 50_000, 7).unwrap();
        let (m, se) = mean_and_se(&random.episode_returns(env.horizon));
        assert!((m - env.random_return).abs() < 4.0 * se + 0.5, "{name} random {m} ± {se}");

        let expert = generate_dataset(&env, BehaviorMix::pure(Behavior::Expert), 50_000, 7).unwrap();
        let (m, _) = mean_and_se(&expert.episode_returns(env.horizon));
        let score = env.normalized_return(m).unwrap();
        assert!((score - 100.0).abs() < 2.0, "{name} expert {score}");
    }
}

#[test]
fn medium_behavior_fixture() {
    // Measured once: the noisy controller stays close to the reference.
    let env = make_env("linereach").unwrap();
    let ds = generate_dataset(&env, BehaviorMix::pure(Behavior::Medium), 50_000, 7).unwrap();
    let (m, _) = mean_and_se(&ds.episode_returns(env.horizon));
    let score = env.normalized_return(m).unwrap();
    assert!((score - 98.8).abs() < 1.0, "{score}");
}

#[test]
fn same_seed_same_file() {
    let env = make_env("linereach").unwrap();
    let mix = BehaviorMix {
        demo: Behavior::Expert,
        ratio: 0.1,
    };
    let dir = std::env::temp_dir().join(format!("mombo-ds-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (p1, p2) = (dir.join("a.jsonl"), dir.join("b.jsonl"));
    write_dataset(&p1, &generate_dataset(&env, mix, 2_000, 42).unwrap()).unwrap();
    write_dataset(&p2, &generate_dataset(&env, mix, 2_000, 42).unwrap()).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let back = read_dataset(&p1).unwrap();
    assert_eq!(back.len(), 2_000);
    assert_eq!(back.meta.mix, "mixed-0.1-expert");
    std::fs::remove_dir_all(&dir).unwrap();
}
