use std::fs;

use blds::experiment::{
    aggregate, mean_std, run_pe_check, run_recover, run_sweep, write_sweep, ExperimentConfig,
    TrialStatus,
};
use blds::model::{random_system, Dims};
use blds::simulate::{InputDistribution, NoiseConfig};
use blds::{fit_markov, generate_trajectory, true_markov, FeatureConfig};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n: 3,
        p: 2,
        m: 2,
        l_list: vec![2, 3],
        t_list: vec![150, 300],
        trials: 3,
        input_kinds: InputDistribution::ALL.to_vec(),
        base_seed: 42,
        ..Default::default()
    }
}

fn without_first_line(s: &str) -> &str {
    s.split_once('\n')
        .map(|(first, rest)| {
            assert!(first.starts_with('#'));
            rest
        })
        .unwrap()
}

#[test]
fn identical_configs_give_identical_raw_csv() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_sweep(a.path(), &cfg, &run_sweep(&cfg).unwrap()).unwrap();
    write_sweep(b.path(), &cfg, &run_sweep(&cfg).unwrap()).unwrap();
    for name in ["raw.csv", "aggregate.csv"] {
        let x = fs::read_to_string(a.path().join(name)).unwrap();
        let y = fs::read_to_string(b.path().join(name)).unwrap();
        assert_eq!(without_first_line(&x), without_first_line(&y), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    let other = ExperimentConfig {
        base_seed: 43,
        ..cfg
    };
    assert_ne!(
        run_sweep(&other).unwrap().rows,
        run_sweep(&small()).unwrap().rows
    );
}

#[test]
fn aggregates_recompute_from_raw_rows() {
    let res = run_sweep(&small()).unwrap();
    assert_eq!(res.aggregates.len(), 2 * 2 * 2);
    assert_eq!(res.aggregates, aggregate(&res.rows));
    for a in &res.aggregates {
        let errs: Vec<f64> = res
            .rows
            .iter()
            .filter(|r| (r.kind, r.l, r.t) == (a.kind, a.l, a.t) && r.status == TrialStatus::Ok)
            .map(|r| r.error_sq)
            .collect();
        let (mean, std) = mean_std(&errs);
        assert_eq!(a.mean_error_sq, mean);
        assert_eq!(a.std_error_sq, std);
        assert_eq!(a.n_ok, 3);
    }
}

#[test]
fn fixed_system_flag_shares_one_system() {
    let cfg = ExperimentConfig {
        fixed_system: true,
        ..small()
    };
    let res = run_sweep(&cfg).unwrap();
    assert!(res
        .rows
        .iter()
        .all(|r| r.system_seed == res.rows[0].system_seed));
    let fresh = run_sweep(&small()).unwrap();
    assert_ne!(fresh.rows[0].system_seed, fresh.rows[1].system_seed);
}

#[test]
fn noiseless_single_point_is_consistent() {
    let cfg = ExperimentConfig {
        n: 2,
        p: 1,
        m: 1,
        rho0: 0.1,
        rhok: 0.05,
        sigma: 0.0,
        l_list: vec![6],
        t_list: vec![20_000],
        trials: 1,
        input_kinds: vec![InputDistribution::Sphere],
        ..Default::default()
    };
    let res = run_sweep(&cfg).unwrap();
    let sys = random_system::<f64>(cfg.dims().unwrap(), 0.1, 0.05, cfg.system_seed(0)).unwrap();
    let g = true_markov(&sys, 6).unwrap();
    let g_norm = blds::linalg::op_norm(g.matrix()).unwrap();
    assert!(
        res.rows[0].error_sq < 1e-10 * g_norm * g_norm,
        "{:?}",
        res.rows[0]
    );
}

#[test]
fn excitation_rate_does_not_decrease_with_horizon() {
    let cfg = ExperimentConfig {
        p: 1,
        l_list: vec![2],
        t_list: vec![20, 60, 200, 800, 3000],
        trials: 10,
        input_kinds: vec![InputDistribution::Sphere],
        ..Default::default()
    };
    let check = run_pe_check(&cfg).unwrap();
    assert_eq!(check.rows.len(), 5 * 10);
    let counts: Vec<usize> = check.summary.iter().map(|s| s.satisfied).collect();
    for w in counts.windows(2) {
        assert!(w[1] + 1 >= w[0], "{counts:?}");
    }
    assert_eq!(*counts.last().unwrap(), 10);
}

#[test]
fn recovery_reports() {
    let sys = random_system::<f64>(Dims::new(2, 2, 2).unwrap(), 0.3, 0.15, 5).unwrap();
    let l = 6;
    let g = true_markov(&sys, l).unwrap();
    let exact = run_recover(&g, 2, None).unwrap();
    assert!(exact.mismatch.relative <= 1e-6, "{:?}", exact.mismatch);

    let noiseless = generate_trajectory(
        &sys,
        InputDistribution::Sphere,
        8000,
        NoiseConfig::noiseless(),
        1,
    )
    .unwrap();
    let fit = fit_markov(&noiseless, &FeatureConfig::new(l, 2).unwrap()).unwrap();
    let est = run_recover(&fit.markov, 2, None).unwrap();
    let rebuilt = true_markov(
        &blds::SystemParamsF64::from_json_doc(&est.system).unwrap(),
        l,
    )
    .unwrap();
    let vs_truth = blds::linalg::op_norm((rebuilt.matrix() - g.matrix()).as_ref()).unwrap();
    assert!(vs_truth <= 1e-4, "{vs_truth}");

    let noisy = generate_trajectory(
        &sys,
        InputDistribution::Sphere,
        3000,
        NoiseConfig::new(0.05).unwrap(),
        2,
    )
    .unwrap();
    let fit = fit_markov(&noisy, &FeatureConfig::new(l, 2).unwrap()).unwrap();
    let wrong = run_recover(&fit.markov, 3, None).unwrap();
    assert!(!wrong.warnings.is_empty());
}

#[test]
fn config_files_parse_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("c.toml");
    fs::write(
        &toml_path,
        "n = 4\np = 1\nl_list = [2]\nt_list = [100, 200]\ninput_kinds = [\"sphere\"]\ntrials = 2\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&toml_path).unwrap();
    assert_eq!((cfg.n, cfg.p, cfg.trials), (4, 1, 2));
    assert_eq!(cfg.m, 2);
    let json_path = dir.path().join("c.json");
    fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&json_path).unwrap(), cfg);
    fs::write(&toml_path, "bogus_key = 1\n").unwrap();
    assert!(matches!(
        ExperimentConfig::load(&toml_path),
        Err(blds::Error::Config(_))
    ));
}
