use tthf::analysis::checks::{lemma1_rows, remark1_rows, violations};
use tthf::analysis::{
    interval_start, lemma1_bound, prop1_bound, resource_accounting, sigma_t, theorem1_check, theorem1_rhs,
    theorem2_envelope, time_to_accuracy, time_to_target, AnalysisConstants, ResourceModel, TimeToTarget,
};
use tthf::data::{synth_quadratic, FederatedDataset, QuadraticTask};
use tthf::engine::{run_fedavg_baseline, run_tthf, ConsensusPolicy, Evaluation, Hyperparameters, Participation, TraceRecord};
use tthf::model::LossModel;
use tthf::topology::{build_topologies, max_pairwise_distance, run_consensus, ClusterGraph, ClusterTopology, GraphSpec};
use tthf::ModelVector;

fn constants(sigma2: f64, delta: f64, phi: f64) -> AnalysisConstants {
    AnalysisConstants {
        mu: 1.0,
        beta: 3.0,
        sigma2,
        delta,
        rho_min: 0.2,
        epsilon0: phi * 2.0 / 20.0,
        phi,
        gamma: 2.0,
        alpha: 20.0,
        tau: 10,
    }
}

fn quadratic(devices: usize, clusters: usize, seed: u64) -> (FederatedDataset, ModelVector) {
    synth_quadratic(&QuadraticTask { devices, clusters, ..Default::default() }, seed).unwrap()
}

#[test]
fn path3_consensus_bound() {
    let topo = ClusterTopology::from_graph(ClusterGraph::path(3)).unwrap();
    let z: Vec<ModelVector> = [0.0, 3.0, 6.0].iter().map(|&v| ModelVector::new(vec![v]).unwrap()).collect();
    let out = run_consensus(&z, &topo.consensus, 2).unwrap();
    let measured = out.iter().map(|w| (w.as_slice()[0] - 3.0).abs()).fold(0.0, f64::max);
    assert!((measured - 4.0 / 3.0).abs() < 1e-12);
    let bound = lemma1_bound(topo.lambda(), 2, 3, max_pairwise_distance(&z));
    assert!((bound - (2.0f64 / 3.0).powi(2) * 3f64.sqrt() * 6.0).abs() < 1e-9);
    assert!((bound - 4.6188).abs() < 1e-4);
    assert!(measured <= bound);
}

#[test]
fn sigma_follows_its_recursion() {
    let c = constants(0.5, 0.3, 0.1);
    for start in [0, 10, 30] {
        let mut s = 0.0;
        assert_eq!(sigma_t(&c, start, start), 0.0);
        for t in start..start + 10 {
            s = (1.0 + 2.0 * c.eta(t) * c.beta) * s + c.beta * c.eta(t);
            assert!((sigma_t(&c, t + 1, start) - s).abs() <= 1e-12 * s, "t = {}", t + 1);
        }
    }
    // first step of an interval: Σ = βη_{t_{k-1}}
    assert!((sigma_t(&c, 11, 10) - c.beta * c.eta(10)).abs() < 1e-15);
    let b = prop1_bound(&c, 11, interval_start(11, 10)).unwrap();
    let want = 12.0 / 0.2 * (c.beta * c.eta(10)).powi(2) * ((0.5 + 0.09) / 9.0 + c.epsilon0.powi(2));
    assert!((b - want).abs() <= 1e-12 * want);
    assert_eq!(interval_start(10, 10), 0);
    assert_eq!(interval_start(11, 10), 10);
}

#[test]
fn frozen_dynamics_have_zero_residual() {
    let (ds, opt) = quadratic(10, 2, 1);
    let lm = LossModel::least_squares(1.0);
    let topos = build_topologies(&ds.clusters(), GraphSpec::SpectralTarget(0.7), 1).unwrap();
    let hp = Hyperparameters { gamma: 0.0, tau: 5, total_steps: 20, batch_size: 4, ..Default::default() };
    let init = ModelVector::new(vec![1.0, -1.0, 0.5, 0.0, 2.0]).unwrap();
    let eval = Evaluation::new(init).with_optimum(&opt);
    let reps: Vec<Vec<TraceRecord>> = (0..3)
        .map(|r| run_tthf(&ds, &topos, &lm, &Hyperparameters { master_seed: r, ..hp.clone() }, &eval).unwrap())
        .collect();
    let c = AnalysisConstants { gamma: 0.0, ..constants(0.5, 0.3, 1.0) };
    let report = theorem1_check(&reps, &c, 3, 2.0).unwrap();
    assert_eq!(report.steps.len(), 20);
    assert!(report.residuals.iter().all(|&r| r == 0.0));
    assert_eq!(report.fraction_ok, 1.0);
}

#[test]
fn gradient_descent_contracts_the_gap() {
    let (ds, opt) = quadratic(1, 1, 2);
    let lm = LossModel::least_squares(1.0);
    let batch = ds.shard(0).len();
    let hp = Hyperparameters { gamma: 0.1, alpha: 1.0, tau: 1, total_steps: 50, batch_size: batch, ..Default::default() };
    let eval = Evaluation::new(ModelVector::zeros(5)).with_optimum(&opt);
    let trace = run_fedavg_baseline(&ds, &lm, &hp, Participation::Full, 1, &eval).unwrap();
    let c = AnalysisConstants {
        mu: 1.0,
        beta: tthf::model::estimate_beta(&lm, &ds),
        sigma2: 0.0,
        delta: 0.0,
        rho_min: 1.0,
        epsilon0: 0.0,
        phi: 0.0,
        gamma: hp.gamma,
        alpha: hp.alpha,
        tau: 1,
    };
    assert!(c.eta(0) <= 1.0 / c.beta);
    for pair in trace.windows(2) {
        let gap = pair[0].loss_gap.unwrap();
        let rhs = theorem1_rhs(&c, pair[0].t, gap, pair[0].dispersion);
        assert!((rhs - (1.0 - c.mu * c.eta(pair[0].t)) * gap).abs() <= 1e-10 * gap.max(1e-300));
        assert!(pair[1].loss_gap.unwrap() <= rhs + 1e-12, "t = {}", pair[0].t);
    }
}

#[test]
fn envelope_covers_the_start() {
    let c = constants(0.5, 0.3, 0.1);
    let env = theorem2_envelope(&c, 7.0).unwrap();
    assert!(env.at(0) >= 7.0 - 1e-12);
    assert!(env.at(100) < env.at(10));
    let bad = AnalysisConstants { gamma: 0.5, ..c };
    assert!(theorem2_envelope(&bad, 7.0).is_err());
}

#[test]
fn resource_totals_have_closed_forms() {
    let (ds, opt) = quadratic(12, 3, 3);
    let lm = LossModel::least_squares(1.0);
    let sizes: Vec<usize> = ds.clusters().iter().map(Vec::len).collect();
    let eval = Evaluation::new(ModelVector::zeros(5)).with_optimum(&opt);
    let hp = Hyperparameters { total_steps: 20, batch_size: 4, ..Default::default() };
    let rm = ResourceModel { e_d2d: 0.5, e_glob: 2.0, d_d2d: 0.1, d_glob: 0.7 };

    let mut full = run_fedavg_baseline(&ds, &lm, &hp, Participation::Full, 1, &eval).unwrap();
    let curves = resource_accounting(&mut full, &rm, &sizes, Participation::Full);
    assert!((curves.energy[20] - 20.0 * 12.0 * 2.0).abs() < 1e-9);
    assert!((full[20].cum_delay - 20.0 * 0.7).abs() < 1e-9);

    let mut sampled = run_fedavg_baseline(&ds, &lm, &hp, Participation::OnePerCluster, 5, &eval).unwrap();
    resource_accounting(&mut sampled, &rm, &sizes, Participation::OnePerCluster);
    assert!((sampled[20].cum_energy - 4.0 * 3.0 * 2.0).abs() < 1e-9);
    assert!((sampled[4].cum_energy).abs() < 1e-12);

    let topos = build_topologies(&ds.clusters(), GraphSpec::SpectralTarget(0.7), 3).unwrap();
    let hp = Hyperparameters { tau: 5, consensus: ConsensusPolicy::Fixed { rounds: 2, period: 1 }, ..hp };
    let trace = run_tthf(&ds, &topos, &lm, &hp, &eval).unwrap();
    let mut a = trace.clone();
    let ca = resource_accounting(&mut a, &rm, &sizes, Participation::OnePerCluster);
    // two rounds by all 12 devices at each of 20 steps, plus 4 aggregations of 3 uplinks
    assert!((ca.d2d_energy[20] - 20.0 * 2.0 * 12.0 * 0.5).abs() < 1e-9);
    assert!((ca.energy[20] - (240.0 + 24.0)).abs() < 1e-9);
    assert!((ca.delay[20] - (20.0 * 2.0 * 0.1 + 4.0 * 0.7)).abs() < 1e-9);
    let mut b = trace;
    let cb = resource_accounting(&mut b, &ResourceModel { e_d2d: 1.0, ..rm }, &sizes, Participation::OnePerCluster);
    for t in 0..=20 {
        assert!((cb.d2d_energy[t] - 2.0 * ca.d2d_energy[t]).abs() < 1e-9);
        assert_eq!(cb.uplink_energy[t], ca.uplink_energy[t]);
    }
}

#[test]
fn time_to_target_cases() {
    let v = [0.1, 0.3, 0.2, 0.6, 0.5];
    assert_eq!(time_to_target(&v, 0.5, None), TimeToTarget::Reached(1));
    assert_eq!(time_to_target(&v, 1.0, None), TimeToTarget::Reached(3));
    assert_eq!(time_to_target(&v, 0.5, Some(2.0)), TimeToTarget::NotReached);
    assert_eq!(time_to_target(&[], 0.5, None), TimeToTarget::NotReached);
    let (ds, opt) = quadratic(4, 2, 4);
    let eval = Evaluation::new(ModelVector::zeros(5)).with_optimum(&opt);
    let hp = Hyperparameters { total_steps: 3, batch_size: 4, ..Default::default() };
    let trace = run_fedavg_baseline(&ds, &LossModel::least_squares(1.0), &hp, Participation::Full, 1, &eval).unwrap();
    // regression models carry no accuracy
    assert_eq!(time_to_accuracy(&trace, 0.5, None), TimeToTarget::NotReached);
}

#[test]
fn adaptive_runs_pass_consensus_checks() {
    let (ds, opt) = quadratic(25, 5, 5);
    let lm = LossModel::least_squares(1.0);
    let topos = build_topologies(&ds.clusters(), GraphSpec::SpectralTarget(0.7), 5).unwrap();
    let phi = 0.1;
    let hp = Hyperparameters { total_steps: 50, batch_size: 2, consensus: ConsensusPolicy::Adaptive { phi }, ..Default::default() };
    let trace = run_tthf(&ds, &topos, &lm, &hp, &Evaluation::new(ModelVector::zeros(5)).with_optimum(&opt)).unwrap();
    let mut rows = lemma1_rows(&trace, &topos);
    rows.extend(remark1_rows(&trace, phi));
    assert_eq!(rows.len(), 2 * 51);
    assert!(violations(&rows).iter().all(|&(_, n)| n == 0), "{:?}", violations(&rows));
}
