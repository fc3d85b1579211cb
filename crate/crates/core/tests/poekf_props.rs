use proptest::prelude::*;

use netkf::baselines::NaiveEkf;
use netkf::channel::ChannelConfig;
use netkf::checks::linearized_matches_linear;
use netkf::harness::scenario::TrajectorySpec;
use netkf::harness::{run_trial, FilterKind, ScenarioConfig};
use netkf::robot::heading_in_range;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linearized_form_reproduces_linear_filter(seed in any::<u64>()) {
        prop_assert!(linearized_matches_linear(seed, 300).unwrap() < 1e-12);
    }
}

#[test]
fn ideal_link_poekf_equals_naive_ekf() {
    let mut cfg = ScenarioConfig::sim2();
    cfg.ctrl_channel = ChannelConfig::ideal(1);
    cfg.meas_channel = ChannelConfig::ideal(2);
    cfg.filters = vec![FilterKind::PoEkf, FilterKind::Ekf, FilterKind::Refilter];
    let res = run_trial(&cfg, 0).unwrap();
    let po = &res.filters[0].states;
    for other in &res.filters[1..] {
        for (a, b) in po.iter().zip(&other.states) {
            assert!((&a.mean - &b.mean).amax() < 1e-12, "{}", other.name);
            assert!((&a.cov - &b.cov).amax() < 1e-12, "{}", other.name);
        }
    }
    // Same work as the EKF when nothing is delayed.
    assert_eq!(res.filters[0].flops, res.filters[1].flops);
}

#[test]
fn delayed_trial_estimates_stay_sane() {
    let mut cfg = ScenarioConfig::sim2();
    cfg.trajectory = TrajectorySpec::Arc {
        speed: 0.3,
        turn_rate: 0.4,
    };
    cfg.filters = vec![FilterKind::PoEkf];
    for trial in 0..5 {
        let res = run_trial(&cfg, trial).unwrap();
        for (t, s) in res.filters[0].states.iter().enumerate() {
            assert!(heading_in_range(s.mean[2]));
            assert!(res.error(0, t).amax() < 1.0, "trial {trial} tick {t}");
        }
    }
}

#[test]
fn naive_ekf_is_a_plain_estimator() {
    use netkf::estimator::GaussianState;
    use netkf::linalg::{Mat, Vector};
    use netkf::robot::{DiffDriveModel, PoseSensor, RobotParams};
    use netkf::Estimator;
    let init = GaussianState::new(Vector::zeros(3), Mat::identity(3, 3), 0).unwrap();
    let ekf = NaiveEkf::new(DiffDriveModel::new(RobotParams::default()), PoseSensor::default(), init);
    assert_eq!(ekf.name(), "ekf");
    assert_eq!(ekf.discarded(), 0);
}
