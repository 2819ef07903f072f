use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::{EnvSpec, Environment, ResetMode, ResetSampler};

fn scalar_model(a: f64, b: f64, e: f64) -> LinearModel {
    LinearModel::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, b),
        DMatrix::from_element(1, 1, e),
        DVector::zeros(1),
    )
    .unwrap()
}

fn scalar_controller(k: f64) -> FailsafeController {
    FailsafeController::new(
        DMatrix::from_element(1, 1, k),
        DVector::zeros(1),
        DVector::zeros(1),
        Hyperbox::from_slices(&[-1.0], &[1.0]).unwrap(),
    )
    .unwrap()
}

fn unit_interval() -> HPolytope {
    HPolytope::from_box(&Hyperbox::from_slices(&[-1.0], &[1.0]).unwrap())
}

pub(crate) fn env_verifier(spec: &EnvSpec) -> SafetyVerifier {
    let (model, w) = spec.verification_model().unwrap();
    let ctrl = FailsafeController::lqr_default(spec, &model).unwrap();
    let set = compute_invariant_set(&model, &ctrl, &spec.spec_polytope(), &w, &InvariantOptions::default())
        .unwrap();
    SafetyVerifier::new(model, w, set, ctrl, spec.spec_polytope()).unwrap()
}

fn sample_in_set<R: Rng>(v: &SafetyVerifier, rng: &mut R) -> DVector<f64> {
    let bb = v.safe_set().polytope.bounding_box().unwrap();
    loop {
        let s = DVector::from_iterator(
            bb.dim(),
            (0..bb.dim()).map(|i| rng.random_range(bb.lower()[i]..=bb.upper()[i])),
        );
        if v.safe_set().contains(&s) {
            return s;
        }
    }
}

fn sample_action<R: Rng>(b: &Hyperbox, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(b.dim(), (0..b.dim()).map(|i| rng.random_range(b.lower()[i]..=b.upper()[i])))
}

#[test]
fn contraction_keeps_spec_set() {
    let model = scalar_model(0.5, 1.0, 0.0);
    let w = Hyperbox::from_slices(&[0.0], &[0.0]).unwrap();
    let set = compute_invariant_set(&model, &scalar_controller(0.0), &unit_interval(), &w, &InvariantOptions::default())
        .unwrap();
    let bb = set.polytope.bounding_box().unwrap();
    assert!((bb.lower()[0] + 1.0).abs() < 1e-12 && (bb.upper()[0] - 1.0).abs() < 1e-12);
    assert_eq!(set.source, SafeSetSource::Computed);
}

#[test]
fn disturbance_tightens_scalar_set() {
    // s' = 1.5 s + a + w, K = -1 → s' = 0.5 s + w, |w| ≤ 0.2, |s| ≤ 1 invariant
    // (0.5 + 0.2 ≤ 1); saturation |K s| ≤ 1 is also satisfied
    let model = scalar_model(1.5, 1.0, 1.0);
    let w = Hyperbox::from_slices(&[-0.2], &[0.2]).unwrap();
    let ctrl = scalar_controller(-1.0);
    let set = compute_invariant_set(&model, &ctrl, &unit_interval(), &w, &InvariantOptions::default()).unwrap();
    assert!(verify_failsafe(&set, &ctrl, &model, &w).unwrap());
    // with |w| ≤ 0.6 no interval survives: |s| ≤ 0.8, then 0.4, then empty
    let w_big = Hyperbox::from_slices(&[-0.6], &[0.6]).unwrap();
    assert!(matches!(
        compute_invariant_set(&model, &ctrl, &unit_interval(), &w_big, &InvariantOptions::default()),
        Err(Error::Certificate(_)) | Err(Error::NonConvergence(_))
    ));
}

#[test]
fn unstable_zero_gain_rejected() {
    let model = scalar_model(1.2, 1.0, 1.0);
    let w = Hyperbox::from_slices(&[-0.01], &[0.01]).unwrap();
    let ctrl = scalar_controller(0.0);
    assert!(compute_invariant_set(&model, &ctrl, &unit_interval(), &w, &InvariantOptions::default()).is_err());
    let set = SafeSet::new(unit_interval(), SafeSetSource::Computed, &DVector::zeros(1), None).unwrap();
    assert!(!verify_failsafe(&set, &ctrl, &model, &w).unwrap());
}

#[test]
fn iteration_cap_reports_nonconvergence() {
    // a weakly damped double integrator needs many pre-image steps
    let model = LinearModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.0]),
        DVector::zeros(2),
    )
    .unwrap();
    let ctrl = FailsafeController::new(
        DMatrix::from_row_slice(1, 2, &[-0.01, -0.02]),
        DVector::zeros(2),
        DVector::zeros(1),
        Hyperbox::from_slices(&[-1.0], &[1.0]).unwrap(),
    )
    .unwrap();
    let spec = HPolytope::from_box(&Hyperbox::from_slices(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
    let w = Hyperbox::from_slices(&[0.0], &[0.0]).unwrap();
    let opts = InvariantOptions { max_iterations: 3, ..Default::default() };
    assert!(matches!(
        compute_invariant_set(&model, &ctrl, &spec, &w, &opts),
        Err(Error::NonConvergence(3))
    ));
}

#[test]
fn monotone_in_disturbance() {
    let spec = EnvSpec::quadrotor();
    let (model, _) = spec.verification_model().unwrap();
    let ctrl = FailsafeController::lqr_default(&spec, &model).unwrap();
    let boxes = [0.1, 0.05, 0.0].map(|r| Hyperbox::from_slices(&[-r, -r], &[r, r]).unwrap());
    let sets: Vec<SafeSet> = boxes
        .iter()
        .map(|w| compute_invariant_set(&model, &ctrl, &spec.spec_polytope(), w, &InvariantOptions::default()).unwrap())
        .collect();
    for pair in sets.windows(2) {
        assert!(pair[0].polytope.is_subset_of(&pair[1].polytope, 1e-7).unwrap());
    }
}

#[test]
fn computed_sets_certify_and_corruption_fails() {
    for spec in [EnvSpec::pendulum(), EnvSpec::quadrotor()] {
        let v = env_verifier(&spec);
        assert!(verify_failsafe(v.safe_set(), v.controller(), v.model(), v.disturbance()).unwrap());
        let p = &v.safe_set().polytope;
        let mut q = p.offsets().clone();
        q[0] -= 0.1 * q[0].abs();
        let corrupted = SafeSet {
            polytope: HPolytope::new(p.normals().clone(), q).unwrap(),
            source: SafeSetSource::Computed,
        };
        assert!(!verify_failsafe(&corrupted, v.controller(), v.model(), v.disturbance()).unwrap());
        assert!(p.is_subset_of(&spec.spec_polytope(), 1e-9).unwrap());
    }
}

#[test]
fn equilibrium_action_is_safe() {
    for spec in [EnvSpec::pendulum(), EnvSpec::quadrotor()] {
        let v = env_verifier(&spec);
        assert!(v.phi(&spec.equilibrium, &spec.equilibrium_action));
        assert_eq!(v.controller().action(&spec.equilibrium), spec.equilibrium_action);
        let poly = v.safe_action_polytope(&spec.equilibrium).unwrap();
        assert!(poly.contains_point(&spec.equilibrium_action, 0.0));
        assert!(poly.chebyshev_radius(1e3).unwrap() > 0.0);
    }
}

#[test]
fn phi_matches_support_oracle_and_polytope() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for spec in [EnvSpec::pendulum(), EnvSpec::quadrotor()] {
        let v = env_verifier(&spec);
        let wide = Hyperbox::centered(&v.action_box().center(), &(v.action_box().halfwidths() * 1.2)).unwrap();
        let (mut safe, mut unsafe_) = (0, 0);
        for _ in 0..1000 {
            let s = sample_in_set(&v, &mut rng);
            let a = sample_action(&wide, &mut rng);
            let z = v.reachable(&s, &a).unwrap();
            let p = &v.safe_set().polytope;
            let oracle = v.action_box().contains(&a, 0.0)
                && (0..p.num_rows()).all(|i| {
                    z.support(&p.normals().row(i).transpose()) <= p.offsets()[i] - CONTAINMENT_SLACK
                });
            let verdict = v.phi(&s, &a);
            assert_eq!(verdict, oracle);
            assert_eq!(verdict, v.safe_action_polytope(&s).unwrap().contains_point(&a, 0.0));
            if verdict { safe += 1 } else { unsafe_ += 1 }
        }
        assert!(safe > 50 && unsafe_ > 50, "{safe} safe / {unsafe_} unsafe");
    }
}

#[test]
fn failsafe_always_verified() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for spec in [EnvSpec::pendulum(), EnvSpec::quadrotor()] {
        let v = env_verifier(&spec);
        for _ in 0..1000 {
            let s = sample_in_set(&v, &mut rng);
            let a = v.failsafe_action(&s).unwrap();
            assert!(v.action_box().contains(&a, 0.0));
        }
    }
}

#[test]
fn failsafe_saturates_far_away() {
    let spec = EnvSpec::pendulum();
    let (model, _) = spec.verification_model().unwrap();
    let ctrl = FailsafeController::lqr_default(&spec, &model).unwrap();
    let a = ctrl.action(&DVector::from_vec(vec![3.0, 10.0]));
    assert!(a[0].abs() == 30.0);
}

#[test]
fn phi_sound_under_sampled_disturbances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in [EnvSpec::pendulum(), EnvSpec::quadrotor()] {
        let v = env_verifier(&spec);
        let mut env = Environment::new(spec.clone(), ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut checked = 0;
        while checked < 20 {
            let s = sample_in_set(&v, &mut rng);
            let a = sample_action(v.action_box(), &mut rng);
            if !v.phi(&s, &a) {
                continue;
            }
            checked += 1;
            for _ in 0..1000 {
                env.set_state(s.clone());
                let out = env.step(&a);
                assert!(v.safe_set().contains(&out.state), "{:?} -> {:?}", s.as_slice(), out.state.as_slice());
            }
        }
    }
}

#[test]
fn failsafe_rollouts_stay_in_spec() {
    for spec in [EnvSpec::pendulum(), EnvSpec::quadrotor()] {
        let v = env_verifier(&spec);
        let sampler = ResetSampler::new(&spec, &v.safe_set().polytope, ResetMode::Uniform).unwrap();
        for seed in 0..100 {
            let mut env = Environment::new(spec.clone(), ChaCha8Rng::seed_from_u64(seed)).unwrap();
            env.reset(&sampler).unwrap();
            for _ in 0..spec.horizon {
                let a = v.failsafe_action(env.state()).unwrap();
                let out = env.step(&a);
                assert!(spec.spec_box.contains(&out.state, 1e-9));
                assert!(v.safe_set().contains(&out.state));
            }
        }
    }
}

#[test]
fn action_independent_rows() {
    // B = 0: the safe-action set is all of 𝔸 or empty
    let model = LinearModel::new(
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
    )
    .unwrap();
    let w = Hyperbox::from_slices(&[0.0], &[0.0]).unwrap();
    let set = SafeSet::new(unit_interval(), SafeSetSource::Computed, &DVector::zeros(1), None).unwrap();
    let v = SafetyVerifier::new(model, w, set, scalar_controller(0.0), unit_interval()).unwrap();
    let inside = DVector::from_vec(vec![1.5]);
    let outside = DVector::from_vec(vec![2.5]);
    let a = DVector::from_vec(vec![0.3]);
    assert!(v.phi(&inside, &a));
    assert!(!v.phi(&outside, &a));
    let full = v.safe_action_polytope(&inside).unwrap();
    assert!(full.contains_point(&DVector::from_vec(vec![-1.0]), 0.0));
    assert!(full.contains_point(&DVector::from_vec(vec![1.0]), 0.0));
    let none = v.safe_action_polytope(&outside).unwrap();
    assert!(none.chebyshev_radius(1e3).unwrap() < 0.0);
}

#[test]
fn degenerate_disturbance_matches_point_check() {
    // W = {0}: φ is the point test on the deterministic successor
    let model = scalar_model(1.0, 1.0, 1.0);
    let w = Hyperbox::from_slices(&[0.0], &[0.0]).unwrap();
    let set = SafeSet::new(unit_interval(), SafeSetSource::Computed, &DVector::zeros(1), None).unwrap();
    let v = SafetyVerifier::new(model, w, set, scalar_controller(-0.5), unit_interval()).unwrap();
    let s = DVector::from_vec(vec![0.5]);
    for (a, expect) in [(0.5 - 2e-9, true), (0.5, false), (-1.0, true), (0.9, false)] {
        assert_eq!(v.phi(&s, &DVector::from_vec(vec![a])), expect, "a = {a}");
    }
}

#[test]
fn saturating_push_is_unsafe() {
    let spec = EnvSpec::pendulum();
    let v = env_verifier(&spec);
    // near the upper velocity facet, full positive torque leaves the set
    let bb = v.safe_set().polytope.bounding_box().unwrap();
    let s = DVector::from_vec(vec![0.0, bb.upper()[1] * 0.99]);
    if v.safe_set().contains(&s) {
        assert!(!v.phi(&s, &v.action_box().upper().clone()));
    }
}

#[test]
fn save_load_round_trip() {
    let spec = EnvSpec::pendulum();
    let v = env_verifier(&spec);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pendulum.set");
    v.safe_set().save(&path).unwrap();
    let loaded = load_safe_set(&path, &spec.equilibrium, Some(&spec.spec_polytope())).unwrap();
    assert_eq!(loaded.polytope, v.safe_set().polytope);
    assert_eq!(loaded.source, SafeSetSource::Loaded(path.clone()));
    assert!(verify_failsafe(&loaded, v.controller(), v.model(), v.disturbance()).unwrap());
    std::fs::write(&path, "2 1\n0 1\n1 1\n").unwrap();
    assert!(load_safe_set(&path, &DVector::zeros(1), None).is_err());
    std::fs::write(&path, "1 1\n1 1\n").unwrap();
    assert!(load_safe_set(&path, &DVector::zeros(1), None).is_err());
}

