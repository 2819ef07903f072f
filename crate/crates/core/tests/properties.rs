use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use safeshield::env::EnvSpec;
use safeshield::geom::{zonotope_in_polytope, HPolytope, Hyperbox, Zonotope};
use safeshield::harness::metrics::mean_std;
use safeshield::oracle::containment_by_support;
use safeshield::safety::SafetyVerifier;
use safeshield::shields::{mask_continuous, masking_inverse, masking_transform, shield_project, Shield, ShieldType};

fn quad() -> &'static SafetyVerifier {
    static V: OnceLock<SafetyVerifier> = OnceLock::new();
    V.get_or_init(|| SafetyVerifier::with_defaults(&EnvSpec::quadrotor()).unwrap())
}

/// A point of the quadrotor safe set: `t ∈ [0,1]` scales a direction from
/// the equilibrium towards the boundary.
fn safe_state(dir: &[f64], t: f64) -> DVector<f64> {
    let v = quad();
    let eq = EnvSpec::quadrotor().equilibrium;
    let d = DVector::from_column_slice(dir);
    let p = &v.safe_set().polytope;
    let reach = (0..p.num_rows())
        .filter_map(|i| {
            let nd = p.normals().row(i).dot(&d.transpose());
            (nd > 1e-12).then(|| (p.offsets()[i] - p.normals().row(i).dot(&eq.transpose())) / nd)
        })
        .fold(f64::INFINITY, f64::min);
    if !reach.is_finite() {
        return eq;
    }
    &eq + d * (reach * t * 0.999)
}

fn action(u: &[f64]) -> DVector<f64> {
    quad().action_box().from_unit(&DVector::from_column_slice(u))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn containment_agrees_with_vertex_oracle(
        c in prop::collection::vec(-1.0f64..1.0, 2),
        g in prop::collection::vec(-0.4f64..0.4, 6),
        normals in prop::collection::vec(-1.0f64..1.0, 10),
        offsets in prop::collection::vec(0.1f64..1.5, 5),
    ) {
        let z = Zonotope::new(DVector::from_vec(c), DMatrix::from_column_slice(2, 3, &g)).unwrap();
        let p = HPolytope::new(DMatrix::from_row_slice(5, 2, &normals), DVector::from_vec(offsets)).unwrap();
        prop_assert_eq!(zonotope_in_polytope(&z, &p).unwrap(), containment_by_support(&z, &p));
    }

    #[test]
    fn phi_matches_safe_action_polytope(
        dir in prop::collection::vec(-1.0f64..1.0, 6),
        t in 0.0f64..1.0,
        u in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let v = quad();
        let s = safe_state(&dir, t);
        let a = action(&u);
        let poly = v.safe_action_polytope(&s).unwrap();
        prop_assert_eq!(v.phi(&s, &a), poly.contains_point(&a, 0.0));
    }

    #[test]
    fn active_shields_always_execute_verified_actions(
        dir in prop::collection::vec(-1.0f64..1.0, 6),
        t in 0.0f64..1.0,
        u in prop::collection::vec(-1.5f64..1.5, 2),
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let v = quad();
        let s = safe_state(&dir, t);
        let a = action(&u);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for kind in [ShieldType::ReplaceSample, ShieldType::ReplaceFailsafe, ShieldType::Project, ShieldType::Mask] {
            let d = Shield::new(kind, v.clone()).apply(&s, &a, &mut rng).unwrap();
            prop_assert!(v.phi(&s, &d.executed), "{:?} executed an unverified action", kind);
            if kind != ShieldType::Mask && v.phi(&s, &a) {
                prop_assert_eq!(&d.executed, &a);
                prop_assert!(!d.intervened);
            }
        }
    }

    #[test]
    fn projection_never_moves_farther_than_the_failsafe(
        dir in prop::collection::vec(-1.0f64..1.0, 6),
        t in 0.0f64..1.0,
        u in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let v = quad();
        let s = safe_state(&dir, t);
        let a = action(&u);
        let d = shield_project(v, &s, &a).unwrap();
        let fs = v.failsafe_action(&s).unwrap();
        prop_assert!((&d.executed - &a).norm() <= (&fs - &a).norm() + 1e-9);
    }

    #[test]
    fn masking_transform_is_invertible(
        lo in prop::collection::vec(-2.0f64..0.0, 3),
        w in prop::collection::vec(0.1f64..3.0, 3),
        shrink in prop::collection::vec(0.01f64..1.0, 3),
        u in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
        let outer = Hyperbox::from_slices(&lo, &hi).unwrap();
        let inner = Hyperbox::centered(&outer.center(), &outer.halfwidths().component_mul(&DVector::from_vec(shrink))).unwrap();
        let a = outer.from_unit(&DVector::from_vec(u));
        let x = masking_transform(&a, &outer, &inner).unwrap();
        prop_assert!(inner.contains(&x, 1e-12));
        let back = masking_inverse(&x, &outer, &inner).unwrap();
        prop_assert!((back - a).amax() < 1e-12);
    }

    #[test]
    fn masked_scale_is_monotone_toward_the_equilibrium(
        dir in prop::collection::vec(-1.0f64..1.0, 6),
        t in 0.05f64..1.0,
    ) {
        // the safe action set is convex in (s, a), so λ is concave on segments
        let v = quad();
        let center = v.action_box().center();
        let far = mask_continuous(v, &safe_state(&dir, t), &center).unwrap().mask_scale.unwrap();
        let near = mask_continuous(v, &safe_state(&dir, t / 2.0), &center).unwrap().mask_scale.unwrap();
        let eq = mask_continuous(v, &EnvSpec::quadrotor().equilibrium, &center).unwrap().mask_scale.unwrap();
        prop_assert!(near >= far.min(eq) - 1e-9);
    }

    #[test]
    fn mean_std_is_permutation_invariant_after_sorting(mut xs in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let mut a = xs.clone();
        a.sort_by(f64::total_cmp);
        xs.reverse();
        xs.sort_by(f64::total_cmp);
        prop_assert_eq!(mean_std(&a), mean_std(&xs));
        let (_, s) = mean_std(&a);
        prop_assert!(s >= 0.0);
    }
}
