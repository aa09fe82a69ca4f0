use fddp_core::contact::{contact_dynamics_derivatives, contact_forward_dynamics, impulse_dynamics, impulse_dynamics_derivatives};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `(M, Jc)` with `M` SPD and `Jc` of full row rank.
fn system(nv: usize, nf: usize, raw: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut it = raw.iter().copied().cycle();
    let a = DMatrix::from_fn(nv, nv, |_, _| it.next().unwrap());
    let mass = a.tr_mul(&a) + DMatrix::identity(nv, nv) * 0.5;
    let mut jc = DMatrix::from_fn(nf, nv, |_, _| it.next().unwrap());
    // a dominant diagonal keeps the rows independent
    for i in 0..nf {
        jc[(i, i)] += 3.0;
    }
    (mass, jc)
}

fn dense_kkt(mass: &DMatrix<f64>, jc: &DMatrix<f64>) -> DMatrix<f64> {
    let (nv, nf) = (mass.nrows(), jc.nrows());
    let mut k = DMatrix::zeros(nv + nf, nv + nf);
    k.view_mut((0, 0), (nv, nv)).copy_from(mass);
    k.view_mut((0, nv), (nv, nf)).copy_from(&(-jc.transpose()));
    k.view_mut((nv, 0), (nf, nv)).copy_from(jc);
    k
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8).prop_flat_map(|nv| (Just(nv), 1usize..=nv.min(4)))
}

fn raw() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 97)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn forward_dynamics_solves_the_block_system((nv, nf) in dims(), r in raw(), s in raw()) {
        let (mass, jc) = system(nv, nf, &r);
        let tau = DVector::from_fn(nv, |i, _| s[i] * 10.0);
        let a0 = DVector::from_fn(nf, |i, _| s[50 + i] * 10.0);
        let sol = contact_forward_dynamics(&mass, &jc, &tau, &a0).unwrap();
        let r1 = &mass * &sol.vdot - jc.transpose() * &sol.lambda - &tau;
        let r2 = &jc * &sol.vdot + &a0;
        let scale = 1.0 + mass.amax() + jc.amax() + tau.amax() + a0.amax();
        prop_assert!(r1.amax().max(r2.amax()) <= 1e-9 * scale);
    }

    #[test]
    fn impulses_respect_the_contact((nv, nf) in dims(), r in raw(), s in raw(), e in 0.0f64..=1.0) {
        let (mass, jc) = system(nv, nf, &r);
        let v_minus = DVector::from_fn(nv, |i, _| s[i] * 3.0);
        let res = impulse_dynamics(&mass, &jc, &v_minus, e).unwrap();
        let post = &jc * &res.v_plus + &jc * &v_minus * e;
        prop_assert!(post.amax() <= 1e-10 * (1.0 + v_minus.amax()));

        // M(v⁺ − v⁻) lies in the row space of Jc
        let dp = &mass * (&res.v_plus - &v_minus);
        let coeffs = jc.transpose().svd(true, true).solve(&dp, 1e-14).unwrap();
        prop_assert!((jc.transpose() * coeffs - &dp).amax() <= 1e-10 * (1.0 + dp.amax()));

        let kinetic = |v: &DVector<f64>| 0.5 * v.dot(&(&mass * v));
        if e == 0.0 {
            prop_assert!(kinetic(&res.v_plus) <= kinetic(&v_minus) + 1e-12);
        }
    }

    #[test]
    fn derivative_blocks_equal_the_dense_inverse((nv, nf) in dims(), r in raw(), s in raw(), ndx in 1usize..6, nu in 1usize..4) {
        let (mass, jc) = system(nv, nf, &r);
        let mut it = s.iter().copied().cycle();
        let mut next = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| it.next().unwrap());
        let (dtau_dx, dtau_du, da0_dx, da0_du) = (next(nv, ndx), next(nv, nu), next(nf, ndx), next(nf, nu));
        let sol = contact_forward_dynamics(&mass, &jc, &DVector::zeros(nv), &DVector::zeros(nf)).unwrap();
        let d = contact_dynamics_derivatives(&sol.factor, &dtau_dx, &dtau_du, &da0_dx, &da0_du).unwrap();

        let inv = dense_kkt(&mass, &jc).try_inverse().unwrap();
        let mut rhs = DMatrix::zeros(nv + nf, ndx + nu);
        rhs.view_mut((0, 0), (nv, ndx)).copy_from(&dtau_dx);
        rhs.view_mut((0, ndx), (nv, nu)).copy_from(&dtau_du);
        rhs.view_mut((nv, 0), (nf, ndx)).copy_from(&(-&da0_dx));
        rhs.view_mut((nv, ndx), (nf, nu)).copy_from(&(-&da0_du));
        let dense = inv * rhs;
        prop_assert!((d.y_x - dense.view((0, 0), (nv, ndx))).amax() <= 1e-10);
        prop_assert!((d.y_u - dense.view((0, ndx), (nv, nu))).amax() <= 1e-10);
        prop_assert!((d.g_x - dense.view((nv, 0), (nf, ndx))).amax() <= 1e-10);
        prop_assert!((d.g_u - dense.view((nv, ndx), (nf, nu))).amax() <= 1e-10);
    }

    #[test]
    fn impulse_velocity_jacobian_equals_the_dense_inverse((nv, nf) in dims(), r in raw(), e in 0.0f64..=1.0) {
        let (mass, jc) = system(nv, nf, &r);
        let res = impulse_dynamics(&mass, &jc, &DVector::zeros(nv), e).unwrap();
        let d = impulse_dynamics_derivatives(&res, None).unwrap();
        // v⁺ solves [M −Jcᵀ; Jc 0]·[v⁺; Λ] = [M·v⁻; −e·Jc·v⁻]
        let mut rhs = DMatrix::zeros(nv + nf, nv);
        rhs.view_mut((0, 0), (nv, nv)).copy_from(&mass);
        rhs.view_mut((nv, 0), (nf, nv)).copy_from(&(&jc * -e));
        let dense = dense_kkt(&mass, &jc).try_inverse().unwrap() * rhs;
        prop_assert!((d.dvplus_dvminus - dense.view((0, 0), (nv, nv))).amax() <= 1e-10);
        prop_assert!((d.dimpulse_dvminus - (dense.view((nv, 0), (nf, nv)))).amax() <= 1e-9);
    }
}
