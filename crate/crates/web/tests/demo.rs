use pkifmm::{Kernel, PeriodicKernel, PeriodicSetup, Periodicity};
use pkifmm_web::{charge_pair, laplace_potential, slice, spectrum, stokes_velocity};

#[test]
fn laplace_slice_matches_ewald() {
    let (src, q) = charge_pair();
    let got = laplace_potential(8, 6, 0.3).unwrap();
    let pk = PeriodicKernel::new(Kernel::Laplace, PeriodicSetup::new(Periodicity::Tp, 1).unwrap(), Default::default()).unwrap();
    let want = pk.oracle_system_eval(&src, &q, &slice(6, 0.3)).unwrap();
    let err = pkifmm::report::rel_l2(&got, &want).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn stokes_slice_shape() {
    let u = stokes_velocity(4, 5, 0.5).unwrap();
    assert_eq!(u.len(), 75);
    assert!(u.iter().all(|v| v.is_finite()));
}

#[test]
fn spectrum_is_sorted() {
    let s = spectrum("laplace", 4).unwrap();
    assert_eq!(s.len(), 56);
    assert!(s.windows(2).all(|w| w[0] >= w[1]));
    assert!(spectrum("helmholtz", 4).is_err());
    assert!(spectrum("laplace", 40).is_err());
    assert!(laplace_potential(6, 0, 0.5).is_err());
}
