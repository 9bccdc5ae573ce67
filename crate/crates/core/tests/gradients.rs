use xmvae_core::gradcheck::{check_random_elbo_graphs, relative_error};

#[test]
fn random_elbo_graphs_match_finite_differences() {
    let reports = check_random_elbo_graphs(2024, 50, 64, 8).unwrap();
    let mut worst = 0.0f64;
    for (g, r) in &reports {
        assert!(r.checked > 0, "{g:?}");
        assert!(r.max_relative_error < 1e-5, "{g:?} {r:?}");
        worst = worst.max(r.max_relative_error);
    }
    assert!(worst.is_finite());
}

#[test]
fn relative_error_is_symmetric() {
    for (a, b) in [(1.0, 1.1), (-3.0, 2.0), (1e-12, -1e-12)] {
        assert_eq!(relative_error(a, b), relative_error(b, a));
    }
}
