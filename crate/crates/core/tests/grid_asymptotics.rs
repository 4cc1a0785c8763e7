//! Checks that the discrete projections reproduce the predicted asymptotic
//! pairings at desk scale: the self-pairing constant, the norm limit, and
//! the smallness of cross-bubble pairings.

use bubblecluster::analytic::constants::{compute_constants, QuadratureSettings};
use bubblecluster::analytic::{interaction, Bubble};
use bubblecluster::grid::projection::basis_fields;
use bubblecluster::grid::{
    build_grid, EllipticOperator, GridSpec, MaskKind, Potential, ProjectionOptions,
};

fn coarse_4d(nodes: usize, half: f64) -> bubblecluster::grid::DomainGrid {
    let spec =
        GridSpec::with_nodes(vec![(-half, half); 4], &vec![nodes; 4], MaskKind::Box).unwrap();
    build_grid(&spec).unwrap()
}

#[test]
fn rate_pairing_matches_predicted_constant() {
    // <pi delta, lambda d(pi delta)/d lambda> against the predicted
    // ln(lambda)/lambda^2 V(a) coefficient: ratio within a factor 2
    let constants = compute_constants(4, &QuadratureSettings::default()).unwrap();
    let grid = coarse_4d(25, 0.75);
    let pot = Potential::quadratic(2.0, &[-1.0, 0.5, 0.5, 0.5]);
    let op = EllipticOperator::new(&grid, &pot).unwrap();
    let opts = ProjectionOptions::default();
    for rate in [4.0, 8.0] {
        let bubble = Bubble::new(vec![0.0; 4], rate).unwrap();
        let fields = basis_fields(&op, &bubble, &opts).unwrap();
        let numeric = op.inner_product(&fields[0], &fields[1]);
        let predicted = constants.c_of_n * rate.ln() / (rate * rate) * pot.value(&[0.0; 4]);
        let ratio = numeric / predicted;
        assert!(
            (0.5..2.0).contains(&ratio),
            "rate {rate}: pairing {numeric:.4} vs predicted {predicted:.4} (ratio {ratio:.3})"
        );
    }
}

#[test]
fn projection_norm_approaches_the_bubble_integral() {
    // || pi delta ||^2 -> S_n from below as the rate grows
    let constants = compute_constants(4, &QuadratureSettings::default()).unwrap();
    let grid = coarse_4d(25, 0.75);
    let pot = Potential::quadratic(2.0, &[-1.0, 0.5, 0.5, 0.5]);
    let op = EllipticOperator::new(&grid, &pot).unwrap();
    let opts = ProjectionOptions::default();
    let mut deficits = Vec::new();
    for rate in [3.0, 4.0, 6.0, 8.0] {
        let bubble = Bubble::new(vec![0.0; 4], rate).unwrap();
        let fields = basis_fields(&op, &bubble, &opts).unwrap();
        let norm2 = op.inner_product(&fields[0], &fields[0]);
        deficits.push(constants.s_n - norm2);
    }
    for pair in deficits.windows(2) {
        assert!(
            pair[1] < pair[0],
            "norm deficit must shrink as the rate grows: {deficits:?}"
        );
    }
    assert!(deficits.iter().all(|d| *d > 0.0), "{deficits:?}");
}

#[test]
fn cross_bubble_pairings_scale_with_the_interaction() {
    // all pairings between basis fields of two separated bubbles are
    // O(eps_12): the fitted constants stay bounded across separations
    let grid = coarse_4d(25, 0.75);
    let pot = Potential::quadratic(2.0, &[-1.0, 0.5, 0.5, 0.5]);
    let op = EllipticOperator::new(&grid, &pot).unwrap();
    let opts = ProjectionOptions::default();
    let mut fitted = Vec::new();
    for sep in [0.5, 0.8] {
        let b1 = Bubble::new(vec![sep / 2.0, 0.0, 0.0, 0.0], 8.0).unwrap();
        let b2 = Bubble::new(vec![-sep / 2.0, 0.0, 0.0, 0.0], 8.0).unwrap();
        let f1 = basis_fields(&op, &b1, &opts).unwrap();
        let f2 = basis_fields(&op, &b2, &opts).unwrap();
        let eps12 = interaction(&b1, &b2).eps;
        let mut worst: f64 = 0.0;
        for u in &f1 {
            for w in &f2 {
                worst = worst.max(op.inner_product(u, w).abs());
            }
        }
        fitted.push(worst / eps12);
    }
    let ratio = fitted[0] / fitted[1];
    assert!(
        (0.25..4.0).contains(&ratio),
        "cross-pairing constants drift: {fitted:?}"
    );
}
