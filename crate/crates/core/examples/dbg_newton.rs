use bubblecluster::analytic::constants::{compute_constants, QuadratureSettings};
use bubblecluster::cluster::{find_critical_point, Configuration, NewtonOptions};
use bubblecluster::construct::{solve_balancing, BalanceOptions, BalanceSystem};
use bubblecluster::continuation::{split_newton_solve, extract_peaks, PeakOptions, SplitSolveOptions};
use bubblecluster::grid::{build_grid, EllipticOperator, GridSpec, MaskKind, Potential};

fn main() {
    let constants = compute_constants(4, &QuadratureSettings::default()).unwrap();
    let pot = Potential::quadratic(0.5, &[0.5; 4]);
    let anchor = pot.anchor(&[0.0; 4], 1e-10).unwrap();
    let cert = find_critical_point(
        &anchor,
        &Configuration::new(vec![vec![0.05, 0.0, 0.0, 0.0]]).unwrap(),
        &NewtonOptions::default(),
    )
    .unwrap();
    let spec = GridSpec::with_nodes(vec![(-1.0, 1.0); 4], &[17; 4], MaskKind::Box).unwrap();
    let grid = build_grid(&spec).unwrap();
    let op = EllipticOperator::new(&grid, &pot).unwrap();
    for eps in [0.3, 0.2] {
        let sys = BalanceSystem::new(&constants, &pot, &anchor, &cert, eps).unwrap();
        let (rv, _) = solve_balancing(&sys, &BalanceOptions::default()).unwrap();
        let pred = sys.realize(&rv).unwrap();
        let t0 = std::time::Instant::now();
        match split_newton_solve(&op, &sys, &rv, &SplitSolveOptions::default()) {
            Ok(sr) => {
                let peaks = extract_peaks(&grid, &sr.report.u, &PeakOptions::default());
                let pk = peaks.first().map(|p| (p.lambda_hat, p.lambda_fit, p.alpha_hat)).unwrap_or((0.0, 0.0, 0.0));
                println!(
                    "eps={eps}: balanced rate {:.2} -> {:?} outer {} inner {} res {:.2e} soft {:.2e} pos {} peaks {} (lh {:.2}, lf {:.2}, a {:.2}) [{:.1?}]",
                    pred.rates[0], sr.report.status, sr.outer_iterations, sr.report.iterations,
                    sr.report.residual, sr.soft_residual, sr.report.positive, peaks.len(), pk.0, pk.1, pk.2, t0.elapsed()
                );
                let hist: Vec<String> = sr.report.history.iter().map(|h| format!("{h:.2e}")).collect();
                println!("  history: {hist:?}");
            }
            Err(e) => println!("eps={eps}: error {e}"),
        }
    }
}
