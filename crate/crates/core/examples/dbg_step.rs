use bubblecluster::analytic::constants::{compute_constants, QuadratureSettings};
use bubblecluster::analytic::{critical_exponent, Bubble};
use bubblecluster::cluster::{find_critical_point, Configuration, NewtonOptions};
use bubblecluster::construct::{solve_balancing, BalanceOptions, BalanceSystem};
use bubblecluster::continuation::pde_residual;
use bubblecluster::grid::projection::basis_fields;
use bubblecluster::grid::solver::{minres, SolverOptions};
use bubblecluster::grid::{build_grid, EllipticOperator, GridSpec, MaskKind, Potential, ProjectionOptions, GridField};

fn dotp(a: &GridField, b: &GridField) -> f64 { a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum() }

fn main() {
    let constants = compute_constants(4, &QuadratureSettings::default()).unwrap();
    let pot = Potential::quadratic(0.5, &[0.5; 4]);
    let anchor = pot.anchor(&[0.0; 4], 1e-10).unwrap();
    let cert = find_critical_point(&anchor, &Configuration::new(vec![vec![0.05, 0.0, 0.0, 0.0]]).unwrap(), &NewtonOptions::default()).unwrap();
    let spec = GridSpec::with_nodes(vec![(-1.0, 1.0); 4], &[17; 4], MaskKind::Box).unwrap();
    let grid = build_grid(&spec).unwrap();
    let op = EllipticOperator::new(&grid, &pot).unwrap();
    let eps: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let n = 4;
    let p = critical_exponent(n);
    let sys = BalanceSystem::new(&constants, &pot, &anchor, &cert, eps).unwrap();
    let (rv, _) = solve_balancing(&sys, &BalanceOptions::default()).unwrap();
    let mut rv = rv.clone();
    // set the rate to the stalled value ~4 from the previous run
    let pred0 = sys.realize(&rv).unwrap();
    let target = 4.0f64;
    rv.shift[0] = (pred0.rates[0] * (1.0 + rv.shift[0]).sqrt() / target).powi(2) - 1.0;
    let pred = sys.realize(&rv).unwrap();
    println!("rate {}", pred.rates[0]);
    let proj_opts = ProjectionOptions { lambda_h_cap: 1.5, d0: None, solver: Default::default() };
    let bubble = Bubble::new(pred.centers[0].clone(), pred.rates[0]).unwrap();
    let fields = basis_fields(&op, &bubble, &proj_opts).unwrap();
    let mut u = GridField::zeros(&grid);
    u.axpy(pred.alpha[0], &fields[0]);
    // orthonormalize
    let mut ortho: Vec<GridField> = Vec::new();
    for phi in &fields {
        let mut e = phi.clone();
        for q in &ortho { let c = dotp(q, &e); e.axpy(-c, q); }
        let nn = dotp(&e, &e).sqrt();
        if nn > 1e-12 { e.scale(1.0 / nn); ortho.push(e); }
    }
    let project = |g: &GridField| { let mut o = g.clone(); for q in &ortho { let c = dotp(q, &o); o.axpy(-c, q); } o };
    let l2 = |g: &GridField| (g.values().iter().map(|x| x*x).sum::<f64>() * grid.cell_volume()).sqrt();
    let g = pde_residual(&op, eps, &u, None);
    println!("|G| {:.3e} |PG| {:.3e}", l2(&g), l2(&project(&g)));
    let mut weight = GridField::zeros(&grid);
    for i in 0..grid.node_count() {
        let v = u.get(i);
        if grid.is_interior(i) && v > 0.0 { weight.set(&grid, i, v.powf(p - 1.0 - eps)); }
    }
    let apply_projected = |w: &GridField| {
        let pw = project(w);
        let mut out = op.apply(&pw);
        for i in 0..grid.node_count() {
            let x = out.get(i) - (p - eps) * weight.get(i) * pw.get(i);
            out.set(&grid, i, x);
        }
        project(&out)
    };
    let mut rhs = project(&g); rhs.scale(-1.0);
    let (s_raw, stats) = minres(&apply_projected, &rhs, &SolverOptions { tol: 1e-10, max_iter: 60000 }).unwrap();
    let s = project(&s_raw);
    println!("minres iters {} rel {:.2e}; |s|max {:.3e} |s|l2h {:.3e}", stats.iterations, stats.relative_residual, s.max_abs(), l2(&s));
    for t in [1.0, 0.5, 0.25, 0.1, 0.05, 0.01] {
        let mut trial = u.clone(); trial.axpy(t, &s);
        let tg = pde_residual(&op, eps, &trial, None);
        println!("  t={t}: |PG| {:.4e} |G| {:.4e} min {:.3e}", l2(&project(&tg)), l2(&tg), trial.interior_min(&grid));
    }
}
