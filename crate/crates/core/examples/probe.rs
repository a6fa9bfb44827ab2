//! Scratch measurement harness (not part of the library).
use kinetic_core::boltzmann::{
    loss_intensity, qplus_direct, FastOpts, KernelSpec, QplusFastPlan, SigmaQuadrature,
};
use kinetic_core::functionals::conserved;
use kinetic_core::grid::{make_grid, Distribution, VelocityGrid};
use kinetic_core::integrator::{
    Equation, ExtraColumn, GridConfig, InitialCondition, KernelConfig, MaxwellianMode, Runner,
    Scenario, TimeStep,
};
use kinetic_core::landau::{landau_fields, landau_op_scheme, FluxScheme};
use std::sync::Arc;
use std::time::Instant;

fn rel_l1(a: &[f64], b: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - y).abs();
        den += y.abs();
    }
    num / den
}

fn base(n: usize, lmax: f64, wb: bool) -> Scenario {
    Scenario {
        equation: Equation::Landau,
        kernel: KernelConfig { gamma: 1.0, b0: None },
        grid: GridConfig { d: 3, n, lmax },
        initial: InitialCondition::Bimodal {
            modes: vec![
                MaxwellianMode { rho: 0.5, mean: [0.9, 0.0, 0.0], temp: 0.9 },
                MaxwellianMode { rho: 0.5, mean: [-0.9, 0.0, 0.0], temp: 1.1 },
            ],
        },
        time_step: TimeStep::Auto,
        t_end: 0.3,
        diag_every: 1,
        snapshot_every: 0,
        conserve: false,
        fast_path: false,
        well_balanced: wb,
        floor: None,
        sigma: None,
        fast: None,
        super_stepping: true,
        super_dt: None,
        extras: vec![ExtraColumn::ClippedMass],
        label: None,
    }
}

fn bimodal_values(grid: &Arc<VelocityGrid>) -> Vec<f64> {
    let a = Distribution::maxwellian(grid.clone(), 0.5, [0.9, 0.0, 0.0], 0.9).unwrap();
    let b = Distribution::maxwellian(grid.clone(), 0.5, [-0.9, 0.0, 0.0], 1.1).unwrap();
    a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect()
}

/// Plain midpoint with fields rebuilt from the current state every RHS call
/// (the "true" semi-discrete dynamics), clipping after each step like commit().
fn midpoint_clip_rate(n: usize, lmax: f64, scheme: FluxScheme, dt: f64, steps: usize, every: usize) {
    let grid = make_grid(3, n, lmax).unwrap();
    let mut vals = bimodal_values(&grid);
    let m0 = grid.quadrature(&vals);
    let mut clip_total = 0.0;
    println!("--- midpoint n={n} L={lmax} {scheme:?} dt={dt:.1e} ---");
    let rhs = |v: &[f64]| -> Vec<f64> {
        let f = Distribution::new(grid.clone(), v.to_vec(), "s").unwrap();
        let fields = landau_fields(&f, 1.0).unwrap();
        landau_op_scheme(&f, &fields, scheme).unwrap()
    };
    for k in 0..steps {
        // midpoint: clip the half state for the RHS eval only
        let r1 = rhs(&vals);
        let half: Vec<f64> =
            vals.iter().zip(&r1).map(|(&v, &r)| (v + 0.5 * dt * r).max(0.0)).collect();
        let r2 = rhs(&half);
        for (v, r) in vals.iter_mut().zip(&r2) {
            *v += dt * r;
        }
        // commit-style clip
        let mut clipped = 0.0;
        for v in vals.iter_mut() {
            if *v < 0.0 {
                clipped -= *v;
                *v = 0.0;
            }
        }
        clip_total += clipped * grid.cell_volume();
        if (k + 1) % every == 0 {
            let m = grid.quadrature(&vals);
            println!(
                "  t={:.4}: mass={m:.9} clip_total={clip_total:.4e} ({:.3e} of m0)",
                dt * (k + 1) as f64,
                clip_total / m0
            );
        }
    }
}

fn acceptance_scale_run(n: usize, lmax: f64, wb: bool, conserve: bool, t_end: f64) {
    let mut sc = base(n, lmax, wb);
    sc.conserve = conserve;
    sc.t_end = t_end;
    sc.super_dt = Some(0.1);
    let start = Instant::now();
    let runner = Runner::new(sc).unwrap();
    let traj = runner.run();
    if let Some(info) = &traj.aborted {
        println!("  ABORTED: {info:?}");
    }
    let f = Distribution::new(traj.grid.clone(), traj.final_values().to_vec(), "final").unwrap();
    let (m, _, e) = conserved(&f);
    println!(
        "--- run n={n} L={lmax} wb={wb} conserve={conserve} t_end={t_end}: {} records, {} steps, clip_total={:.4e}, mass={m:.9}, energy={e:.6}, {:.1}s ---",
        traj.records.len(),
        traj.steps_taken,
        traj.clipped_total,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("mid");
    match mode {
        "mid" => {
            // true semi-discrete clip rate, both schemes, n=12
            midpoint_clip_rate(12, 6.0, FluxScheme::Exponential, 2.0e-4, 500, 100);
            midpoint_clip_rate(12, 6.0, FluxScheme::Centered, 2.0e-4, 500, 100);
        }
        "mid24" => {
            midpoint_clip_rate(24, 6.0, FluxScheme::Exponential, 2.0e-5, 500, 100);
        }
        "floor" => {
            for (n, lmax) in [(12usize, 6.0), (24, 6.0), (32, 8.0)] {
                let grid = make_grid(3, n, lmax).unwrap();
                let vals = bimodal_values(&grid);
                let f = Distribution::new(grid.clone(), vals, "bimodal").unwrap();
                let fields = landau_fields(&f, 1.0).unwrap();
                println!(
                    "n={n} L={lmax}: eigenvalue_floor={:.4e}  max_eig={:.2}  tol={:.2e}",
                    fields.eigenvalue_floor(),
                    fields.max_eigenvalue(),
                    -1e-6 * fields.max_eigenvalue()
                );
            }
        }
        "acc" => {
            // acceptance-like resolution, defaults (wb on), short horizon
            acceptance_scale_run(32, 8.0, true, true, 0.3);
        }
        "scale" => {
            // pure-operator clip-rate scaling with resolution (no wb, no projection)
            acceptance_scale_run(12, 6.0, false, false, 0.3);
            acceptance_scale_run(16, 6.0, false, false, 0.3);
            acceptance_scale_run(24, 6.0, false, false, 0.3);
            acceptance_scale_run(32, 6.0, false, false, 0.3);
        }
        "acc12" => {
            acceptance_scale_run(12, 6.0, true, true, 1.0);
            acceptance_scale_run(12, 6.0, false, false, 1.0);
        }
        "dtime" => {
            // one direct gain evaluation at the criterion-relevant size
            let k = KernelSpec::constant_unit_l1(3, 1.0).unwrap();
            for (np, na) in [(2usize, 4usize), (4, 8), (8, 16)] {
                let grid = make_grid(3, 16, 8.0).unwrap();
                let f = Distribution::maxwellian(grid.clone(), 1.0, [0.0; 3], 1.0).unwrap();
                let sq = SigmaQuadrature::new(np, na).unwrap();
                let t0 = Instant::now();
                let q = qplus_direct(&f, &f, &k, &sq).unwrap();
                let dt = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let _r = loss_intensity(&f, &k);
                let dt_loss = t1.elapsed().as_secs_f64();
                println!(
                    "n=16 L=8 sigma {np}x{na}: qplus_direct {dt:.2}s, loss {dt_loss:.3}s, max q {:.4e}",
                    q.iter().cloned().fold(0.0, f64::max)
                );
            }
        }
        "mm" => {
            // gamma = 0 multiplier path vs the closed form Q+(M,M) = rho*M
            let k = KernelSpec::constant_unit_l1(3, 0.0).unwrap();
            for (n, lmax) in [(16usize, 8.0), (24, 8.0), (32, 8.0), (32, 6.0)] {
                let grid = make_grid(3, n, lmax).unwrap();
                let f = Distribution::maxwellian(grid.clone(), 1.0, [0.0; 3], 1.0).unwrap();
                let plan = QplusFastPlan::new(&grid, &k, FastOpts::default()).unwrap();
                let fast = plan.qplus(&f, &f).unwrap();
                let rho = grid.quadrature(f.values());
                let closed: Vec<f64> = f.values().iter().map(|&x| rho * x).collect();
                println!(
                    "multiplier vs rho*M: n={n} L={lmax}: rel L1 {:.4e}",
                    rel_l1(&fast, &closed)
                );
            }
            // multiplier vs direct quadrature under refinement (direct owns error)
            for n in [12usize, 16] {
                let grid = make_grid(3, n, 6.0).unwrap();
                let f = Distribution::maxwellian(grid.clone(), 1.0, [0.3, 0.0, 0.0], 1.0).unwrap();
                let plan = QplusFastPlan::new(&grid, &k, FastOpts::default()).unwrap();
                let fast = plan.qplus(&f, &f).unwrap();
                let sq = SigmaQuadrature::new(8, 16).unwrap();
                let direct = qplus_direct(&f, &f, &k, &sq).unwrap();
                println!("multiplier vs direct: n={n} L=6: rel L1 {:.4e}", rel_l1(&fast, &direct));
            }
        }
        "gm" => {
            // gain-mass vs loss-mass identity gap under refinement
            let k = KernelSpec::constant_unit_l1(3, 1.0).unwrap();
            let sq = SigmaQuadrature::new(8, 16).unwrap();
            for n in [12usize, 16] {
                let grid = make_grid(3, n, 6.0).unwrap();
                let m1 =
                    Distribution::maxwellian(grid.clone(), 0.7, [0.8, 0.0, 0.0], 1.1).unwrap();
                let m2 =
                    Distribution::maxwellian(grid.clone(), 0.3, [-0.5, 0.6, 0.0], 0.9).unwrap();
                let vals: Vec<f64> =
                    m1.values().iter().zip(m2.values()).map(|(&a, &b)| a + b).collect();
                let f = Distribution::new(grid.clone(), vals, "smooth").unwrap();
                let gain = qplus_direct(&f, &f, &k, &sq).unwrap();
                let loss = loss_intensity(&f, &k);
                let gm = grid.quadrature(&gain);
                let lp: Vec<f64> = loss.iter().zip(f.values()).map(|(&a, &b)| a * b).collect();
                let lm = grid.quadrature(&lp);
                println!("gain-mass gap: n={n} L=6: rel {:.4e}", (gm - lm).abs() / lm);
            }
        }
        "fvd" => {
            // fast vs direct under refinement, gamma = 1
            let k = KernelSpec::constant_unit_l1(3, 1.0).unwrap();
            for (np, na) in [(4usize, 8usize), (8, 16)] {
                let sq = SigmaQuadrature::new(np, na).unwrap();
                for n in [12usize, 16] {
                    let grid = make_grid(3, n, 5.0).unwrap();
                    let f = Distribution::maxwellian(grid.clone(), 1.0, [0.0; 3], 1.0).unwrap();
                    let direct = qplus_direct(&f, &f, &k, &sq).unwrap();
                    let plan = QplusFastPlan::new(&grid, &k, FastOpts::default()).unwrap();
                    let fast = plan.qplus(&f, &f).unwrap();
                    println!(
                        "fast vs direct maxwellian: n={n} L=5 sigma {np}x{na}: rel L1 {:.4e}",
                        rel_l1(&fast, &direct)
                    );
                }
            }
            // plateau + super-gaussian at n=16 (leading criterion shapes)
            let sq = SigmaQuadrature::new(4, 8).unwrap();
            let grid = make_grid(3, 16, 5.0).unwrap();
            let mut plateau = vec![0.0; grid.len()];
            let mut supergauss = vec![0.0; grid.len()];
            for flat in 0..grid.len() {
                let v = grid.coords(flat);
                let s2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                plateau[flat] = 1.0 / (1.0 + ((s2.sqrt() - 2.0) / 0.3).exp());
                supergauss[flat] = (-s2 * s2 / 8.0).exp();
            }
            for (name, vals) in [("plateau", plateau), ("supergauss", supergauss)] {
                let f = Distribution::new(grid.clone(), vals, name).unwrap();
                let direct = qplus_direct(&f, &f, &k, &sq).unwrap();
                let plan = QplusFastPlan::new(&grid, &k, FastOpts::default()).unwrap();
                let fast = plan.qplus(&f, &f).unwrap();
                println!("fast vs direct {name}: n=16 L=5: rel L1 {:.4e}", rel_l1(&fast, &direct));
            }
        }
        "mt" => {
            // single-call timing of the gamma=0 multiplier at acceptance size
            let k = KernelSpec::constant_unit_l1(3, 0.0).unwrap();
            let grid = make_grid(3, 32, 8.0).unwrap();
            let f = Distribution::maxwellian(grid.clone(), 1.0, [0.0; 3], 1.0).unwrap();
            let t0 = std::time::Instant::now();
            let plan = QplusFastPlan::new(&grid, &k, FastOpts::default()).unwrap();
            println!("plan build: {:?}", t0.elapsed());
            for rep in 0..3 {
                let t1 = std::time::Instant::now();
                let q = plan.qplus(&f, &f).unwrap();
                println!("qplus call {rep}: {:?}  (q[0]={:.3e})", t1.elapsed(), q[0]);
            }
            let t2 = std::time::Instant::now();
            let c = plan.collision(&f, &f).unwrap();
            println!("collision call: {:?} (c[0]={:.3e})", t2.elapsed(), c[0]);
        }
        "fisher0" => {
            // Fisher dissipation stationarity at equilibrium
            let k = KernelSpec::constant_unit_l1(3, 1.0).unwrap();
            for (n, lmax) in [(16usize, 6.0), (32, 8.0)] {
                let grid = make_grid(3, n, lmax).unwrap();
                let plan = QplusFastPlan::new(&grid, &k, FastOpts::default()).unwrap();
                let m = Distribution::maxwellian(grid.clone(), 1.0, [0.0; 3], 1.0).unwrap();
                let eq = plan.fisher_rhs(&m).unwrap();
                let m1 =
                    Distribution::maxwellian(grid.clone(), 0.6, [1.0, 0.0, 0.0], 0.8).unwrap();
                let m2 =
                    Distribution::maxwellian(grid.clone(), 0.4, [-1.2, 0.4, 0.0], 1.1).unwrap();
                let vals: Vec<f64> =
                    m1.values().iter().zip(m2.values()).map(|(&a, &b)| a + b).collect();
                let f = Distribution::new(grid.clone(), vals, "bimodal").unwrap();
                let neq = plan.fisher_rhs(&f).unwrap();
                println!(
                    "fisher rhs n={n} L={lmax}: at M total={:+.4e} (t1={:+.3e} t2={:+.3e} t3={:+.3e} t4={:+.3e}); at bimodal total={:+.4e}",
                    eq.total, eq.term1, eq.term2, eq.term3, eq.term4, neq.total
                );
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
