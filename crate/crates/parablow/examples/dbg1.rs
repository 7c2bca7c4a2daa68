use parablow::*;
use parablow::geometry::Field;
fn main() {
    let h = 1.0/16.0;
    let dom = DomainSpec::Annulus { inner: 1.0, outer: 2.0, dim: 1 };
    let p = ProblemSpec {
        q: 2.0, domain: dom.clone(), lateral: LateralData::Zero,
        initial: InitialMode::BlowUp, horizon: 1.0, no_boundary: false,
    };
    let stepper = StepperConfig {
        schedule: TimeSchedule::Geometric { tau0: 1e-4, ratio: 1.05, tau_max: 2e-3 },
        ..Default::default()
    };
    let grid = build_grid(&dom, h).unwrap();
    let outs = [0.1, 0.3];
    let mut prev: Option<Vec<Snapshot>> = None;
    let mut k = 1.0f64;
    for i in 0..40 {
        let u0 = Field::constant(&grid, k);
        let traj = evolve(&u0, &p, &stepper, &outs, 0.0).unwrap();
        if let Some(old) = &prev {
            let mut worst = (0.0f64, 0usize, 0usize);
            for (si,(sn, so)) in traj.snapshots.iter().zip(old).enumerate() {
                for &fl in grid.interior_nodes() {
                    let a = sn.field.values()[fl as usize];
                    let b = so.field.values()[fl as usize];
                    let c = (a-b).abs()/a.abs().max(1e-30);
                    if c > worst.0 { worst = (c, si, fl as usize); }
                }
            }
            if i % 4 == 0 || i > 30 {
                let pos = grid.position(worst.2);
                println!("k=2^{i}: worst change {:.3e} at t-index {} x={:.4} (value {:.6e})", worst.0, worst.1, pos[0],
                    traj.snapshots[worst.1].field.values()[worst.2]);
            }
        }
        prev = Some(traj.snapshots);
        k *= 2.0;
    }
}
