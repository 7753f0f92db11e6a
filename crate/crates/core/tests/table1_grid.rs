use lvstab_core::sweep::{
    a_d_zero_tau_independence_check, render_text_table, run_table, BaseModel, CellStatus, SweepConfig,
};
use lvstab_core::solver::FeasibilityStatus;

fn madb_or_zero(c: &lvstab_core::sweep::CellResult) -> f64 {
    match c.status {
        CellStatus::Capped | CellStatus::Bounded => c.madb.unwrap(),
        _ => 0.0,
    }
}

#[test]
fn benchmark_grid_structure() {
    let cfg = SweepConfig::table1(BaseModel::example1());
    let start = std::time::Instant::now();
    let res = run_table(&cfg).unwrap();
    println!("{}", render_text_table(&res, &cfg));
    println!("grid time {:?}", start.elapsed());
    assert_eq!(res.cells.len(), 30);
    for c in &res.cells {
        assert!(c.error.is_none(), "{:?}", c.error);
        assert!(c.warnings.is_empty(), "{:?}", c.warnings);
        if c.spec.lambda1 == 0.0 {
            assert_eq!(c.status, CellStatus::Capped, "{:?}", c.spec);
        }
    }
    let corner = res.cell(2.0, 1.0, 0.6515).unwrap();
    assert_eq!(corner.status, CellStatus::InfeasibleAtAnyTau);

    for a in &res.cells {
        for b in &res.cells {
            let dominated = b.spec.lambda1 >= a.spec.lambda1
                && b.spec.lambda2 >= a.spec.lambda2
                && b.spec.taud_scale >= a.spec.taud_scale;
            if dominated {
                assert!(madb_or_zero(b) <= madb_or_zero(a), "{:?} vs {:?}", a.spec, b.spec);
            }
        }
    }
}

#[test]
fn tau_independence_without_distributed_delay() {
    let cfg = SweepConfig::table1(BaseModel::example1());
    for lambda2 in [1.0, 2.0] {
        let rep = a_d_zero_tau_independence_check(&cfg, lambda2).unwrap();
        println!("{rep:?}");
        assert!(rep.all_consistent());
        assert!(rep
            .rows
            .iter()
            .all(|r| r.verdicts.iter().all(|v| v.1 == FeasibilityStatus::Feasible)));
        let (before, after) = rep.flip().expect("a flip inside the boundary scan");
        assert!(before >= 0.6515 && after <= 0.70);
    }
}
