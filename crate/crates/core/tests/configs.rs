use std::path::PathBuf;

use laps_core::config::Scenario;
use laps_core::workload::RequestClass;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load_and_validate() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "conf") {
            let sc = Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            sc.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 6, "only {seen} configs found");
}

#[test]
fn mix_shape_class_shares() {
    let sc = Scenario::load(configs_dir().join("mix_shape.conf")).unwrap();
    let reqs = sc.requests().unwrap();
    let share = |first: bool| {
        let pick: Vec<_> = reqs.iter().filter(|r| (r.turn == 1) == first).collect();
        let short = pick
            .iter()
            .filter(|r| sc.sim.class_of(r) == RequestClass::Short)
            .count();
        (short as f64 / pick.len() as f64, pick.len())
    };
    let (first, n1) = share(true);
    let (later, n2) = share(false);
    assert!(n1 > 1000 && n2 > 1000, "too few samples: {n1}, {n2}");
    assert!((first - 0.63).abs() <= 0.02, "first-turn short share {first}");
    assert!((later - 0.81).abs() <= 0.02, "later-turn short share {later}");
}
