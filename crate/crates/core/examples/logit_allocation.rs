//! Exit probabilities for a few cells under two coefficient profiles,
//! then one sampled allocation for the whole grid.

use cellevac::controller::{utility, AttributeTable, BetaConfig, ControlSnapshot, Controller, logit_probabilities};
use cellevac::rng::{stream, Stream};
use cellevac::scenario::{CellId, ScenarioLayout};

fn main() -> cellevac::Result<()> {
    let layout = ScenarioLayout::reference();
    let n = layout.num_cells();
    let snap = ControlSnapshot {
        cell_counts: (0..n).map(|c| 40 + (c % 7) * 10).collect(),
        exit_densities: vec![0.4, 1.8, 0.9, 0.2, 2.5, 0.6, 1.1, 0.3],
        open: vec![true; layout.num_exits()],
        peds_now: 2600,
        peds_initial: 3400,
    };
    let attrs = AttributeTable::build(&layout, &snap, None)?;
    for name in ["standard_no_cellevac", "optimal_0db"] {
        let beta = BetaConfig::profile(name).expect("built-in profile");
        let v = utility(&attrs, &beta)?;
        println!("{name}: {beta:?}");
        for c in [0, 20, 41] {
            let p = logit_probabilities(&v.rows[c])?;
            let cells: Vec<String> = p.iter().map(|x| format!("{x:.3}")).collect();
            println!("  cell {c:>2}: [{}]", cells.join(" "));
        }
    }
    let controller = Controller::new(BetaConfig::profile("optimal_0db").unwrap());
    let mut rng = stream(1, Stream::Controller);
    let a = controller.control_cycle(&layout, &snap, None, &mut rng)?;
    let colors: Vec<u32> = (0..n).map(|c| layout.exits[a.exit_of(CellId(c)).0].id).collect();
    println!("sampled allocation (exit label per cell): {colors:?}");
    Ok(())
}
