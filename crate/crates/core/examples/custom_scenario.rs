//! Loading a scenario document from disk and evacuating it.

use cellevac::scenario::ScenarioLayout;
use cellevac::sfm::{run_evacuation, RunConfig};

const HALL: &str = r#"
name = "small_hall"

[arena]
polygon = [[0.0, -4.5], [18.0, -4.5], [18.0, 4.5], [0.0, 4.5]]
obstacles = [[[8.0, -1.0], [10.0, -1.0], [10.0, 1.0], [8.0, 1.0]]]

[[exits]]
id = 1
position = [0.0, 0.0]
width_m = 1.5
critical_density = 2.2

[[exits]]
id = 2
position = [18.0, 0.0]
width_m = 3.0
critical_density = 2.2

[grid]
cell_width_m = 6.0
centers = [
    [0.0, -5.196152], [6.0, -5.196152], [12.0, -5.196152], [18.0, -5.196152],
    [-3.0, 0.0], [3.0, 0.0], [9.0, 0.0], [15.0, 0.0], [21.0, 0.0],
    [0.0, 5.196152], [6.0, 5.196152], [12.0, 5.196152], [18.0, 5.196152],
]

[population]
count = 150
speed_min = 1.2
speed_max = 1.4
"#;

fn main() -> cellevac::Result<()> {
    let dir = std::env::temp_dir().join("cellevac_custom_scenario");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("small_hall.scn");
    std::fs::write(&path, HALL)?;

    let layout = ScenarioLayout::from_file(&path)?;
    println!(
        "{}: {} cells, {} exits, {:.1} m² walkable",
        layout.name,
        layout.num_cells(),
        layout.num_exits(),
        layout.walkable_area()
    );
    let out = run_evacuation(&layout, &RunConfig { seed: 3, ..Default::default() })?;
    println!("evacuated {} in {:.1} s", out.initial_population, out.metrics.total_evac_time);
    for (gate, n) in layout.exits.iter().zip(&out.metrics.exit_throughput) {
        println!("  Ex{}: {n}", gate.id);
    }
    Ok(())
}
