//! How often a wristband believes it is in the wrong cell as the
//! shadowing deviation grows.

use cellevac::geometry::Vec2;
use cellevac::positioning::{mean_rssi, resolve_cell, ChannelParams};
use cellevac::rng::{stream, Stream};
use cellevac::scenario::ScenarioLayout;

fn main() -> cellevac::Result<()> {
    let layout = ScenarioLayout::reference();
    let clean = ChannelParams::with_sigma(0.0);
    for d in [1.0, 3.0, 10.0, 30.0] {
        println!("mean RSSI at {d:>4} m: {:7.2} dBm", mean_rssi(d, &clean) + 0.0);
    }
    let mut rng = stream(3, Stream::Channel);
    let probes: Vec<Vec2> = (0..400)
        .map(|i| Vec2::new(-17.0 + 34.0 * ((i % 20) as f64 + 0.5) / 20.0, -12.0 + 24.0 * ((i / 20) as f64 + 0.5) / 20.0))
        .collect();
    for sigma in [0.0, 5.0, 10.0, 20.0, 30.0, 40.0] {
        let params = ChannelParams::with_sigma(sigma);
        let mut wrong = 0;
        for &p in &probes {
            let truth = layout.locate_cell_exact(p)?;
            for _ in 0..25 {
                if resolve_cell(p, &layout, &params, &mut rng) != truth {
                    wrong += 1;
                }
            }
        }
        println!("sigma {sigma:>4} dB: {:5.1}% misresolved", 100.0 * wrong as f64 / (probes.len() * 25) as f64);
    }
    Ok(())
}
