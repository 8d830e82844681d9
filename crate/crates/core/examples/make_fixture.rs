//! Write a synthetic quarterly price panel and treatment roster.
//!
//! Usage: `cargo run --example make_fixture -- <out dir> [seed]`

use std::path::PathBuf;

use latent_ipw::io::{write_roster, write_wide_csv, WidePanel};
use latent_ipw::simulation::{simulate_null_returns, NullPanelDesign};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const UNITS: usize = 224;
const TREATED: usize = 29;
const PRICE_ROWS: usize = 72;
const EFFECT: f64 = -0.02;

fn quarter_end(k: usize) -> String {
    let month = 6 + 3 * k;
    let (year, m) = (1998 + (month - 1) / 12, (month - 1) % 12 + 1);
    let day = match m {
        3 | 12 => 31,
        _ => 30,
    };
    format!("{year:04}-{m:02}-{day:02}")
}

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().expect("output directory"));
    let mut seed: u64 = args.next().map(|s| s.parse().expect("integer seed")).unwrap_or(0);
    let design = NullPanelDesign {
        n_units: UNITS,
        n_periods: PRICE_ROWS - 1,
        beta: [-1.9, 0.05, 0.5, 0.75],
        return_scale: 0.05,
        ..Default::default()
    };
    let (mut returns, treated) = loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, z) = simulate_null_returns(&design, &mut rng).expect("simulation");
        if z.iter().filter(|&&t| t).count() == TREATED {
            break (r, z);
        }
        seed += 1;
    };
    let last = returns.nrows() - 1;
    for (i, &z) in treated.iter().enumerate() {
        if z {
            returns[(last, i)] += EFFECT;
        }
    }
    let mut prices = DMatrix::from_element(PRICE_ROWS, UNITS, 0.0);
    for i in 0..UNITS {
        prices[(0, i)] = 20.0 + (i % 17) as f64 * 5.0;
        for t in 1..PRICE_ROWS {
            prices[(t, i)] = ((prices[(t - 1, i)] * returns[(t - 1, i)].exp()) * 1e4).round() / 1e4;
        }
    }
    let wide = WidePanel {
        dates: (0..PRICE_ROWS).map(quarter_end).collect(),
        unit_ids: (0..UNITS).map(|i| format!("CO{i:03}")).collect(),
        values: prices,
    };
    std::fs::create_dir_all(&dir).expect("create output directory");
    write_wide_csv(&dir.join("prices.csv"), &wide).expect("write prices");
    write_roster(&dir.join("roster.csv"), &wide.unit_ids, &treated).expect("write roster");
    println!("seed {seed}: {} periods, last date {}", PRICE_ROWS, wide.dates[PRICE_ROWS - 1]);
}
