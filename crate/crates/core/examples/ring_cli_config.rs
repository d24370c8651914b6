//! Writes a JSON config for `dpgm ringsim` with an imbalanced ring, runs
//! a short training through the library and prints per-mode proportions.
//!
//! cargo run --release --example ring_cli_config -- [epochs]

use dpgm::experiments::ringsim::{run_ringsim, RingsimConfig};

fn main() -> dpgm::Result<()> {
    let epochs = std::env::args().nth(1).map(|e| e.parse().expect("epochs")).unwrap_or(20);
    let mut cfg = RingsimConfig { imbalance: 3, data_samples: 2000, eval_samples: 2000, ..RingsimConfig::default() };
    cfg.presgan.epochs = epochs;
    cfg.presgan.hidden = vec![64, 64];
    println!("{}", serde_json::to_string_pretty(&cfg)?);

    let res = run_ringsim(&cfg, |row| {
        if row.epoch % 5 == 4 {
            println!("epoch {:3}  sigma [{:.3}, {:.3}]", row.epoch + 1, row.sigma_min, row.sigma_max);
        }
        Ok(())
    })?;
    let props: Vec<String> = res.coverage.proportions.iter().map(|p| format!("{p:.3}")).collect();
    println!("modes covered {}  [{}]", res.coverage.modes_covered, props.join(" "));
    Ok(())
}
