//! Trains the local and global feature variants on a small setup and compares them.

use pixgcn::config::{RunConfig, SeedRange, Stage};
use pixgcn::train::cmd_compare;

fn main() -> pixgcn::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.dataset.train = SeedRange { start: 0, count: 16 };
    cfg.dataset.test = SeedRange { start: 1_000_000, count: 8 };
    cfg.schedule = vec![Stage { epochs: 6, lr: 1e-3 }, Stage { epochs: 2, lr: 1e-4 }];
    let out = std::env::temp_dir().join("pixgcn_ablation");
    let mut global = cfg.clone();
    global.feature_mode = pixgcn::features::FeatureMode::Global;
    let outcome = cmd_compare(&cfg, &global, &out)?;
    println!("{}", serde_json::to_string_pretty(&outcome.report).map_err(|e| pixgcn::Error::Format(e.to_string()))?);
    println!("curves and runs in {}", out.display());
    Ok(())
}
