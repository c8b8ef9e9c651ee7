//! Run configuration files and checkpoints: parse a config, save a model,
//! reload it, and show what happens with an incompatible architecture.

use crgtsr::app::{build_store, load_checkpoint, save_checkpoint, Checkpoint, RunConfig};
use crgtsr::ModelConfig;

const CONFIG: &str = "\
# small 5x5 run
seed = 11
rows = 5
cols = 5
object_count = 4
c_feature = 16
c_global = 16
rl_lr = 0.001
";

fn main() -> crgtsr::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = RunConfig::from_text(CONFIG, "inline")?;
    println!("canonical config:\n{}", config.to_text());
    println!("architecture hash {:016x}", config.model_hash());

    let (_, store) = build_store(&config, None)?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &store, config.model_hash())?;
    let ckpt = Checkpoint::load(&path)?;
    println!("{} tensors, {} bytes, store version {}", ckpt.tensors.len(), std::fs::metadata(&path)?.len(), ckpt.version);

    let (_, fresh) = build_store(&RunConfig { seed: 12, ..config.clone() }, None)?;
    load_checkpoint(&path, &fresh, config.model_hash())?;
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &fresh, config.model_hash())?;
    println!("save/load/save identical: {}", std::fs::read(&path)? == std::fs::read(&again)?);

    let wider = RunConfig { model: ModelConfig::small(), ..config };
    match build_store(&wider, Some(&path)) {
        Ok(_) => println!("unexpectedly compatible"),
        Err(e) => println!("wider model rejected: {e}"),
    }
    Ok(())
}
