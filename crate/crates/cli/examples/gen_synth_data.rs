//! Generate the synthetic demo datasets (target train/test + public) used
//! by the README walkthrough:
//!
//! ```bash
//! cargo run -p invrisk-cli --example gen_synth_data -- <out_dir> [classes] [per_class] [side]
//! ```

use invrisk_core::synth::{write_synthetic_dataset, write_synthetic_public_dataset};
use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args
        .next()
        .ok_or_else(|| anyhow::anyhow!("usage: gen_synth_data <out_dir> [classes] [per_class] [side]"))?
        .into();
    let classes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let per_class: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(32);
    let side: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(32);

    let names: Vec<String> = (0..classes).map(|c| format!("class{c}")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    for (split, seed) in [("target_train", 11u64), ("target_test", 22)] {
        let root = out.join(split);
        write_synthetic_dataset(&root, &name_refs, per_class, side, seed)?;
        println!("wrote {} ({classes} classes x {per_class} images, {side}x{side})", root.display());
    }
    // the public split is a broad hue continuum: the prior trained on it
    // covers every class's color region
    let root = out.join("public");
    write_synthetic_public_dataset(&root, &name_refs, per_class, side, 33)?;
    println!("wrote {} (broad continuum, {classes} dirs x {per_class} images)", root.display());
    Ok(())
}
