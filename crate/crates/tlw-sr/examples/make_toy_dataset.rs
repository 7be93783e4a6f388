//! Generate the procedural toy corpus (gradients, checkerboards, disks)
//! as PNG files plus a dataset manifest.
//!
//!     cargo run --example make_toy_dataset -- [dir] [count] [size] [seed]

use tlw_sr::data::synthetic::write_toy_dataset;

fn main() -> tlw_sr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().map(String::as_str).unwrap_or("toy_dataset");
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let manifest = write_toy_dataset(dir.as_ref(), count, size, seed, count / 10)?;
    println!(
        "wrote {count} images of {size}x{size} (seed {seed}); manifest at {}",
        manifest.display()
    );
    Ok(())
}
