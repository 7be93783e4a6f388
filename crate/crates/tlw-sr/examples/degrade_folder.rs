//! Bicubic degradation of a folder: writes aligned HR crops and LR images
//! for a chosen scale, mirroring the `tlw-sr degrade` subcommand.

use tlw_sr::data::synthetic::write_toy_dataset;

fn main() -> tlw_sr::Result<()> {
    let root = std::env::temp_dir().join("tlw_sr_degrade");
    let src = root.join("src");
    write_toy_dataset(&src, 6, 48, 11, 0)?;

    let out = root.join("x3");
    let code = tlw_sr::cli::run([
        "degrade",
        "--input",
        src.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--scale",
        "3",
    ]);
    assert_eq!(code, 0, "degrade failed");

    let mut names: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().into_string().unwrap()))
        .collect();
    names.sort();
    for name in names {
        println!("{name}");
    }
    Ok(())
}
