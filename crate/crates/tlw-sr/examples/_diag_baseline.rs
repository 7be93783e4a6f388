use tlw_sr::data::synthetic::toy_pairs;
use tlw_sr::eval::psnr_y;

fn main() {
    let (_, val) = toy_pairs(200, 32, 2, 0, 20).unwrap();
    let fams = ["grad", "chck", "disk"];
    for (i, p) in val.iter().enumerate() {
        let ps = psnr_y(&p.hr, &p.lr_up, 2).unwrap();
        println!("val {i:>2} ({}) baseline {ps:.2} dB", fams[(180 + i) % 3]);
    }
}
