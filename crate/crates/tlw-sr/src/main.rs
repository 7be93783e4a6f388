fn main() {
    std::process::exit(tlw_sr::cli::run(std::env::args().skip(1)));
}
