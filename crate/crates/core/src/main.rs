fn main() {
    std::process::exit(fuelage::cli::run(std::env::args_os()));
}
