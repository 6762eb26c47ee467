fn main() {
    std::process::exit(calibrated_ob::cli::run());
}
