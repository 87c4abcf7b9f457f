fn main() {
    std::process::exit(backlash::cli::run_main());
}
