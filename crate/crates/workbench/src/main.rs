fn main() {
    std::process::exit(crr_workbench::cli::run(std::env::args_os()));
}
