fn main() {
    std::process::exit(vdistill_cli::run_cli(std::env::args_os()));
}
