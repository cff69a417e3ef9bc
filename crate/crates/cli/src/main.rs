fn main() {
    std::process::exit(ecpe_cli::run_command(std::env::args_os()));
}
