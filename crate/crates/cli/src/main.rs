fn main() {
    std::process::exit(tpgn_cli::run_command(std::env::args_os()));
}
