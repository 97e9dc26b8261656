fn main() {
    std::process::exit(gossipq_cli::run_cli(std::env::args_os()));
}
