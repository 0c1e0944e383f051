fn main() {
    std::process::exit(srv_sim::cli::run_cli());
}
