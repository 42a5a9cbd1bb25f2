fn main() {
    let code = tabkg_gateway::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
