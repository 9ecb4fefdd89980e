use glplab::harness::cli_main;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(cli_main(&args));
}
