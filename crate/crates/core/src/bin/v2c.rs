fn main() {
    let code = v2c::cli::run(std::env::args_os(), &mut std::io::stdin().lock(), &mut std::io::stdout().lock(), &mut std::io::stderr());
    std::process::exit(code);
}
