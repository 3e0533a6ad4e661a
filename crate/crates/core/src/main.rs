fn main() {
    let stdout = std::io::stdout();
    let code = plmm_dml::cli::run(std::env::args_os(), &mut stdout.lock());
    std::process::exit(code);
}
