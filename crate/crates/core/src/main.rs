fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIFT_LOG", "info")).format_timestamp(None).init();
    let code = vift::cli::main_with_args(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
