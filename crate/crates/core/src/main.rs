fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LIFETAINT_LOG")).init();
    std::process::exit(lifetaint::cli::main_with_args(std::env::args_os()));
}
