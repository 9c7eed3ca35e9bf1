fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("APP_LOG", "info")).init();
    std::process::exit(interact_cli::run(std::env::args_os()));
}
