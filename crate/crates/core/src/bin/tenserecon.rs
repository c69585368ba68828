fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TENSERECON_LOG", "warn")).init();
    std::process::exit(tenserecon::cli::main());
}
