fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("UPD_LOG", "warn")).init();
    std::process::exit(upd_core::cli::run(std::env::args_os()));
}
