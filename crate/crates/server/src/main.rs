use dialogctl::service::ServiceConfig;

#[tokio::main]
async fn main() {
    let mut config = match std::env::args().nth(1) {
        Some(path) => ServiceConfig::load(&path).unwrap_or_else(|e| {
            eprintln!("{path}: {e}");
            std::process::exit(2)
        }),
        None => ServiceConfig::default(),
    };
    if let Err(e) = config.apply_env(std::env::vars()) {
        eprintln!("{e}");
        std::process::exit(2);
    }
    if let Err(e) = dialogctl_server::serve(config).await {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
