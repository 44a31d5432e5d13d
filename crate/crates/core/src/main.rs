fn main() { std::process::exit(rdsharp::cli::run(std::env::args_os())); }
