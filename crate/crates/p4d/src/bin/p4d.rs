fn main() { std::process::exit(p4d::cli::run()); }
