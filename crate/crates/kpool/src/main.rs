fn main() {
    if let Err(err) = kpool::cli::run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
