fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = aircast::cli::run(&args) {
        // Single machine-parsable line, nonzero exit.
        let msg = e.to_string().replace('\n', " ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
