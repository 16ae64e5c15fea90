fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(trialign::cli::run(&argv));
}
