fn main() {
    let seed = match facies_gen::seed_from_env() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(facies_gen::EXIT_USAGE);
        }
    };
    std::process::exit(facies_gen::run(std::env::args_os(), seed));
}
