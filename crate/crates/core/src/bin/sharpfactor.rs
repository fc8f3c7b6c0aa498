fn main() {
    if let Some(n) = std::env::var("SHARPFACTOR_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::process::exit(sharpfactor::cli::main_with_args(std::env::args_os()));
}
