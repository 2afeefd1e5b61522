use std::io::Write;

fn main() {
    let env = |key: &str| std::env::var(key).ok();
    let code = medprompt::cli::run(std::env::args_os(), &env, &mut std::io::stdout(), &mut std::io::stderr());
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
