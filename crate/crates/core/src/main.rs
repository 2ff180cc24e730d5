use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some(text) = diffload::cli::help_text(&args) {
        print!("{text}");
        return ExitCode::SUCCESS;
    }
    match diffload::cli::run(&args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(diffload::cli::exit_code(&e) as u8)
        }
    }
}
