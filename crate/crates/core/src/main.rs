use std::process::ExitCode;

fn main() -> ExitCode {
    let result = npix2cpix::cli::dispatch(std::env::args_os());
    if result.exit_code == 0 {
        println!("{}", result.summary.trim_end());
        for path in &result.artifacts_written {
            println!("  {}", path.display());
        }
    } else {
        eprintln!("{}", result.summary.trim_end());
    }
    ExitCode::from(result.exit_code.clamp(0, 255) as u8)
}
