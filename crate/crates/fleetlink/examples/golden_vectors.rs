//! Writes the golden wire vectors, or checks an existing file against the
//! current encoder.
//!
//!     cargo run --example golden_vectors                 # rewrite docs/wire-vectors.hex
//!     cargo run --example golden_vectors -- --check

use std::path::PathBuf;
use std::process::ExitCode;

use fleetlink::golden::render_vector_file;

fn main() -> ExitCode {
    let path = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/docs/wire-vectors.hex"));
    let rendered = render_vector_file();
    if std::env::args().any(|a| a == "--check") {
        let current = std::fs::read_to_string(&path).unwrap_or_default();
        if current == rendered {
            println!("{} is up to date", path.display());
            return ExitCode::SUCCESS;
        }
        eprintln!("{} is stale; rerun without --check", path.display());
        return ExitCode::FAILURE;
    }
    if let Err(e) = std::fs::create_dir_all(path.parent().expect("has parent")).and_then(|_| std::fs::write(&path, &rendered)) {
        eprintln!("{}: {e}", path.display());
        return ExitCode::FAILURE;
    }
    println!("wrote {} ({} bytes)", path.display(), rendered.len());
    ExitCode::SUCCESS
}
