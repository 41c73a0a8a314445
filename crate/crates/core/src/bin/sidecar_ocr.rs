//! Minimal OCR engine conforming to the subprocess contract: invoked with an
//! image path, prints recognized text on stdout, exits 0.
//!
//! "Recognition" reads the `<image>.txt` sidecar written next to synthetic
//! fixtures; a missing sidecar yields empty text (nothing recognized). When
//! `SIDECAR_OCR_LOG` names a file, each invocation appends the image path to
//! it, letting tests count engine calls.

use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let Some(image) = std::env::args().nth(1) else {
        eprintln!("usage: hatefuse-sidecar-ocr <image-path>");
        return ExitCode::FAILURE;
    };

    if let Ok(log) = std::env::var("SIDECAR_OCR_LOG") {
        if !log.is_empty() {
            if let Ok(mut f) = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log)
            {
                let _ = writeln!(f, "{image}");
            }
        }
    }

    if !std::path::Path::new(&image).is_file() {
        eprintln!("no such image: {image}");
        return ExitCode::FAILURE;
    }

    let sidecar = format!("{image}.txt");
    let text = std::fs::read_to_string(sidecar).unwrap_or_default();
    print!("{text}");
    ExitCode::SUCCESS
}
