//! Regenerates the bundled datasets and toy corpus.
//!
//! `cargo run -p noisykag --example make_fixtures [-- <dir>]`

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    noisykag::synth::write_fixtures(&dir)
}
