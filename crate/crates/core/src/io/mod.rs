//! File formats: data CSV, draws CSV, the binary posterior bundle and the
//! factor cache.

mod bundle;
mod cache;
mod data;
mod draws_csv;

pub use bundle::{read_bundle, write_bundle, PosteriorBundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use cache::{FactorCache, FactorKey};
pub use data::{read_data, CoordinateMode, DataSet};
pub use draws_csv::{read_draws_csv, write_draws_csv, FitMeta};

use std::io::Write;

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First line of every output file: `# conjnngp <command> config=<hash> version=<v>`.
pub fn write_provenance<W: Write>(out: &mut W, command: &str, config_hash: &str) -> Result<()> {
    writeln!(out, "# conjnngp {command} config={config_hash} version={VERSION}")?;
    Ok(())
}

/// Parses `key=value` tokens of a comment line into pairs.
pub(crate) fn parse_key_values(line: &str) -> Vec<(String, String)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|tok| tok.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// Leading `#` lines of a text file.
pub(crate) fn comment_lines(path: &std::path::Path) -> Result<Vec<String>> {
    use std::io::BufRead;
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.starts_with('#') {
            break;
        }
        out.push(line);
    }
    Ok(out)
}
