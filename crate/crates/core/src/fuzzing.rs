//! Entry points shared by the fuzz targets and the corpus regression test.
//! Each accepts arbitrary bytes and must never panic.

use crate::cli::parse_args;
use crate::config::{parse_x0_list, Config, Overrides};
use crate::controller::GainSet;

/// Parse a TOML config and, if it parses, resolve it against the presets.
pub fn config_toml(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = Config::from_toml_str(text) {
        if let Ok(r) = cfg.resolve(&Overrides::default()) {
            assert!(r.run.n_runs > 0 && r.bound > 0.0);
        }
    }
}

/// Decode a gain set; a decoded set must survive a JSON round trip.
pub fn gainset_json(data: &[u8]) {
    if let Ok(g) = serde_json::from_slice::<GainSet>(data) {
        let text = serde_json::to_string(&g).expect("gain sets serialize");
        if let Ok(back) = serde_json::from_str::<GainSet>(&text) {
            assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }
    }
}

/// Split on NUL or whitespace and parse as command-line arguments.
pub fn cli_args(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let args =
        std::iter::once("ptstab").chain(text.split(|c: char| c == '\0' || c.is_whitespace()).filter(|s| !s.is_empty()));
    let _ = parse_args(args);
}

/// Parse an initial-state list; accepted lists are finite and non-empty.
pub fn x0_list(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(states) = parse_x0_list(text) {
        assert!(states.iter().all(|s| !s.is_empty() && s.iter().all(|v| v.is_finite())));
    }
}
