//! Flat `key = value` config files, spliced in front of the command-line
//! flags so that anything given explicitly wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crate::CliError;

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected `key = value`",
                origin.display(),
                i + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("{}:{}: bad key `{}`", origin.display(), i + 1, k.trim())));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// `[bin, sub, rest..]` becomes `[bin, sub, <config flags>.., rest..]`.
pub fn expand_args(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    if argv.len() < 3 {
        return Ok(argv);
    }
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = argv[..2].to_vec();
    for (k, v) in parse_config(&text, path)? {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes_keys() {
        let c = parse_config("# c\nepochs = 3\n\nlr_scale=0.5 # tail\n", Path::new("x")).unwrap();
        assert_eq!(c, vec![("epochs".into(), "3".into()), ("lr-scale".into(), "0.5".into())]);
        assert!(parse_config("oops\n", Path::new("x")).is_err());
        assert!(parse_config("config = y\n", Path::new("x")).is_err());
    }

    #[test]
    fn config_flags_come_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "epochs = 3\nverbose = true\nquiet = false\n").unwrap();
        let argv: Vec<OsString> = ["gdr", "train-gdr", "--config", p.to_str().unwrap(), "--epochs", "5"]
            .iter()
            .map(OsString::from)
            .collect();
        let out: Vec<String> = expand_args(argv).unwrap().into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(&out[..5], ["gdr", "train-gdr", "--epochs", "3", "--verbose"]);
        assert_eq!(out.last().unwrap(), "5");
    }
}
