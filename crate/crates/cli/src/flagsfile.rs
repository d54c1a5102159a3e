//! `--flagsfile <path>`: one `--flag=value` (or bare `--flag`) per line,
//! `#` starts a comment. File flags are spliced in right after the
//! subcommand so anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

pub const FLAG: &str = "--flagsfile";

pub fn parse(text: &str, origin: &Path) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if !line.starts_with("--") || line == "--" {
            return Err(format!("{}:{}: expected --flag=value, got {line:?}", origin.display(), i + 1));
        }
        if line.starts_with(FLAG) {
            return Err(format!("{}:{}: flagsfiles cannot nest", origin.display(), i + 1));
        }
        out.push(OsString::from(line));
    }
    Ok(out)
}

/// Replace every `--flagsfile` occurrence in `args` by the flags it names.
/// Returns `Ok(args)` untouched when there is none.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == FLAG {
            let path = iter.next().ok_or_else(|| format!("{FLAG} needs a path"))?;
            files.push(path);
        } else if let Some(path) = s.strip_prefix("--flagsfile=") {
            files.push(OsString::from(path));
        } else {
            rest.push(arg);
        }
    }
    if files.is_empty() {
        return Ok(rest);
    }
    let mut from_files = Vec::new();
    for f in &files {
        let path = Path::new(f);
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        from_files.extend(parse(&text, path)?);
    }
    // after the binary name and the subcommand
    let at =
        rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 2).unwrap_or(rest.len());
    rest.splice(at..at, from_files);
    Ok(rest)
}
