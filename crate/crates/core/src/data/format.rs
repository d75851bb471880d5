//! On-disk dataset layout.
//!
//! A dataset is a directory holding `dataset.json` and one text file per
//! session. A session file is UTF-8, LF-terminated lines:
//!
//! ```text
//! snn-bci-dataset 1
//! session <name>
//! channels <C>
//! time <T>
//! classes <K>
//! trials <N>
//! <label> <ch>:<t> <ch>:<t> ...      (N lines)
//! ```
//!
//! Fields are separated by one space. Events are strictly ascending in
//! `(channel, time)`, which also rules out duplicates. Session names use
//! `[A-Za-z0-9_.-]` and do not start with a dot.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, Session, SessionSet, SynthConfig, Trial};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

pub const SESSION_MAGIC: &str = "snn-bci-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "dataset.json";
pub const SESSION_EXT: &str = "spk";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionHeader {
    pub name: String,
    pub c: usize,
    pub t: usize,
    pub n_classes: usize,
    pub n_trials: usize,
}

pub fn valid_session_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
}

pub fn serialize_session(session: &Session, meta: &DatasetMeta) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{SESSION_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(s, "session {}", session.name);
    let _ = writeln!(s, "channels {}", meta.c);
    let _ = writeln!(s, "time {}", meta.t);
    let _ = writeln!(s, "classes {}", meta.n_classes);
    let _ = writeln!(s, "trials {}", session.trials.len());
    for t in &session.trials {
        let _ = write!(s, "{}", t.label);
        for (c, tm) in t.events() {
            let _ = write!(s, " {c}:{tm}");
        }
        s.push('\n');
    }
    s
}

fn header_value<'a>(line: Option<&'a str>, key: &str, origin: &str, lineno: usize) -> Result<&'a str> {
    let loc = || format!("{origin}:{lineno}");
    let line = line.ok_or_else(|| Error::data(loc(), format!("missing `{key}` header line")))?;
    match line.split_once(' ') {
        Some((k, v)) if k == key && !v.is_empty() => Ok(v),
        _ => Err(Error::data(loc(), format!("expected `{key} <value>`, found `{}`", truncate(line)))),
    }
}

fn header_number(line: Option<&str>, key: &str, origin: &str, lineno: usize) -> Result<usize> {
    let v = header_value(line, key, origin, lineno)?;
    let n: u32 = v
        .parse()
        .map_err(|_| Error::data(format!("{origin}:{lineno}"), format!("`{key}` value `{}` is not a u32", truncate(v))))?;
    Ok(n as usize)
}

fn truncate(s: &str) -> String {
    s.chars().take(40).collect()
}

/// Parses one session file; `origin` prefixes diagnostics.
pub fn parse_session(text: &str, origin: &str) -> Result<(SessionHeader, Session)> {
    let body = text.strip_suffix('\n').ok_or_else(|| Error::data(origin, "file must end with a newline"))?;
    let mut lines = body.split('\n');
    let magic = lines.next().unwrap_or_default();
    let version = magic
        .strip_prefix(SESSION_MAGIC)
        .and_then(|v| v.strip_prefix(' '))
        .ok_or_else(|| Error::data(format!("{origin}:1"), "not a spike session file"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::data(format!("{origin}:1"), format!("unsupported format version `{}`", truncate(version))));
    }
    let name = header_value(lines.next(), "session", origin, 2)?.to_string();
    if !valid_session_name(&name) {
        return Err(Error::data(format!("{origin}:2"), format!("invalid session name `{}`", truncate(&name))));
    }
    let c = header_number(lines.next(), "channels", origin, 3)?;
    let t = header_number(lines.next(), "time", origin, 4)?;
    let n_classes = header_number(lines.next(), "classes", origin, 5)?;
    let n_trials = header_number(lines.next(), "trials", origin, 6)?;
    for (v, key, line) in [(c, "channels", 3), (t, "time", 4), (n_classes, "classes", 5)] {
        if v == 0 {
            return Err(Error::data(format!("{origin}:{line}"), format!("`{key}` must be positive")));
        }
    }
    let mut trials = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 7;
        let loc = |field: usize| format!("{origin}:{lineno}: trial {i} field {field}");
        if i >= n_trials {
            return Err(Error::data(format!("{origin}:{lineno}"), format!("more trial lines than the declared {n_trials}")));
        }
        let mut fields = line.split(' ');
        let label_str = fields.next().unwrap_or_default();
        let label: usize = label_str
            .parse::<u32>()
            .map_err(|_| Error::data(loc(0), format!("label `{}` is not an integer", truncate(label_str))))?
            as usize;
        if label >= n_classes {
            return Err(Error::data(loc(0), format!("label {label} >= {n_classes} classes")));
        }
        let mut events: Vec<(u32, u32)> = Vec::new();
        for (j, f) in fields.enumerate() {
            let field = j + 1;
            let (cs, ts) = f
                .split_once(':')
                .ok_or_else(|| Error::data(loc(field), format!("event `{}` is not <channel>:<time>", truncate(f))))?;
            let ch: u32 =
                cs.parse().map_err(|_| Error::data(loc(field), format!("channel `{}` is not an integer", truncate(cs))))?;
            let tm: u32 =
                ts.parse().map_err(|_| Error::data(loc(field), format!("time `{}` is not an integer", truncate(ts))))?;
            if ch as usize >= c {
                return Err(Error::data(loc(field), format!("channel {ch} >= {c}")));
            }
            if tm as usize >= t {
                return Err(Error::data(loc(field), format!("time {tm} >= {t}")));
            }
            if events.last().is_some_and(|&prev| prev >= (ch, tm)) {
                return Err(Error::data(loc(field), format!("event {ch}:{tm} not in ascending (channel, time) order")));
            }
            events.push((ch, tm));
        }
        trials.push(Trial::from_sorted(c, t, label, name.clone(), events));
    }
    if trials.len() != n_trials {
        return Err(Error::data(origin, format!("declared {n_trials} trials, found {}", trials.len())));
    }
    Ok((SessionHeader { name: name.clone(), c, t, n_classes, n_trials }, Session { name, trials }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSession {
    name: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    n_classes: usize,
    channels: usize,
    time: usize,
    sessions: Vec<ManifestSession>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

pub fn save_dataset(set: &SessionSet, dir: &Path) -> Result<()> {
    set.validate()?;
    for s in &set.sessions {
        if !valid_session_name(&s.name) {
            return Err(Error::InvalidArgument(format!("session name `{}` is not file-safe", s.name)));
        }
    }
    let manifest = Manifest {
        format: SESSION_MAGIC.into(),
        version: FORMAT_VERSION,
        n_classes: set.meta.n_classes,
        channels: set.meta.c,
        time: set.meta.t,
        sessions: set
            .sessions
            .iter()
            .map(|s| ManifestSession { name: s.name.clone(), file: format!("{}.{SESSION_EXT}", s.name) })
            .collect(),
        generator: set.meta.generator.clone(),
        warnings: set.meta.warnings.clone(),
    };
    for (s, m) in set.sessions.iter().zip(&manifest.sessions) {
        write_atomic(&dir.join(&m.file), serialize_session(s, &set.meta).as_bytes())?;
    }
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(&dir.join(MANIFEST), json.as_bytes())
}

/// Loads a dataset directory, or a single session file.
pub fn load_dataset(path: &Path) -> Result<SessionSet> {
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        let (h, session) = parse_session(&text, &path.display().to_string())?;
        let set = SessionSet {
            meta: DatasetMeta { n_classes: h.n_classes, c: h.c, t: h.t, generator: None, warnings: Vec::new() },
            sessions: vec![session],
        };
        set.validate()?;
        return Ok(set);
    }
    let manifest_path = path.join(MANIFEST);
    let origin = manifest_path.display().to_string();
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::data(&origin, format!("cannot read dataset manifest: {e}")))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::data(&origin, e.to_string()))?;
    if m.format != SESSION_MAGIC || m.version != FORMAT_VERSION {
        return Err(Error::data(&origin, format!("unsupported format `{}` version {}", m.format, m.version)));
    }
    if m.sessions.is_empty() {
        return Err(Error::data(&origin, "session list is empty"));
    }
    let meta = DatasetMeta { n_classes: m.n_classes, c: m.channels, t: m.time, generator: m.generator, warnings: m.warnings };
    let mut sessions = Vec::new();
    for ms in &m.sessions {
        if ms.file.contains('/') || ms.file.contains('\\') || ms.file.starts_with('.') {
            return Err(Error::data(&origin, format!("session file `{}` must be a plain file name", ms.file)));
        }
        let file = path.join(&ms.file);
        let file_origin = file.display().to_string();
        let text = std::fs::read_to_string(&file).map_err(|e| Error::data(&file_origin, e.to_string()))?;
        let (h, session) = parse_session(&text, &file_origin)?;
        if h.name != ms.name || h.c != meta.c || h.t != meta.t || h.n_classes != meta.n_classes {
            return Err(Error::data(&file_origin, "header disagrees with dataset manifest"));
        }
        sessions.push(session);
    }
    let set = SessionSet { meta, sessions };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "snn-bci-dataset 1\nsession s0\nchannels 4\ntime 10\nclasses 3\ntrials 2\n0 0:1 3:9\n2\n";

    #[test]
    fn parse_sample() {
        let (h, s) = parse_session(SAMPLE, "x").unwrap();
        assert_eq!(h, SessionHeader { name: "s0".into(), c: 4, t: 10, n_classes: 3, n_trials: 2 });
        assert_eq!(s.trials[0].events(), &[(0, 1), (3, 9)]);
        assert_eq!(s.trials[1].label, 2);
        assert_eq!(s.trials[1].spike_count(), 0);
        let meta = DatasetMeta { n_classes: 3, c: 4, t: 10, generator: None, warnings: vec![] };
        assert_eq!(serialize_session(&s, &meta), SAMPLE);
    }

    fn err(text: &str) -> String {
        parse_session(text, "f").unwrap_err().to_string()
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = err(&SAMPLE.replace("3:9", "4:9"));
        assert!(e.contains("f:7: trial 0 field 2") && e.contains("channel 4 >= 4"), "{e}");
        let e = err(&SAMPLE.replace("0 0:1", "3 0:1"));
        assert!(e.contains("field 0") && e.contains("label 3"), "{e}");
        assert!(err(&SAMPLE.replace("0:1 3:9", "3:9 0:1")).contains("ascending"));
        assert!(err(&SAMPLE.replace("0:1 3:9", "0:1 0:1")).contains("ascending"));
        assert!(err(&SAMPLE.replace("trials 2", "trials 3")).contains("declared 3"));
        assert!(err(&SAMPLE.replace("trials 2", "trials 1")).contains("more trial lines"));
        assert!(err(&SAMPLE.replace("time 10", "time 0")).contains("positive"));
        assert!(err(&SAMPLE.replace("session s0", "session ../x")).contains("invalid session"));
        assert!(err(SAMPLE.trim_end()).contains("newline"));
        assert!(err("").contains("newline"));
        assert!(err(&SAMPLE.replace("0:1 ", "0:1  ")).contains("field 2"));
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = r#"{"format":"snn-bci-dataset","version":1,"n_classes":3,"channels":4,"time":10,"sessions":[]}"#;
        std::fs::write(dir.path().join(MANIFEST), m).unwrap();
        let e = load_dataset(dir.path()).unwrap_err();
        assert!(e.to_string().contains("empty"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }
}
