//! Text cache for a processed [`Dataset`].
//!
//! ```text
//! IACN-DATASET 1
//! tag <tag>
//! users <n>            then n lines: user id
//! categories <n>       then n lines: category name
//! items <n>            then n lines: item id <TAB> category index
//! train <n>            then n lines: user <TAB> profile <TAB> candidate <TAB> label <TAB> b1,b2,…
//! valid <n>
//! test <n>
//! end
//! ```
//!
//! Strings escape backslash, tab, CR and LF as `\\`, `\t`, `\r`, `\n`.

use super::{Dataset, Sample, Vocabulary};
use crate::error::{Error, Result};

pub const CACHE_HEADER: &str = "IACN-DATASET 1";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(Error::format(
                    line,
                    format!("bad escape `\\{}`", other.map_or(String::new(), String::from)),
                ))
            }
        }
    }
    Ok(out)
}

pub(super) fn encode(d: &Dataset) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "{CACHE_HEADER}");
    let _ = writeln!(out, "tag {}", escape(&d.tag));
    let _ = writeln!(out, "users {}", d.vocab.users.len());
    for u in &d.vocab.users {
        let _ = writeln!(out, "{}", escape(u));
    }
    let _ = writeln!(out, "categories {}", d.vocab.categories.len());
    for c in &d.vocab.categories {
        let _ = writeln!(out, "{}", escape(c));
    }
    let _ = writeln!(out, "items {}", d.vocab.items.len());
    for (i, c) in d.vocab.items.iter().zip(&d.vocab.item_category) {
        let _ = writeln!(out, "{}\t{c}", escape(i));
    }
    for (name, samples) in [("train", &d.train), ("valid", &d.valid), ("test", &d.test)] {
        let _ = writeln!(out, "{name} {}", samples.len());
        for s in samples {
            let beh: Vec<String> = s.behaviours.iter().map(usize::to_string).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.user,
                s.profile,
                s.candidate,
                s.label,
                beh.join(",")
            );
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(Error::format(self.line + 1, "unexpected end of dataset cache")),
        }
    }

    fn section(&mut self, name: &str) -> Result<usize> {
        let l = self.next()?;
        let rest = l
            .strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::format(self.line, format!("expected `{name} <count>`")))?;
        rest.parse()
            .map_err(|_| Error::format(self.line, format!("bad {name} count `{rest}`")))
    }

    fn number(&self, field: &str, what: &str) -> Result<usize> {
        field
            .parse()
            .map_err(|_| Error::format(self.line, format!("bad {what} `{field}`")))
    }
}

pub(super) fn decode(text: &str) -> Result<Dataset> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.next()?;
    if header != CACHE_HEADER {
        return Err(Error::format(1, format!("expected header `{CACHE_HEADER}`")));
    }
    let tag_line = lines.next()?;
    let tag = tag_line
        .strip_prefix("tag ")
        .ok_or_else(|| Error::format(lines.line, "expected `tag <name>`"))?;
    let tag = unescape(tag, lines.line)?;

    let mut vocab = Vocabulary::default();
    let n = lines.section("users")?;
    for _ in 0..n {
        let l = lines.next()?;
        vocab.users.push(unescape(l, lines.line)?);
    }
    let n = lines.section("categories")?;
    for _ in 0..n {
        let l = lines.next()?;
        vocab.categories.push(unescape(l, lines.line)?);
    }
    let n = lines.section("items")?;
    for _ in 0..n {
        let l = lines.next()?;
        let (item, cat) = l
            .split_once('\t')
            .ok_or_else(|| Error::format(lines.line, "expected `item<TAB>category`"))?;
        let cat = lines.number(cat, "category index")?;
        if cat >= vocab.categories.len() {
            return Err(Error::format(
                lines.line,
                format!("category index {cat} out of range"),
            ));
        }
        vocab.items.push(unescape(item, lines.line)?);
        vocab.item_category.push(cat);
    }

    let mut splits: Vec<Vec<Sample>> = Vec::with_capacity(3);
    for name in ["train", "valid", "test"] {
        let n = lines.section(name)?;
        // The count is untrusted; grow as lines actually arrive.
        let mut samples = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let l = lines.next()?;
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::format(
                    lines.line,
                    format!("expected 5 fields, got {}", fields.len()),
                ));
            }
            let user = lines.number(fields[0], "user")?;
            let profile = lines.number(fields[1], "profile")?;
            let candidate = lines.number(fields[2], "candidate")?;
            let label = match fields[3] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::format(lines.line, format!("bad label `{other}`"))),
            };
            let behaviours = fields[4]
                .split(',')
                .map(|b| lines.number(b, "behaviour"))
                .collect::<Result<Vec<_>>>()?;
            let s = Sample {
                user,
                profile,
                behaviours,
                candidate,
                label,
            };
            check_sample(&s, &vocab).map_err(|m| Error::format(lines.line, m))?;
            samples.push(s);
        }
        splits.push(samples);
    }
    if lines.next()? != "end" {
        return Err(Error::format(lines.line, "expected `end`"));
    }
    if let Some((i, _)) = lines.inner.find(|(_, l)| !l.is_empty()) {
        return Err(Error::format(i + 1, "trailing content after `end`"));
    }
    let test = splits.pop().expect("three splits");
    let valid = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        tag,
        vocab,
        train,
        valid,
        test,
    })
}

fn check_sample(s: &Sample, v: &Vocabulary) -> std::result::Result<(), String> {
    if s.user >= v.num_users() || s.profile > v.num_users() {
        return Err("user or profile index out of range".into());
    }
    if s.candidate > v.item_oov() || s.behaviours.iter().any(|&b| b > v.item_oov()) {
        return Err("item index out of range".into());
    }
    if s.behaviours.contains(&s.candidate) {
        return Err("candidate appears in its own behaviour sequence".into());
    }
    Ok(())
}
