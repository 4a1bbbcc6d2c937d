//! Side-by-side annotated program listing.

use std::collections::HashMap;

use thiserror::Error;

use super::SystemSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ListingError {
    #[error("annotation for unknown label `{0}`")]
    UnknownLabel(String),
    #[error("label `{0}` is annotated twice")]
    DuplicateLabel(String),
}

/// Pre- and postcondition text for one line. The text goes between braces.
#[derive(Debug, Clone, PartialEq)]
pub struct ListingAnnotation {
    pub label: String,
    /// `None` for a line reached only after waiting on another process;
    /// rendered as `⋮`.
    pub pre: Option<String>,
    pub post: String,
    /// Shown as `label[unlocked_by]`.
    pub unlocked_by: Option<String>,
}

const GAP: usize = 4;

fn width(s: &str) -> usize {
    s.chars().count()
}

/// Renders each process as a column of lines interleaved with their
/// annotations. A precondition is printed only where it differs from the
/// postcondition just above it; the difference is marked with `skip`.
/// Lines without an annotation are shown as unreachable.
pub fn emit_listing(
    spec: &SystemSpec,
    annotations: &[ListingAnnotation],
) -> Result<String, ListingError> {
    let mut by_label: HashMap<&str, &ListingAnnotation> = HashMap::new();
    for a in annotations {
        if spec.find_label(&a.label).is_none() {
            return Err(ListingError::UnknownLabel(a.label.clone()));
        }
        if by_label.insert(&a.label, a).is_some() {
            return Err(ListingError::DuplicateLabel(a.label.clone()));
        }
    }
    let bottom = ListingAnnotation {
        label: String::new(),
        pre: Some("⊥".into()),
        post: "⊥".into(),
        unlocked_by: None,
    };
    let mut columns: Vec<Vec<String>> = Vec::new();
    for p in &spec.processes {
        let mut rows = vec![p.name.clone(), "-".repeat(width(&p.name))];
        let mut prev_post: Option<&str> = None;
        for (i, l) in p.lines.iter().enumerate() {
            let a = by_label.get(l.label.as_str()).copied().unwrap_or(&bottom);
            match &a.pre {
                None => rows.push("  ⋮".into()),
                Some(pre) if i == 0 => rows.push(format!("  {{{pre}}}")),
                Some(pre) if prev_post != Some(pre.as_str()) => {
                    rows.push("  skip".into());
                    rows.push(format!("  {{{pre}}}"));
                }
                Some(_) => {}
            }
            let head = match &a.unlocked_by {
                Some(u) if a.pre.is_none() => format!("{}[{u}]", l.label),
                _ => l.label.clone(),
            };
            rows.push(format!("{head}: {}", l.code()));
            rows.push(format!("  {{{}}}", a.post));
            prev_post = Some(&a.post);
        }
        columns.push(rows);
    }
    let height = columns.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = columns
        .iter()
        .map(|c| c.iter().map(|r| width(r)).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in 0..height {
        let mut line = String::new();
        for (ci, col) in columns.iter().enumerate() {
            let cell = col.get(r).map(String::as_str).unwrap_or("");
            line.push_str(cell);
            if ci + 1 < columns.len() {
                line.push_str(&" ".repeat(widths[ci] - width(cell) + GAP));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_spec;

    const TWO: &str = "[variables]\na = 1\n[channels]\na = p -> q\n\
                       [process p]\n1p: a = 2\n2p: send(a)\n[process q]\n1q: receive(a)\n2q: a = 3\n";

    fn ann(
        label: &str,
        pre: Option<&str>,
        post: &str,
        unlocked: Option<&str>,
    ) -> ListingAnnotation {
        ListingAnnotation {
            label: label.into(),
            pre: pre.map(Into::into),
            post: post.into(),
            unlocked_by: unlocked.map(Into::into),
        }
    }

    #[test]
    fn columns_skips_and_waits() {
        let spec = parse_spec(TWO).unwrap();
        let a = [
            ann("1p", Some("true"), "A", None),
            ann("2p", Some("B"), "B", None),
            ann("1q", None, "C", Some("2p")),
        ];
        let text = emit_listing(&spec, &a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("p ") && lines[0].ends_with('q'));
        let left: Vec<&str> = lines
            .iter()
            .map(|l| l.get(..15).unwrap_or(l).trim_end())
            .collect();
        assert_eq!(
            &left[2..],
            &[
                "  {true}",
                "1p: a = 2",
                "  {A}",
                "  skip",
                "  {B}",
                "2p: send(a)",
                "  {B}"
            ]
        );
        assert!(lines[2].ends_with("⋮"));
        assert!(lines[3].ends_with("1q[2p]: receive(a)"));
        assert!(lines[5].ends_with("skip"));
        assert!(lines[6].ends_with("{⊥}"));
    }

    #[test]
    fn unknown_and_duplicate_labels() {
        let spec = parse_spec(TWO).unwrap();
        assert_eq!(
            emit_listing(&spec, &[ann("9z", None, "x", None)]),
            Err(ListingError::UnknownLabel("9z".into()))
        );
        let a = ann("1p", None, "x", None);
        assert_eq!(
            emit_listing(&spec, &[a.clone(), a]),
            Err(ListingError::DuplicateLabel("1p".into()))
        );
    }
}
