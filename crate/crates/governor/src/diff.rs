//! Line-oriented unified diffs for human review.
//!
//! Interactive approval shows the reviewer what a proposal would change.
//! Since proposals carry whole-file contents, the diff is computed here, on
//! demand, from the current file and the proposed replacement. The output is
//! standard unified format; it is display-only and never parsed by the
//! engine, but the rendering is kept patch-accurate so a reviewer can trust
//! the hunks they approve.

/// Upper bound on the LCS table size. Beyond this the quadratic alignment is
/// not worth the memory, and a reviewer would not read such a diff anyway.
const MAX_TABLE_CELLS: usize = 4_000_000;

/// Lines of unchanged context shown around each change.
const CONTEXT_LINES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Equal,
    Delete,
    Insert,
}

/// Render a unified diff between two file versions.
///
/// Returns an empty string when the contents are identical, and a one-line
/// placeholder instead of hunks when the inputs are too large to align.
pub fn unified_diff(path: &str, old: &str, new: &str) -> String {
    if old == new {
        return String::new();
    }
    let old_lines = split_lines(old);
    let new_lines = split_lines(new);

    let mut out = String::new();
    out.push_str(&format!("--- a/{path}\n+++ b/{path}\n"));

    if old_lines.len().saturating_mul(new_lines.len()) > MAX_TABLE_CELLS {
        out.push_str(&format!(
            "(diff omitted: file too large to align, {} -> {} lines)\n",
            old_lines.len(),
            new_lines.len()
        ));
        return out;
    }

    let ops = align(&old_lines, &new_lines);
    render_hunks(&mut out, &ops, &old_lines, &new_lines);
    out
}

/// Split into lines without a phantom trailing element for a final newline.
fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').collect()
}

/// Classic LCS alignment: one op per line of either input.
fn align(old: &[&str], new: &[&str]) -> Vec<Op> {
    let n = old.len();
    let m = new.len();
    // lcs[i][j] = LCS length of old[i..] and new[j..], flattened row-major.
    let width = m + 1;
    let mut lcs = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i * width + j] = if old[i] == new[j] {
                lcs[(i + 1) * width + j + 1] + 1
            } else {
                lcs[(i + 1) * width + j].max(lcs[i * width + j + 1])
            };
        }
    }

    let mut ops = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if old[i] == new[j] {
            ops.push(Op::Equal);
            i += 1;
            j += 1;
        } else if lcs[(i + 1) * width + j] >= lcs[i * width + j + 1] {
            ops.push(Op::Delete);
            i += 1;
        } else {
            ops.push(Op::Insert);
            j += 1;
        }
    }
    ops.extend(std::iter::repeat(Op::Delete).take(n - i));
    ops.extend(std::iter::repeat(Op::Insert).take(m - j));
    ops
}

fn render_hunks(out: &mut String, ops: &[Op], old: &[&str], new: &[&str]) {
    // Indices of non-Equal ops, used to group changes into hunks.
    let change_positions: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| **op != Op::Equal)
        .map(|(k, _)| k)
        .collect();

    let mut groups: Vec<(usize, usize)> = Vec::new(); // op ranges, inclusive
    for &pos in &change_positions {
        match groups.last_mut() {
            // Merge when the gap of equal lines fits inside shared context.
            Some((_, end)) if pos - *end <= 2 * CONTEXT_LINES => *end = pos,
            _ => groups.push((pos, pos)),
        }
    }

    // Precompute, for each op index, the old/new line numbers it starts at.
    let mut old_at = Vec::with_capacity(ops.len() + 1);
    let mut new_at = Vec::with_capacity(ops.len() + 1);
    let (mut oi, mut ni) = (0usize, 0usize);
    for op in ops {
        old_at.push(oi);
        new_at.push(ni);
        match op {
            Op::Equal => {
                oi += 1;
                ni += 1;
            }
            Op::Delete => oi += 1,
            Op::Insert => ni += 1,
        }
    }
    old_at.push(oi);
    new_at.push(ni);

    for (start, end) in groups {
        let hunk_start = start.saturating_sub(CONTEXT_LINES);
        let hunk_end = (end + CONTEXT_LINES + 1).min(ops.len());

        let old_start = old_at[hunk_start];
        let new_start = new_at[hunk_start];
        let old_count = old_at[hunk_end] - old_start;
        let new_count = new_at[hunk_end] - new_start;
        out.push_str(&format!(
            "@@ -{},{} +{},{} @@\n",
            if old_count == 0 { old_start } else { old_start + 1 },
            old_count,
            if new_count == 0 { new_start } else { new_start + 1 },
            new_count,
        ));

        let (mut oi, mut ni) = (old_start, new_start);
        for op in &ops[hunk_start..hunk_end] {
            match op {
                Op::Equal => {
                    out.push(' ');
                    out.push_str(old[oi]);
                    oi += 1;
                    ni += 1;
                }
                Op::Delete => {
                    out.push('-');
                    out.push_str(old[oi]);
                    oi += 1;
                }
                Op::Insert => {
                    out.push('+');
                    out.push_str(new[ni]);
                    ni += 1;
                }
            }
            out.push('\n');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::Rng;

    #[test]
    fn identical_contents_produce_no_output() {
        assert_eq!(unified_diff("a.txt", "same\n", "same\n"), "");
    }

    #[test]
    fn single_line_change_renders_one_hunk() {
        let old = "a\nb\nc\nd\ne\nf\ng\n";
        let new = "a\nb\nc\nD\ne\nf\ng\n";
        let expected = "--- a/x.txt\n+++ b/x.txt\n\
            @@ -1,7 +1,7 @@\n a\n b\n c\n-d\n+D\n e\n f\n g\n";
        assert_eq!(unified_diff("x.txt", old, new), expected);
    }

    #[test]
    fn distant_changes_become_separate_hunks() {
        let mut old_lines: Vec<String> = (0..30).map(|i| format!("line{i}")).collect();
        let mut new_lines = old_lines.clone();
        new_lines[2] = "changed-early".to_string();
        new_lines[27] = "changed-late".to_string();
        old_lines.push(String::new());
        new_lines.push(String::new());
        let diff = unified_diff("f", &old_lines.join("\n"), &new_lines.join("\n"));
        assert_eq!(diff.matches("@@").count(), 4, "two hunks, two markers each:\n{diff}");
        assert!(diff.contains("-line2\n+changed-early\n"));
        assert!(diff.contains("-line27\n+changed-late\n"));
    }

    #[test]
    fn creation_and_deletion_use_zero_counts() {
        let created = unified_diff("new.txt", "", "only\n");
        assert!(created.contains("@@ -0,0 +1,1 @@"), "{created}");
        let deleted = unified_diff("old.txt", "only\n", "");
        assert!(deleted.contains("@@ -1,1 +0,0 @@"), "{deleted}");
    }

    #[test]
    fn oversized_inputs_fall_back_to_a_placeholder() {
        let old: String = (0..3000).map(|i| format!("{i}\n")).collect();
        let new: String = (0..3000).map(|i| format!("{}\n", i + 1)).collect();
        let diff = unified_diff("big", &old, &new);
        assert!(diff.contains("diff omitted"), "{diff}");
        assert!(!diff.contains("@@"));
    }

    /// Independent patcher: replay the rendered hunks against `old` and
    /// check the result equals `new`. Catches both alignment and line-number
    /// arithmetic mistakes.
    fn apply_unified(old: &str, diff: &str) -> String {
        let old_lines = split_lines(old);
        let mut out: Vec<String> = Vec::new();
        let mut cursor = 0usize; // next unconsumed old line
        let mut lines = diff.lines().peekable();
        while let Some(line) = lines.next() {
            if line.starts_with("--- ") || line.starts_with("+++ ") {
                continue;
            }
            let header = line.strip_prefix("@@ -").expect("hunk header");
            let old_part = header.split(' ').next().unwrap();
            let (start, count) = old_part.split_once(',').unwrap();
            let start: usize = start.parse().unwrap();
            let count: usize = count.parse().unwrap();
            let hunk_old_start = if count == 0 { start } else { start - 1 };
            while cursor < hunk_old_start {
                out.push(old_lines[cursor].to_string());
                cursor += 1;
            }
            let mut consumed = 0usize;
            while consumed < count || lines.peek().is_some_and(|l| l.starts_with('+')) {
                let body = lines.next().expect("hunk body");
                let (tag, text) = body.split_at(1);
                match tag {
                    " " => {
                        assert_eq!(text, old_lines[cursor], "context mismatch");
                        out.push(text.to_string());
                        cursor += 1;
                        consumed += 1;
                    }
                    "-" => {
                        assert_eq!(text, old_lines[cursor], "delete mismatch");
                        cursor += 1;
                        consumed += 1;
                    }
                    "+" => out.push(text.to_string()),
                    other => panic!("unexpected hunk line tag {other:?}"),
                }
            }
        }
        while cursor < old_lines.len() {
            out.push(old_lines[cursor].to_string());
            cursor += 1;
        }
        if out.is_empty() {
            String::new()
        } else {
            let mut text = out.join("\n");
            text.push('\n');
            text
        }
    }

    #[test]
    fn random_edits_round_trip_through_the_rendered_diff() {
        let mut rng = Rng(0x00D1FF);
        for round in 0..200 {
            let n = 1 + rng.below(40);
            let old_lines: Vec<String> =
                (0..n).map(|_| format!("w{}", rng.below(12))).collect();
            let mut new_lines = old_lines.clone();
            for _ in 0..rng.below(8) {
                match rng.below(3) {
                    0 if !new_lines.is_empty() => {
                        let at = rng.below(new_lines.len());
                        new_lines.remove(at);
                    }
                    1 => {
                        let at = rng.below(new_lines.len() + 1);
                        new_lines.insert(at, format!("ins{}", rng.below(12)));
                    }
                    _ if !new_lines.is_empty() => {
                        let at = rng.below(new_lines.len());
                        new_lines[at] = format!("rep{}", rng.below(12));
                    }
                    _ => {}
                }
            }
            let to_text = |lines: &[String]| {
                if lines.is_empty() {
                    String::new()
                } else {
                    let mut t = lines.join("\n");
                    t.push('\n');
                    t
                }
            };
            let old = to_text(&old_lines);
            let new = to_text(&new_lines);
            let diff = unified_diff("f", &old, &new);
            if old == new {
                assert_eq!(diff, "");
                continue;
            }
            assert_eq!(apply_unified(&old, &diff), new, "round {round}\n{diff}");
        }
    }
}
