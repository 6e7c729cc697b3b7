//! Comment, literal and preprocessor masking for C-family source text.
//!
//! The structural passes (function extraction, call scanning, def-use
//! tracing) all work on a *masked* copy of the source in which every byte
//! belonging to a comment, a string or character literal, or a
//! preprocessor directive is replaced by a space. Newlines are kept, so
//! byte offsets and line numbers in the masked text are identical to the
//! original.

/// Returns a copy of `src` with comments, string/char literals and
/// preprocessor lines blanked out. The result has the same byte length and
/// the same line structure as the input.
pub fn mask_code(src: &str) -> String {
    let bytes = src.as_bytes();
    let mut out = bytes.to_vec();
    let mut i = 0;
    let mut at_line_start = true;

    let blank = |out: &mut Vec<u8>, from: usize, to: usize| {
        for b in &mut out[from..to] {
            if *b != b'\n' {
                *b = b' ';
            }
        }
    };

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                at_line_start = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | 0x0b | 0x0c => i += 1,
            b'#' if at_line_start => {
                let end = directive_end(bytes, i);
                blank(&mut out, i, end);
                i = end;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                let end = memchr_newline(bytes, i);
                blank(&mut out, i, end);
                i = end;
                at_line_start = false;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let end = find_block_comment_end(bytes, i + 2);
                blank(&mut out, i, end);
                i = end;
                at_line_start = false;
            }
            b'"' | b'\'' => {
                let end = literal_end(bytes, i, c);
                blank(&mut out, i, end);
                i = end;
                at_line_start = false;
            }
            _ => {
                at_line_start = false;
                i += 1;
            }
        }
    }

    // Masking only ever overwrites whole comment/literal/directive spans
    // with ASCII spaces, so multi-byte sequences are either kept intact or
    // fully replaced.
    String::from_utf8(out).expect("masking preserves UTF-8 validity")
}

fn memchr_newline(bytes: &[u8], from: usize) -> usize {
    bytes[from..]
        .iter()
        .position(|&b| b == b'\n')
        .map_or(bytes.len(), |p| from + p)
}

fn find_block_comment_end(bytes: &[u8], from: usize) -> usize {
    let mut j = from;
    while j + 1 < bytes.len() {
        if bytes[j] == b'*' && bytes[j + 1] == b'/' {
            return j + 2;
        }
        j += 1;
    }
    bytes.len()
}

/// End of a preprocessor directive starting at `from`, honouring backslash
/// line continuations and block comments that span lines.
fn directive_end(bytes: &[u8], from: usize) -> usize {
    let mut j = from;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' if bytes.get(j + 1) == Some(&b'\n') => j += 2,
            b'\\' if bytes.get(j + 1) == Some(&b'\r') && bytes.get(j + 2) == Some(&b'\n') => {
                j += 3
            }
            b'/' if bytes.get(j + 1) == Some(&b'*') => j = find_block_comment_end(bytes, j + 2),
            b'\n' => return j,
            _ => j += 1,
        }
    }
    bytes.len()
}

/// End (exclusive) of a string or character literal opened at `from`.
/// Unterminated literals stop at the end of the line.
fn literal_end(bytes: &[u8], from: usize, quote: u8) -> usize {
    let mut j = from + 1;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' => j += 2,
            b'\n' => return j,
            b if b == quote => return j + 1,
            _ => j += 1,
        }
    }
    bytes.len()
}

pub(crate) fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

pub(crate) fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offsets at which each line starts.
pub(crate) fn line_starts(src: &str) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend(
        src.bytes()
            .enumerate()
            .filter(|&(_, b)| b == b'\n')
            .map(|(i, _)| i + 1),
    );
    starts
}

/// 1-based line number of byte `offset`.
pub(crate) fn line_of(starts: &[usize], offset: usize) -> usize {
    match starts.binary_search(&offset) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
}

/// The verbatim text of lines `first..=last` (1-based), without the final
/// line terminator.
pub(crate) fn line_span<'a>(src: &'a str, starts: &[usize], first: usize, last: usize) -> &'a str {
    let begin = starts[first - 1];
    let end = starts.get(last).map_or(src.len(), |&next| next - 1);
    &src[begin..end.max(begin)]
}
