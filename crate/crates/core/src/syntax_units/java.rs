//! Structural Java scanner.
//!
//! Walks the source once, skipping comments and string/char literals, and
//! matches braces. Type declarations (`class`/`interface`/`enum`/`record`/
//! `@interface`) open named unit scopes anywhere a type may appear; methods
//! and constructors are recognized only directly inside a type body. Every
//! other brace (initializer blocks, anonymous classes, array initializers,
//! enum constant bodies) opens an anonymous scope so that nesting stays
//! balanced without producing units.

use super::{SyntaxError, UnitKind, UnitSpan};

const TYPE_KEYWORDS: [&str; 4] = ["class", "interface", "enum", "record"];

struct Frame {
    scope: Scope,
    open_line: usize,
}

enum Scope {
    Unit(UnitSpan),
    Anonymous,
}

impl Frame {
    fn is_type_unit(&self) -> bool {
        matches!(
            &self.scope,
            Scope::Unit(u) if matches!(u.kind, UnitKind::Class | UnitKind::Interface | UnitKind::Enum)
        )
    }
}

/// Per-statement token state at a declaring scope. Reset on `;`, `{`, `}`.
#[derive(Default)]
struct Stmt {
    start_line: Option<usize>,
    words: Vec<String>,
    /// Word immediately before the most recent top-level `(`, unless that
    /// word is an annotation name or preceded by `new`.
    ident_before_paren: Option<String>,
    saw_equals: bool,
    last_word_was_annotation: bool,
    prev_word: Option<String>,
}

impl Stmt {
    fn reset(&mut self) {
        *self = Stmt::default();
    }

    fn note_token_start(&mut self, line: usize) {
        if self.start_line.is_none() {
            self.start_line = Some(line);
        }
    }

    fn type_decl(&self) -> Option<(UnitKind, String)> {
        for (i, w) in self.words.iter().enumerate() {
            if !TYPE_KEYWORDS.contains(&w.as_str()) {
                continue;
            }
            // `Foo.class` is a literal, not a declaration
            if i > 0 && self.words[i - 1] == "." {
                continue;
            }
            let kind = match w.as_str() {
                "interface" => {
                    if i > 0 && self.words[i - 1] == "@" {
                        UnitKind::Interface
                    } else {
                        UnitKind::Interface
                    }
                }
                "enum" => UnitKind::Enum,
                _ => UnitKind::Class,
            };
            let name = self.words.get(i + 1).cloned().unwrap_or_default();
            if name.is_empty() || !is_identifier(&name) {
                continue;
            }
            return Some((kind, name));
        }
        None
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

/// Extracts the nested unit tree from a Java source file.
///
/// Returns a root `File` node spanning the whole file; `end_line` is 0 for
/// an empty file. Fails with `UnbalancedBraces` when brace matching cannot
/// complete.
pub fn extract_units(source_text: &str, path: &str) -> Result<UnitSpan, SyntaxError> {
    let total_lines = crate::repo::line_count(source_text);
    let file_name = path.rsplit('/').next().unwrap_or(path).to_string();
    let mut root_children: Vec<UnitSpan> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();
    let mut stmt = Stmt::default();
    // statement tracking only matters at declaring scopes; `enum_constants`
    // is true while scanning an enum body before its `;` separator
    let mut paren_depth: usize = 0;

    let bytes = source_text.as_bytes();
    let mut i = 0;
    let mut line = 1;
    let n = bytes.len();

    // true when the innermost frame admits declarations (file level or a type body)
    macro_rules! declaring {
        () => {
            stack.last().map_or(true, |f| f.is_type_unit())
        };
    }

    let mut enum_constants_pending: Vec<bool> = Vec::new();

    while i < n {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                i += 1;
            }
            b'/' if i + 1 < n && bytes[i + 1] == b'/' => {
                while i < n && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if i + 1 < n && bytes[i + 1] == b'*' => {
                i += 2;
                while i + 1 < n && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    if bytes[i] == b'\n' {
                        line += 1;
                    }
                    i += 1;
                }
                i = (i + 2).min(n);
            }
            b'"' => {
                if i + 2 < n && bytes[i + 1] == b'"' && bytes[i + 2] == b'"' {
                    // text block
                    i += 3;
                    while i + 2 < n && !(bytes[i] == b'"' && bytes[i + 1] == b'"' && bytes[i + 2] == b'"') {
                        if bytes[i] == b'\n' {
                            line += 1;
                        }
                        if bytes[i] == b'\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    i = (i + 3).min(n);
                } else {
                    i += 1;
                    while i < n && bytes[i] != b'"' {
                        if bytes[i] == b'\n' {
                            line += 1;
                        }
                        if bytes[i] == b'\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    i += 1;
                }
            }
            b'\'' => {
                i += 1;
                while i < n && bytes[i] != b'\'' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                i += 1;
            }
            b'(' => {
                if paren_depth == 0 && declaring!() {
                    let candidate = stmt.prev_word.clone();
                    let annot = stmt.last_word_was_annotation;
                    let after_new = stmt.words.len() >= 2
                        && stmt.words[stmt.words.len().saturating_sub(2)] == "new";
                    if let Some(w) = candidate {
                        if is_identifier(&w) && !annot && !after_new {
                            stmt.ident_before_paren = Some(w);
                        }
                    }
                }
                paren_depth += 1;
                i += 1;
            }
            b')' => {
                paren_depth = paren_depth.saturating_sub(1);
                i += 1;
            }
            b'=' => {
                if paren_depth == 0 && declaring!() {
                    stmt.note_token_start(line);
                    stmt.saw_equals = true;
                }
                i += 1;
            }
            b';' => {
                if paren_depth == 0 {
                    if let Some(last) = enum_constants_pending.last_mut() {
                        if stack.last().map_or(false, |f| matches!(&f.scope, Scope::Unit(u) if u.kind == UnitKind::Enum)) {
                            *last = false;
                        }
                    }
                    stmt.reset();
                }
                i += 1;
            }
            b'{' => {
                let new_scope = if paren_depth > 0 || !declaring!() {
                    Scope::Anonymous
                } else if let Some((kind, name)) = stmt.type_decl() {
                    Scope::Unit(UnitSpan {
                        path: path.to_string(),
                        kind,
                        name,
                        start_line: stmt.start_line.unwrap_or(line),
                        end_line: 0,
                        children: Vec::new(),
                    })
                } else if let Some(name) = method_candidate(&stmt, &stack, &enum_constants_pending) {
                    let enclosing = enclosing_type_name(&stack);
                    let kind = if Some(name.as_str()) == enclosing.as_deref() {
                        UnitKind::Constructor
                    } else {
                        UnitKind::Method
                    };
                    Scope::Unit(UnitSpan {
                        path: path.to_string(),
                        kind,
                        name,
                        start_line: stmt.start_line.unwrap_or(line),
                        end_line: 0,
                        children: Vec::new(),
                    })
                } else {
                    Scope::Anonymous
                };
                let entering_enum = matches!(&new_scope, Scope::Unit(u) if u.kind == UnitKind::Enum);
                stack.push(Frame { scope: new_scope, open_line: line });
                enum_constants_pending.push(entering_enum);
                stmt.reset();
                i += 1;
            }
            b'}' => {
                let Some(frame) = stack.pop() else {
                    return Err(SyntaxError::UnbalancedBraces(line));
                };
                enum_constants_pending.pop();
                if let Scope::Unit(mut unit) = frame.scope {
                    unit.end_line = line;
                    attach(&mut stack, &mut root_children, unit);
                }
                stmt.reset();
                i += 1;
            }
            b'@' => {
                if declaring!() && paren_depth == 0 {
                    stmt.note_token_start(line);
                    stmt.words.push("@".to_string());
                    stmt.last_word_was_annotation = false;
                    stmt.prev_word = Some("@".to_string());
                }
                i += 1;
            }
            _ if c.is_ascii_alphanumeric() || c == b'_' || c == b'$' => {
                let start = i;
                while i < n
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
                {
                    i += 1;
                }
                if declaring!() && paren_depth == 0 {
                    let word = &source_text[start..i];
                    stmt.note_token_start(line);
                    let was_at = stmt.prev_word.as_deref() == Some("@");
                    stmt.words.push(word.to_string());
                    stmt.last_word_was_annotation = was_at && word != "interface";
                    stmt.prev_word = Some(word.to_string());
                }
            }
            b'.' => {
                if declaring!() && paren_depth == 0 {
                    stmt.words.push(".".to_string());
                    stmt.prev_word = Some(".".to_string());
                    stmt.last_word_was_annotation = false;
                }
                i += 1;
            }
            _ => {
                i += 1;
            }
        }
    }

    if let Some(frame) = stack.last() {
        return Err(SyntaxError::UnbalancedBraces(frame.open_line));
    }

    Ok(UnitSpan {
        path: path.to_string(),
        kind: UnitKind::File,
        name: file_name,
        start_line: 1,
        end_line: total_lines,
        children: root_children,
    })
}

fn method_candidate(stmt: &Stmt, stack: &[Frame], enum_constants: &[bool]) -> Option<String> {
    if stmt.saw_equals {
        return None;
    }
    let ident = stmt.ident_before_paren.clone()?;
    let top = stack.last()?;
    if !top.is_type_unit() {
        return None;
    }
    // inside an enum body, braces before the `;` separator belong to
    // constant bodies, not methods
    if let Scope::Unit(u) = &top.scope {
        if u.kind == UnitKind::Enum && enum_constants.last().copied().unwrap_or(false) {
            return None;
        }
    }
    Some(ident)
}

fn enclosing_type_name(stack: &[Frame]) -> Option<String> {
    stack.iter().rev().find_map(|f| match &f.scope {
        Scope::Unit(u) if f.is_type_unit() => Some(u.name.clone()),
        _ => None,
    })
}

fn attach(stack: &mut [Frame], root_children: &mut Vec<UnitSpan>, unit: UnitSpan) {
    for frame in stack.iter_mut().rev() {
        if let Scope::Unit(parent) = &mut frame.scope {
            parent.children.push(unit);
            return;
        }
    }
    root_children.push(unit);
}
