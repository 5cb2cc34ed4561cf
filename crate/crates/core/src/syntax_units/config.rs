//! Key-path structure extraction for pom/xml and yml configuration files.

use quick_xml::events::Event;
use quick_xml::Reader;
use yaml_rust2::parser::{Event as YamlEvent, Parser as YamlParser};

use super::{ConfigEntry, ConfigFormat, ConfigStructure, SyntaxError};

/// Extracts an ordered list of (key_path, value, line) entries from a pom/xml
/// or yml/yaml file. XML attributes and comments are ignored; only element
/// text leaves (and yaml scalar leaves) become entries.
pub fn extract_config_structure(source_text: &str, path: &str) -> Result<ConfigStructure, SyntaxError> {
    if path.ends_with(".xml") {
        extract_pom(source_text, path)
    } else if path.ends_with(".yml") || path.ends_with(".yaml") {
        extract_yaml(source_text, path)
    } else {
        Err(SyntaxError::UnsupportedFile(path.to_string()))
    }
}

fn line_of(newline_offsets: &[usize], byte_pos: usize) -> usize {
    newline_offsets.partition_point(|&off| off < byte_pos) + 1
}

fn newline_offsets(text: &str) -> Vec<usize> {
    text.bytes()
        .enumerate()
        .filter_map(|(i, b)| (b == b'\n').then_some(i))
        .collect()
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").trim().to_string()
}

fn extract_pom(text: &str, path: &str) -> Result<ConfigStructure, SyntaxError> {
    let offsets = newline_offsets(text);
    let mut reader = Reader::from_str(text);
    let mut stack: Vec<String> = Vec::new();
    let mut had_child: Vec<bool> = Vec::new();
    let mut pending_text: Option<(String, usize)> = None;
    let mut entries = Vec::new();

    loop {
        let pos = reader.buffer_position() as usize;
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if let Some(top) = had_child.last_mut() {
                    *top = true;
                }
                stack.push(name);
                had_child.push(false);
                pending_text = None;
            }
            Ok(Event::Empty(_)) => {
                if let Some(top) = had_child.last_mut() {
                    *top = true;
                }
            }
            Ok(Event::Text(t)) => {
                let raw = t
                    .unescape()
                    .map_err(|e| SyntaxError::MalformedConfig(e.to_string()))?;
                let trimmed = raw.trim();
                if !trimmed.is_empty() && !stack.is_empty() {
                    // line of the value itself: event start offset plus any
                    // leading whitespace inside the text node
                    let lead = raw.len() - raw.trim_start().len();
                    pending_text = Some((first_line(trimmed), line_of(&offsets, pos + lead)));
                }
            }
            Ok(Event::CData(t)) => {
                let raw = String::from_utf8_lossy(t.as_ref()).to_string();
                if !raw.trim().is_empty() && !stack.is_empty() {
                    pending_text = Some((first_line(raw.trim()), line_of(&offsets, pos)));
                }
            }
            Ok(Event::End(_)) => {
                let leaf = !had_child.pop().unwrap_or(true);
                if leaf {
                    if let Some((value, line)) = pending_text.take() {
                        entries.push(ConfigEntry {
                            key_path: stack.join("/"),
                            value_excerpt: value,
                            line,
                        });
                    }
                }
                stack.pop();
                pending_text = None;
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err(SyntaxError::MalformedConfig(e.to_string())),
        }
    }

    Ok(ConfigStructure {
        path: path.to_string(),
        format: ConfigFormat::Pom,
        entries,
    })
}

enum YamlCtx {
    Map { key: Option<String>, pushed_segment: bool },
    Seq { idx: usize, pushed_segment: bool },
}

fn extract_yaml(text: &str, path: &str) -> Result<ConfigStructure, SyntaxError> {
    let mut parser = YamlParser::new_from_str(text);
    let mut ctx: Vec<YamlCtx> = Vec::new();
    let mut segments: Vec<String> = Vec::new();
    let mut entries = Vec::new();

    loop {
        let (event, marker) = parser
            .next_token()
            .map_err(|e| SyntaxError::MalformedConfig(e.to_string()))?;
        match event {
            YamlEvent::StreamEnd => break,
            YamlEvent::MappingStart(..) => {
                let pushed = enter_collection(&mut ctx, &mut segments);
                ctx.push(YamlCtx::Map { key: None, pushed_segment: pushed });
            }
            YamlEvent::SequenceStart(..) => {
                let pushed = enter_collection(&mut ctx, &mut segments);
                ctx.push(YamlCtx::Seq { idx: 0, pushed_segment: pushed });
            }
            YamlEvent::MappingEnd | YamlEvent::SequenceEnd => {
                let pushed = match ctx.pop() {
                    Some(YamlCtx::Map { pushed_segment, .. })
                    | Some(YamlCtx::Seq { pushed_segment, .. }) => pushed_segment,
                    None => false,
                };
                if pushed {
                    segments.pop();
                }
            }
            YamlEvent::Scalar(value, _style, _aid, _tag) => match ctx.last_mut() {
                Some(YamlCtx::Map { key, .. }) if key.is_none() => {
                    *key = Some(sanitize_segment(&value));
                }
                Some(YamlCtx::Map { key, .. }) => {
                    let k = key.take().unwrap_or_default();
                    let mut segs = segments.clone();
                    segs.push(k);
                    entries.push(ConfigEntry {
                        key_path: segs.join("/"),
                        value_excerpt: first_line(&value),
                        line: marker.line(),
                    });
                }
                Some(YamlCtx::Seq { idx, .. }) => {
                    let mut segs = segments.clone();
                    segs.push(idx.to_string());
                    *idx += 1;
                    entries.push(ConfigEntry {
                        key_path: segs.join("/"),
                        value_excerpt: first_line(&value),
                        line: marker.line(),
                    });
                }
                None => {
                    // bare scalar document; implicit empty documents are skipped
                    if !value.trim().is_empty() {
                        entries.push(ConfigEntry {
                            key_path: "0".to_string(),
                            value_excerpt: first_line(&value),
                            line: marker.line(),
                        });
                    }
                }
            },
            YamlEvent::Alias(_) => match ctx.last_mut() {
                Some(YamlCtx::Map { key, .. }) => {
                    key.take();
                }
                Some(YamlCtx::Seq { idx, .. }) => {
                    *idx += 1;
                }
                None => {}
            },
            _ => {}
        }
    }

    Ok(ConfigStructure {
        path: path.to_string(),
        format: ConfigFormat::Yaml,
        entries,
    })
}

/// When a collection starts in value position, its key/index becomes a path
/// segment. Returns whether a segment was pushed.
fn enter_collection(ctx: &mut [YamlCtx], segments: &mut Vec<String>) -> bool {
    match ctx.last_mut() {
        Some(YamlCtx::Map { key, .. }) => {
            // complex keys keep the walk total with an inert segment
            segments.push(key.take().unwrap_or_else(|| "?".to_string()));
            true
        }
        Some(YamlCtx::Seq { idx, .. }) => {
            segments.push(idx.to_string());
            *idx += 1;
            true
        }
        None => false,
    }
}

fn sanitize_segment(s: &str) -> String {
    s.replace('\n', " ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pom_leaf_entries_with_lines() {
        let pom = "<?xml version=\"1.0\"?>\n<project>\n  <dependencies>\n    <dependency>\n      <version>3.1.12</version>\n    </dependency>\n  </dependencies>\n</project>\n";
        let cfg = extract_config_structure(pom, "pom.xml").unwrap();
        assert_eq!(cfg.format, ConfigFormat::Pom);
        assert_eq!(cfg.entries.len(), 1);
        let e = &cfg.entries[0];
        assert_eq!(e.key_path, "project/dependencies/dependency/version");
        assert_eq!(e.value_excerpt, "3.1.12");
        assert_eq!(e.line, 5);
    }

    #[test]
    fn pom_attributes_and_comments_ignored() {
        let pom = "<project xmlns=\"http://maven.apache.org/POM/4.0.0\">\n  <!-- comment -->\n  <name attr=\"x\">demo</name>\n</project>\n";
        let cfg = extract_config_structure(pom, "pom.xml").unwrap();
        assert_eq!(cfg.entries.len(), 1);
        assert_eq!(cfg.entries[0].key_path, "project/name");
        assert_eq!(cfg.entries[0].value_excerpt, "demo");
        assert_eq!(cfg.entries[0].line, 3);
    }

    #[test]
    fn malformed_xml_rejected() {
        let err = extract_config_structure("<project><open></project>", "pom.xml").unwrap_err();
        assert!(matches!(err, SyntaxError::MalformedConfig(_)));
    }

    #[test]
    fn empty_yaml_no_entries() {
        let cfg = extract_config_structure("", "app.yml").unwrap();
        assert_eq!(cfg.format, ConfigFormat::Yaml);
        assert!(cfg.entries.is_empty());
    }

    #[test]
    fn yaml_nested_keys_and_lines() {
        let cfg = extract_config_structure("a:\n  b: 1\n  c: 2\n", "app.yml").unwrap();
        let got: Vec<_> = cfg
            .entries
            .iter()
            .map(|e| (e.key_path.as_str(), e.value_excerpt.as_str(), e.line))
            .collect();
        assert_eq!(got, vec![("a/b", "1", 2), ("a/c", "2", 3)]);
    }

    #[test]
    fn yaml_sequence_indices() {
        let cfg = extract_config_structure("spring:\n  profiles:\n    - dev\n    - prod\n", "app.yml").unwrap();
        let got: Vec<_> = cfg
            .entries
            .iter()
            .map(|e| (e.key_path.as_str(), e.value_excerpt.as_str(), e.line))
            .collect();
        assert_eq!(got, vec![("spring/profiles/0", "dev", 3), ("spring/profiles/1", "prod", 4)]);
    }

    #[test]
    fn malformed_yaml_rejected() {
        let err = extract_config_structure("a:\n - x\n bad\n  worse: [\n", "app.yml").unwrap_err();
        assert!(matches!(err, SyntaxError::MalformedConfig(_)));
    }
}
