//! Minimal JUnit-style XML parsing.
//!
//! This is not a general XML parser: it handles exactly the subset that test
//! runners emit — nested elements, attributes, text, CDATA, comments, the
//! XML declaration, and the five standard entities plus numeric character
//! references. Every parse failure reports the byte offset where the input
//! stopped making sense, which is what the malformed-report contract wants.

/// A parse failure at a byte position.
#[derive(Debug, PartialEq, Eq)]
pub struct XmlError {
    pub byte_offset: usize,
    pub detail: String,
}

/// One parsed element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Element>,
    /// Concatenated text and CDATA content, entity-decoded, whitespace kept.
    pub text: String,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// Depth-first walk collecting every element with the given name.
    pub fn find_all<'a>(&'a self, name: &str, out: &mut Vec<&'a Element>) {
        if self.name == name {
            out.push(self);
        }
        for child in &self.children {
            child.find_all(name, out);
        }
    }
}

/// Parse a complete document and return its root element.
pub fn parse_document(bytes: &[u8]) -> Result<Element, XmlError> {
    let text = std::str::from_utf8(bytes).map_err(|e| XmlError {
        byte_offset: e.valid_up_to(),
        detail: "report is not valid UTF-8".to_string(),
    })?;
    let mut parser = Parser { text, pos: 0 };
    parser.skip_misc();
    let root = parser.parse_element()?;
    parser.skip_misc();
    if parser.pos < parser.text.len() {
        return Err(parser.error("trailing content after document root"));
    }
    Ok(root)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, detail: &str) -> XmlError {
        XmlError { byte_offset: self.pos, detail: detail.to_string() }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn skip_whitespace(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    /// Skip whitespace, processing instructions, comments, and DOCTYPE.
    fn skip_misc(&mut self) {
        loop {
            self.skip_whitespace();
            if self.rest().starts_with("<?") {
                match self.rest().find("?>") {
                    Some(i) => self.pos += i + 2,
                    None => {
                        self.pos = self.text.len();
                        return;
                    }
                }
            } else if self.rest().starts_with("<!--") {
                match self.rest().find("-->") {
                    Some(i) => self.pos += i + 3,
                    None => {
                        self.pos = self.text.len();
                        return;
                    }
                }
            } else if self.rest().starts_with("<!DOCTYPE") {
                match self.rest().find('>') {
                    Some(i) => self.pos += i + 1,
                    None => {
                        self.pos = self.text.len();
                        return;
                    }
                }
            } else {
                return;
            }
        }
    }

    fn parse_name(&mut self) -> Result<String, XmlError> {
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if end == 0 {
            return Err(self.error("expected a name"));
        }
        self.pos += end;
        Ok(rest[..end].to_string())
    }

    fn parse_element(&mut self) -> Result<Element, XmlError> {
        if !self.eat("<") {
            return Err(self.error("expected '<'"));
        }
        let name = self.parse_name()?;
        let mut attrs = Vec::new();
        loop {
            self.skip_whitespace();
            if self.eat("/>") {
                return Ok(Element { name, attrs, children: Vec::new(), text: String::new() });
            }
            if self.eat(">") {
                break;
            }
            let key = self.parse_name().map_err(|mut e| {
                e.detail = "expected attribute, '>' or '/>'".to_string();
                e
            })?;
            self.skip_whitespace();
            if !self.eat("=") {
                return Err(self.error("expected '=' after attribute name"));
            }
            self.skip_whitespace();
            let quote = if self.eat("\"") {
                '"'
            } else if self.eat("'") {
                '\''
            } else {
                return Err(self.error("expected quoted attribute value"));
            };
            let rest = self.rest();
            let end = rest.find(quote).ok_or_else(|| self.error("unterminated attribute value"))?;
            let raw = &rest[..end];
            let value_start = self.pos;
            self.pos += end + 1;
            let value = decode_entities(raw).map_err(|(off, detail)| XmlError {
                byte_offset: value_start + off,
                detail,
            })?;
            attrs.push((key, value));
        }

        // Content: text, CDATA, comments, and child elements until `</name>`.
        let mut children = Vec::new();
        let mut text = String::new();
        loop {
            if self.rest().is_empty() {
                return Err(self.error("unexpected end of input inside element"));
            }
            if self.rest().starts_with("</") {
                self.pos += 2;
                let close = self.parse_name()?;
                if close != name {
                    return Err(self.error(&format!("mismatched close tag: expected </{name}>")));
                }
                self.skip_whitespace();
                if !self.eat(">") {
                    return Err(self.error("expected '>' in close tag"));
                }
                return Ok(Element { name, attrs, children, text });
            }
            if self.rest().starts_with("<![CDATA[") {
                self.pos += "<![CDATA[".len();
                let end = self.rest().find("]]>").ok_or_else(|| self.error("unterminated CDATA"))?;
                text.push_str(&self.rest()[..end]);
                self.pos += end + 3;
                continue;
            }
            if self.rest().starts_with("<!--") {
                let end = self.rest().find("-->").ok_or_else(|| self.error("unterminated comment"))?;
                self.pos += end + 3;
                continue;
            }
            if self.rest().starts_with('<') {
                children.push(self.parse_element()?);
                continue;
            }
            let chunk_end = self.rest().find('<').unwrap_or(self.rest().len());
            let raw = &self.rest()[..chunk_end];
            let chunk_start = self.pos;
            let decoded = decode_entities(raw).map_err(|(off, detail)| XmlError {
                byte_offset: chunk_start + off,
                detail,
            })?;
            text.push_str(&decoded);
            self.pos += chunk_end;
        }
    }
}

/// Resolve the five named entities and numeric character references.
fn decode_entities(raw: &str) -> Result<String, (usize, String)> {
    if !raw.contains('&') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    let mut consumed = 0usize;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let after = &rest[amp..];
        let semi = after
            .find(';')
            .ok_or((consumed + amp, "unterminated entity reference".to_string()))?;
        let entity = &after[1..semi];
        match entity {
            "lt" => out.push('<'),
            "gt" => out.push('>'),
            "amp" => out.push('&'),
            "quot" => out.push('"'),
            "apos" => out.push('\''),
            _ => {
                let code = entity
                    .strip_prefix("#x")
                    .or_else(|| entity.strip_prefix("#X"))
                    .map(|hex| u32::from_str_radix(hex, 16))
                    .or_else(|| entity.strip_prefix('#').map(|dec| dec.parse::<u32>()))
                    .ok_or((consumed + amp, format!("unknown entity &{entity};")))?
                    .map_err(|_| (consumed + amp, format!("bad character reference &{entity};")))?;
                let c = char::from_u32(code)
                    .ok_or((consumed + amp, format!("invalid character reference &{entity};")))?;
                out.push(c);
            }
        }
        consumed += amp + semi + 1;
        rest = &rest[amp + semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
