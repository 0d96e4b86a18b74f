//! Minimal element tree over `quick-xml`, plus escaping for the writer side.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::WireError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Element>,
    pub text: String,
}

impl Element {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn required(&self, key: &str) -> Result<&str, WireError> {
        self.attr(key).ok_or_else(|| WireError::MissingAttribute {
            element: self.name.clone(),
            attribute: key.to_string(),
        })
    }

    /// Rejects attributes outside `allowed`.
    pub fn check_attrs(&self, allowed: &[&str]) -> Result<(), WireError> {
        match self.attrs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(WireError::UnknownAttribute {
                element: self.name.clone(),
                attribute: k.clone(),
            }),
            None => Ok(()),
        }
    }

    /// Serializes the element; text precedes the children.
    pub fn write(&self, out: &mut String) {
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attrs {
            out.push_str(&format!(" {k}=\"{}\"", escape_attr(v)));
        }
        if self.text.is_empty() && self.children.is_empty() {
            out.push_str("/>");
            return;
        }
        out.push('>');
        out.push_str(&escape_text(&self.text));
        for c in &self.children {
            c.write(out);
        }
        out.push_str(&format!("</{}>", self.name));
    }

    pub fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }
}

/// Parses every top-level element of `text`.
pub fn parse_elements(text: &str) -> Result<Vec<Element>, WireError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().check_end_names = true;
    let mut stack: Vec<Element> = Vec::new();
    let mut roots = Vec::new();
    let malformed = |reader: &Reader<&[u8]>, msg: String| WireError::Xml {
        offset: reader.buffer_position() as usize,
        message: msg,
    };
    loop {
        let event = reader
            .read_event()
            .map_err(|e| malformed(&reader, e.to_string()))?;
        match event {
            Event::Start(start) => stack.push(element_from_start(&start, &reader)?),
            Event::Empty(start) => {
                let el = element_from_start(&start, &reader)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => roots.push(el),
                }
            }
            Event::End(_) => {
                let mut el = stack.pop().ok_or_else(|| malformed(&reader, "unbalanced end tag".into()))?;
                if !el.children.is_empty() && el.text.trim().is_empty() {
                    el.text.clear();
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => roots.push(el),
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| malformed(&reader, e.to_string()))?;
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&s),
                    None if s.trim().is_empty() => {}
                    None => return Err(malformed(&reader, "text outside of an element".into())),
                }
            }
            Event::CData(c) => {
                let s = String::from_utf8(c.into_inner().into_owned()).map_err(|e| malformed(&reader, e.to_string()))?;
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&s),
                    None => return Err(malformed(&reader, "CDATA outside of an element".into())),
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if let Some(open) = stack.last() {
        return Err(WireError::Xml {
            offset: text.len(),
            message: format!("unclosed element `{}`", open.name),
        });
    }
    Ok(roots)
}

fn element_from_start(start: &BytesStart<'_>, reader: &Reader<&[u8]>) -> Result<Element, WireError> {
    let malformed = |msg: String| WireError::Xml {
        offset: reader.buffer_position() as usize,
        message: msg,
    };
    let name = String::from_utf8(start.name().as_ref().to_vec()).map_err(|e| malformed(e.to_string()))?;
    let mut el = Element {
        name,
        ..Element::default()
    };
    for attr in start.attributes() {
        let attr = attr.map_err(|e| malformed(e.to_string()))?;
        let key = String::from_utf8(attr.key.as_ref().to_vec()).map_err(|e| malformed(e.to_string()))?;
        let value = attr.unescape_value().map_err(|e| malformed(e.to_string()))?.into_owned();
        if el.attr(&key).is_some() {
            return Err(malformed(format!("duplicate attribute `{key}`")));
        }
        el.attrs.push((key, value));
    }
    Ok(el)
}

/// Parses a document with exactly one root element.
pub fn parse_document(text: &str) -> Result<Element, WireError> {
    let mut roots = parse_elements(text)?;
    match roots.len() {
        1 => Ok(roots.pop().unwrap()),
        n => Err(WireError::Xml {
            offset: 0,
            message: format!("expected one root element, found {n}"),
        }),
    }
}

/// Escapes an attribute value. Whitespace control characters become
/// character references so every element fits on one line.
pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    out
}

/// Incremental writer for single-line elements.
pub struct ElementWriter<'a> {
    out: &'a mut String,
    name: &'static str,
    open: bool,
}

impl<'a> ElementWriter<'a> {
    pub fn start(out: &'a mut String, name: &'static str) -> Self {
        out.push('<');
        out.push_str(name);
        ElementWriter { out, name, open: true }
    }

    pub fn attr(self, key: &str, value: &str) -> Self {
        self.out.push(' ');
        self.out.push_str(key);
        self.out.push_str("=\"");
        self.out.push_str(&escape_attr(value));
        self.out.push('"');
        self
    }

    pub fn attr_opt(self, key: &str, value: Option<&str>) -> Self {
        match value {
            Some(v) => self.attr(key, v),
            None => self,
        }
    }

    /// Closes the start tag; the caller writes children, then calls [`Self::end`].
    pub fn body(mut self) -> Self {
        self.out.push('>');
        self.open = false;
        self
    }

    pub fn out(&mut self) -> &mut String {
        self.out
    }

    pub fn end(self) {
        if self.open {
            self.out.push_str("/>");
        } else {
            self.out.push_str("</");
            self.out.push_str(self.name);
            self.out.push('>');
        }
    }
}
