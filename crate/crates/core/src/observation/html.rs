//! Error-recovering HTML parser producing [`DomSnapshot`] trees.
//!
//! The parser is total: any byte string yields a snapshot. Unknown tags are
//! preserved, comments are dropped, and the raw text of `script`/`style`
//! elements is discarded. Recovery rules are a small fixed set (void
//! elements, sibling auto-close for `p`/`li`/`option`/`tr`/`td`/`th`,
//! mismatched end tags pop to the nearest open match or are ignored).

use std::collections::BTreeMap;

use super::{DomNode, DomSnapshot};

const VOID_TAGS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track",
    "wbr",
];

const RAW_TEXT_TAGS: &[&str] = &["script", "style"];

/// Tags closed implicitly by an identical (or grouped) opening sibling.
fn auto_closes(open: &str, incoming: &str) -> bool {
    match open {
        "p" => incoming == "p",
        "li" => incoming == "li",
        "option" => incoming == "option",
        "tr" => incoming == "tr",
        "td" | "th" => incoming == "td" || incoming == "th",
        _ => false,
    }
}

struct Builder {
    // Stack of open elements; index 0 is the synthetic/document root.
    stack: Vec<DomNode>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            stack: vec![DomNode {
                tag: "html".to_string(),
                attributes: BTreeMap::new(),
                text: String::new(),
                children: Vec::new(),
                node_path: Vec::new(),
            }],
        }
    }

    fn open(&mut self, tag: String, attributes: BTreeMap<String, String>) {
        while self.stack.len() > 1
            && auto_closes(&self.stack.last().unwrap().tag, &tag)
        {
            self.close_top();
        }
        self.stack.push(DomNode {
            tag,
            attributes,
            text: String::new(),
            children: Vec::new(),
            node_path: Vec::new(),
        });
    }

    fn close_top(&mut self) {
        debug_assert!(self.stack.len() > 1);
        let node = self.stack.pop().unwrap();
        self.stack.last_mut().unwrap().children.push(node);
    }

    fn close(&mut self, tag: &str) {
        // Pop to the nearest matching open element; ignore stray end tags.
        let Some(pos) = self.stack.iter().rposition(|n| n.tag == tag) else {
            return;
        };
        if pos == 0 {
            return;
        }
        while self.stack.len() > pos {
            self.close_top();
        }
    }

    fn text(&mut self, chunk: &str) {
        self.stack.last_mut().unwrap().text.push_str(chunk);
    }

    fn finish(mut self) -> DomNode {
        while self.stack.len() > 1 {
            self.close_top();
        }
        let mut root = self.stack.pop().unwrap();
        assign_paths(&mut root, Vec::new());
        root
    }
}

fn assign_paths(node: &mut DomNode, path: Vec<usize>) {
    node.node_path = path;
    for (i, child) in node.children.iter_mut().enumerate() {
        let mut child_path = node.node_path.clone();
        child_path.push(i);
        assign_paths(child, child_path);
    }
}

/// Parse an HTML string into a snapshot. Never fails; empty input yields a
/// bare root with no children and an empty title.
pub fn parse_html(html: &str, base_url: &str) -> DomSnapshot {
    let bytes = html.as_bytes();
    let mut builder = Builder::new();
    let mut pos = 0;
    // True once an explicit <html> start tag has replaced the synthetic root.
    let mut saw_html = false;

    while pos < bytes.len() {
        if bytes[pos] == b'<' {
            if html[pos..].starts_with("<!--") {
                pos = match html[pos + 4..].find("-->") {
                    Some(end) => pos + 4 + end + 3,
                    None => bytes.len(),
                };
            } else if html[pos..].starts_with("<!") || html[pos..].starts_with("<?") {
                pos = match html[pos + 2..].find('>') {
                    Some(end) => pos + 2 + end + 1,
                    None => bytes.len(),
                };
            } else if html[pos..].starts_with("</") {
                let end = html[pos + 2..].find('>').map(|e| pos + 2 + e);
                match end {
                    Some(end) => {
                        let name = html[pos + 2..end].trim().to_ascii_lowercase();
                        if !name.is_empty() && name != "html" {
                            builder.close(&name);
                        }
                        pos = end + 1;
                    }
                    None => pos = bytes.len(),
                }
            } else if html.len() > pos + 1
                && (bytes[pos + 1].is_ascii_alphabetic())
            {
                let (tag, attrs, self_closing, after) = parse_tag(html, pos);
                if tag == "html" {
                    // Adopt attributes onto the synthetic root instead of nesting.
                    if !saw_html {
                        builder.stack[0].attributes = attrs;
                        saw_html = true;
                    }
                    pos = after;
                    continue;
                }
                if RAW_TEXT_TAGS.contains(&tag.as_str()) {
                    // Skip raw content up to the matching end tag.
                    let close = format!("</{tag}");
                    pos = match html[after..].to_ascii_lowercase().find(&close) {
                        Some(idx) => {
                            let tail = after + idx;
                            match html[tail..].find('>') {
                                Some(gt) => tail + gt + 1,
                                None => html.len(),
                            }
                        }
                        None => html.len(),
                    };
                    builder.open(tag, attrs);
                    builder.close_top();
                    continue;
                }
                let void = VOID_TAGS.contains(&tag.as_str());
                builder.open(tag, attrs);
                if void || self_closing {
                    builder.close_top();
                }
                pos = after;
            } else {
                // A lone '<' that does not start markup is literal text.
                builder.text("<");
                pos += 1;
            }
        } else {
            let next = html[pos..].find('<').map(|i| pos + i).unwrap_or(html.len());
            let decoded = decode_entities(&html[pos..next]);
            builder.text(&decoded);
            pos = next;
        }
    }

    let root = builder.finish();
    let title = find_title(&root).unwrap_or_default();
    DomSnapshot {
        root,
        base_url: base_url.to_string(),
        title,
    }
}

/// Parse a start tag beginning at `pos` (which points at '<').
/// Returns (tag, attributes, self_closing, position after '>').
fn parse_tag(html: &str, pos: usize) -> (String, BTreeMap<String, String>, bool, usize) {
    let bytes = html.as_bytes();
    let mut i = pos + 1;
    let name_start = i;
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'-') {
        i += 1;
    }
    let tag = html[name_start..i].to_ascii_lowercase();
    let mut attrs = BTreeMap::new();
    let mut self_closing = false;

    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return (tag, attrs, self_closing, i);
        }
        match bytes[i] {
            b'>' => return (tag, attrs, self_closing, i + 1),
            b'/' => {
                self_closing = true;
                i += 1;
            }
            _ => {
                let key_start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'='
                    && bytes[i] != b'>'
                    && bytes[i] != b'/'
                {
                    i += 1;
                }
                let key = html[key_start..i].to_ascii_lowercase();
                while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                let value = if i < bytes.len() && bytes[i] == b'=' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                        i += 1;
                    }
                    if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                        let quote = bytes[i];
                        i += 1;
                        let val_start = i;
                        while i < bytes.len() && bytes[i] != quote {
                            i += 1;
                        }
                        let val = decode_entities(&html[val_start..i]);
                        if i < bytes.len() {
                            i += 1;
                        }
                        val
                    } else {
                        let val_start = i;
                        while i < bytes.len()
                            && !bytes[i].is_ascii_whitespace()
                            && bytes[i] != b'>'
                        {
                            i += 1;
                        }
                        decode_entities(&html[val_start..i])
                    }
                } else {
                    String::new()
                };
                if !key.is_empty() {
                    attrs.entry(key).or_insert(value);
                }
            }
        }
    }
}

fn decode_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[..rest.len().min(12)].find(';');
        match semi {
            Some(semi) => {
                let entity = &rest[1..semi];
                let decoded = match entity {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" => Some('\''),
                    "nbsp" => Some(' '),
                    _ => entity
                        .strip_prefix('#')
                        .and_then(|n| {
                            if let Some(hex) = n.strip_prefix('x').or(n.strip_prefix('X')) {
                                u32::from_str_radix(hex, 16).ok()
                            } else {
                                n.parse::<u32>().ok()
                            }
                        })
                        .and_then(char::from_u32),
                };
                match decoded {
                    Some(c) => {
                        out.push(c);
                        rest = &rest[semi + 1..];
                    }
                    None => {
                        out.push('&');
                        rest = &rest[1..];
                    }
                }
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn find_title(node: &DomNode) -> Option<String> {
    if node.tag == "title" {
        return Some(node.text.trim().to_string());
    }
    node.children.iter().find_map(find_title)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_document() {
        let snap = parse_html(
            "<html><body><button>Add to Cart</button></body></html>",
            "http://x/",
        );
        assert_eq!(snap.root.tag, "html");
        assert_eq!(snap.root.children.len(), 1);
        let body = &snap.root.children[0];
        assert_eq!(body.tag, "body");
        assert_eq!(body.children.len(), 1);
        assert_eq!(body.children[0].tag, "button");
        assert_eq!(body.children[0].text, "Add to Cart");
    }

    #[test]
    fn empty_input() {
        let snap = parse_html("", "http://x/");
        assert_eq!(snap.root.tag, "html");
        assert!(snap.root.children.is_empty());
        assert_eq!(snap.title, "");
    }

    #[test]
    fn unclosed_tags_recover() {
        let snap = parse_html("<p>unclosed <b>bold", "http://x/");
        let p = &snap.root.children[0];
        assert_eq!(p.tag, "p");
        assert_eq!(p.text, "unclosed ");
        assert_eq!(p.children[0].tag, "b");
        assert_eq!(p.children[0].text, "bold");
    }

    #[test]
    fn title_and_dropped_script() {
        let snap = parse_html(
            "<head><title>Shop</title><script>var x = '<p>';</script></head><body>hi</body>",
            "http://x/",
        );
        assert_eq!(snap.title, "Shop");
        let head = &snap.root.children[0];
        let script = &head.children[1];
        assert_eq!(script.tag, "script");
        assert!(script.text.is_empty());
        assert!(script.children.is_empty());
    }

    #[test]
    fn comments_dropped_entities_decoded() {
        let snap = parse_html("<p>a &amp; b<!-- no -->&#33;</p>", "http://x/");
        assert_eq!(snap.root.children[0].text, "a & b!");
    }

    #[test]
    fn attributes_parsed() {
        let snap = parse_html(
            r#"<input type="text" name=q required aria-label='Search box'>"#,
            "http://x/",
        );
        let input = &snap.root.children[0];
        assert_eq!(input.attributes.get("type").unwrap(), "text");
        assert_eq!(input.attributes.get("name").unwrap(), "q");
        assert_eq!(input.attributes.get("required").unwrap(), "");
        assert_eq!(input.attributes.get("aria-label").unwrap(), "Search box");
    }

    #[test]
    fn sibling_auto_close() {
        let snap = parse_html("<ul><li>a<li>b</ul>", "http://x/");
        let ul = &snap.root.children[0];
        assert_eq!(ul.children.len(), 2);
        assert_eq!(ul.children[0].text, "a");
        assert_eq!(ul.children[1].text, "b");
    }

    #[test]
    fn node_paths_unique_and_nested() {
        let snap = parse_html("<div><a>x</a><a>y</a></div>", "http://x/");
        let div = &snap.root.children[0];
        assert_eq!(div.node_path, vec![0]);
        assert_eq!(div.children[0].node_path, vec![0, 0]);
        assert_eq!(div.children[1].node_path, vec![0, 1]);
    }
}
