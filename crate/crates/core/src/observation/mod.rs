//! Page observation pipeline: HTML snapshot -> filtered, ID-annotated
//! accessibility tree -> rendered text.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod html;

pub use html::parse_html;

/// One element (or text holder) of a parsed page tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomNode {
    pub tag: String,
    pub attributes: BTreeMap<String, String>,
    /// Concatenated immediate text content.
    pub text: String,
    pub children: Vec<DomNode>,
    /// Child-index address from the root.
    pub node_path: Vec<usize>,
}

impl DomNode {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    /// Whitespace-collapsed concatenation of this node's text and all
    /// descendant text, in document order.
    pub fn descendant_text(&self) -> String {
        let mut buf = String::new();
        self.collect_text(&mut buf);
        collapse_ws(&buf)
    }

    fn collect_text(&self, buf: &mut String) {
        buf.push_str(&self.text);
        for child in &self.children {
            buf.push(' ');
            child.collect_text(buf);
        }
    }
}

/// Parsed page tree of one tab at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomSnapshot {
    pub root: DomNode,
    pub base_url: String,
    pub title: String,
}

impl DomSnapshot {
    /// Resolve a node_path to its node, if still live.
    pub fn node_at(&self, path: &[usize]) -> Option<&DomNode> {
        let mut node = &self.root;
        for &idx in path {
            node = node.children.get(idx)?;
        }
        Some(node)
    }
}

/// Role vocabulary of the accessibility tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    RootWebArea,
    Link,
    Button,
    Textbox,
    Checkbox,
    Radio,
    Combobox,
    Option,
    Img,
    Heading,
    StaticText,
    ListItem,
    Row,
    Cell,
    Searchbox,
    Tab,
    MenuItem,
    Group,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::RootWebArea => "RootWebArea",
            Role::Link => "link",
            Role::Button => "button",
            Role::Textbox => "textbox",
            Role::Checkbox => "checkbox",
            Role::Radio => "radio",
            Role::Combobox => "combobox",
            Role::Option => "option",
            Role::Img => "img",
            Role::Heading => "heading",
            Role::StaticText => "StaticText",
            Role::ListItem => "listitem",
            Role::Row => "row",
            Role::Cell => "cell",
            Role::Searchbox => "searchbox",
            Role::Tab => "tab",
            Role::MenuItem => "menuitem",
            Role::Group => "group",
        };
        f.write_str(s)
    }
}

/// One node of the filtered accessibility tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxNode {
    pub id: u32,
    pub role: Role,
    pub name: String,
    /// Ordered (key, value) property pairs, e.g. ("focused", "True").
    pub properties: Vec<(String, String)>,
    pub depth: usize,
    pub dom_path: Vec<usize>,
}

/// Node window limiting how much of the tree one observation shows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    /// Index of the first rendered node (over the pre-order list).
    pub offset: usize,
    /// Maximum rendered nodes; `None` is unbounded.
    pub limit: Option<usize>,
}


/// Filtered, ID-annotated accessibility tree of one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxTree {
    /// Pre-order node list, already clipped to `window`. IDs come from the
    /// full (unclipped) tree.
    pub nodes: Vec<AxNode>,
    pub window: Viewport,
    /// Size of the full pre-order list before clipping.
    pub total_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("Unknown element id {0}")]
pub struct UnknownElement(pub u32);

/// Derive the accessibility tree: role mapping, relevance filter, pre-order
/// ID assignment (1..N), then viewport clipping.
pub fn derive_axtree(snapshot: &DomSnapshot, window: Viewport) -> AxTree {
    let mut nodes = vec![AxNode {
        id: 1,
        role: Role::RootWebArea,
        name: snapshot.title.clone(),
        properties: Vec::new(),
        depth: 0,
        dom_path: snapshot.root.node_path.clone(),
    }];
    for child in &snapshot.root.children {
        visit(child, 1, &mut nodes);
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        node.id = (i + 1) as u32;
    }
    let total = nodes.len();
    let clipped: Vec<AxNode> = nodes
        .into_iter()
        .skip(window.offset)
        .take(window.limit.unwrap_or(usize::MAX))
        .collect();
    AxTree {
        nodes: clipped,
        window,
        total_nodes: total,
    }
}

fn visit(node: &DomNode, depth: usize, out: &mut Vec<AxNode>) {
    // head, title, script and style subtrees never render.
    if matches!(node.tag.as_str(), "head" | "title" | "script" | "style") {
        return;
    }
    match map_role(node) {
        Some(role) => {
            out.push(AxNode {
                id: 0,
                role,
                name: accessible_name(node),
                properties: collect_properties(node),
                depth,
                dom_path: node.node_path.clone(),
            });
            for child in &node.children {
                visit(child, depth + 1, out);
            }
        }
        None => {
            // Generic container: surface bare text, promote children.
            let text = collapse_ws(&node.text);
            if !text.is_empty() {
                out.push(AxNode {
                    id: 0,
                    role: Role::StaticText,
                    name: text,
                    properties: Vec::new(),
                    depth,
                    dom_path: node.node_path.clone(),
                });
            }
            for child in &node.children {
                visit(child, depth, out);
            }
        }
    }
}

fn map_role(node: &DomNode) -> Option<Role> {
    if let Some(role) = node.attr("role") {
        match role {
            "tab" => return Some(Role::Tab),
            "menuitem" => return Some(Role::MenuItem),
            "group" => return Some(Role::Group),
            "button" => return Some(Role::Button),
            "link" => return Some(Role::Link),
            _ => {}
        }
    }
    match node.tag.as_str() {
        "a" => Some(Role::Link),
        "button" => Some(Role::Button),
        "input" => match node.attr("type").unwrap_or("text") {
            "button" | "submit" => Some(Role::Button),
            "search" => Some(Role::Searchbox),
            "text" | "password" | "email" | "number" | "" => Some(Role::Textbox),
            "checkbox" => Some(Role::Checkbox),
            "radio" => Some(Role::Radio),
            _ => None,
        },
        "select" => Some(Role::Combobox),
        "option" => Some(Role::Option),
        "textarea" => Some(Role::Textbox),
        "img" => Some(Role::Img),
        "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => Some(Role::Heading),
        "li" => Some(Role::ListItem),
        "tr" => Some(Role::Row),
        "td" => Some(Role::Cell),
        _ => None,
    }
}

/// First non-empty of aria-label, alt, descendant text, value.
fn accessible_name(node: &DomNode) -> String {
    for v in [node.attr("aria-label"), node.attr("alt")].into_iter().flatten() {
        let v = collapse_ws(v);
        if !v.is_empty() {
            return v;
        }
    }
    let text = node.descendant_text();
    if !text.is_empty() {
        return text;
    }
    node.attr("value").map(collapse_ws).unwrap_or_default()
}

const PROPERTY_KEYS: &[&str] = &["focused", "required", "checked", "expanded", "disabled"];

fn collect_properties(node: &DomNode) -> Vec<(String, String)> {
    let mut props = Vec::new();
    for &key in PROPERTY_KEYS {
        let raw = node
            .attr(key)
            .or_else(|| node.attr(&format!("aria-{key}")));
        if let Some(raw) = raw {
            let value = if raw.eq_ignore_ascii_case("false") {
                "False"
            } else {
                "True"
            };
            props.push((key.to_string(), value.to_string()));
        }
    }
    props
}

/// Render one line per node: indentation, `[id] role 'name'`, properties.
pub fn render_axtree(tree: &AxTree) -> String {
    let mut lines = Vec::with_capacity(tree.nodes.len());
    for node in &tree.nodes {
        let mut line = format!(
            "{}[{}] {} '{}'",
            "  ".repeat(node.depth),
            node.id,
            node.role,
            node.name
        );
        for (key, value) in &node.properties {
            line.push_str(&format!(" {key}: {value}"));
        }
        lines.push(line);
    }
    lines.join("\n")
}

/// Look up a node by its per-observation element ID.
pub fn resolve_element(tree: &AxTree, id: u32) -> Result<&AxNode, UnknownElement> {
    tree.nodes
        .iter()
        .find(|n| n.id == id)
        .ok_or(UnknownElement(id))
}

pub(crate) fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shop_snapshot() -> DomSnapshot {
        parse_html(
            "<html><head><title>Shop</title></head><body>\
             <a href=\"/cart\">Cart</a><button>Add to Cart</button></body></html>",
            "http://shop.sim/",
        )
    }

    #[test]
    fn derive_filters_and_numbers() {
        let tree = derive_axtree(&shop_snapshot(), Viewport::default());
        let rendered = render_axtree(&tree);
        assert_eq!(
            rendered,
            "[1] RootWebArea 'Shop'\n  [2] link 'Cart'\n  [3] button 'Add to Cart'"
        );
    }

    #[test]
    fn empty_snapshot_is_root_only() {
        let snap = parse_html("", "http://x/");
        let tree = derive_axtree(&snap, Viewport::default());
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(render_axtree(&tree), "[1] RootWebArea ''");
    }

    #[test]
    fn clipping_keeps_full_tree_ids() {
        let tree = derive_axtree(
            &shop_snapshot(),
            Viewport {
                offset: 1,
                limit: Some(1),
            },
        );
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.nodes[0].id, 2);
        assert_eq!(tree.nodes[0].role, Role::Link);
        assert_eq!(tree.total_nodes, 3);
    }

    #[test]
    fn render_example_lines() {
        let tree = AxTree {
            nodes: vec![AxNode {
                id: 1757,
                role: Role::Button,
                name: "Add to Cart".into(),
                properties: vec![],
                depth: 1,
                dom_path: vec![],
            }],
            window: Viewport::default(),
            total_nodes: 1,
        };
        assert_eq!(render_axtree(&tree), "  [1757] button 'Add to Cart'");

        let tree = AxTree {
            nodes: vec![AxNode {
                id: 164,
                role: Role::Textbox,
                name: "Search".into(),
                properties: vec![
                    ("focused".into(), "True".into()),
                    ("required".into(), "False".into()),
                ],
                depth: 0,
                dom_path: vec![],
            }],
            window: Viewport::default(),
            total_nodes: 1,
        };
        assert_eq!(
            render_axtree(&tree),
            "[164] textbox 'Search' focused: True required: False"
        );
    }

    #[test]
    fn empty_tree_renders_empty() {
        let tree = AxTree {
            nodes: vec![],
            window: Viewport::default(),
            total_nodes: 0,
        };
        assert_eq!(render_axtree(&tree), "");
    }

    #[test]
    fn resolve_hits_and_misses() {
        let tree = derive_axtree(&shop_snapshot(), Viewport::default());
        assert_eq!(resolve_element(&tree, 3).unwrap().name, "Add to Cart");
        assert_eq!(resolve_element(&tree, 0).unwrap_err(), UnknownElement(0));
        assert_eq!(resolve_element(&tree, 4).unwrap_err(), UnknownElement(4));
    }

    #[test]
    fn ids_are_dense_preorder() {
        let snap = parse_html(
            "<div><span>text</span><ul><li>a</li><li><a href='/x'>lnk</a></li></ul></div>",
            "http://x/",
        );
        let tree = derive_axtree(&snap, Viewport::default());
        let ids: Vec<u32> = tree.nodes.iter().map(|n| n.id).collect();
        assert_eq!(ids, (1..=tree.nodes.len() as u32).collect::<Vec<_>>());
        // Pre-order consistency: sorting by id preserves document order.
        let paths: Vec<&Vec<usize>> = tree.nodes.iter().map(|n| &n.dom_path).collect();
        let mut sorted = paths.clone();
        sorted.sort();
        // Root path is a prefix of everything; document order == path order here
        // because StaticText wrappers reuse their origin node's path.
        assert_eq!(paths[0], &Vec::<usize>::new());
        assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn properties_from_attributes() {
        let snap = parse_html(
            "<input type='text' aria-label='Search' focused='true' required='false'>",
            "http://x/",
        );
        let tree = derive_axtree(&snap, Viewport::default());
        assert_eq!(
            tree.nodes[1].properties,
            vec![
                ("focused".to_string(), "True".to_string()),
                ("required".to_string(), "False".to_string())
            ]
        );
    }
}
