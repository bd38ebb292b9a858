//! Minimal selector engine over parsed page trees.
//!
//! Grammar: compound selectors of `tag`, `#id`, `.class`, `[key=value]`,
//! combined with the descendant combinator (whitespace).

use thiserror::Error;

use crate::observation::DomNode;

#[derive(Debug, Clone, PartialEq, Eq)]
enum SimpleSelector {
    Tag(String),
    Id(String),
    Class(String),
    Attr(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    // Outer-to-inner compound selectors, descendant-combined.
    compounds: Vec<Vec<SimpleSelector>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad selector: {0}")]
pub struct SelectorError(pub String);

impl Selector {
    pub fn parse(input: &str) -> Result<Selector, SelectorError> {
        let mut compounds = Vec::new();
        for part in input.split_whitespace() {
            compounds.push(parse_compound(part)?);
        }
        if compounds.is_empty() {
            return Err(SelectorError("empty selector".to_string()));
        }
        Ok(Selector { compounds })
    }

    /// All matching nodes in document pre-order.
    pub fn select<'a>(&self, root: &'a DomNode) -> Vec<&'a DomNode> {
        let mut out = Vec::new();
        let mut ancestors = Vec::new();
        walk(root, &mut ancestors, &self.compounds, &mut out);
        out
    }

    /// First match, if any.
    pub fn select_first<'a>(&self, root: &'a DomNode) -> Option<&'a DomNode> {
        self.select(root).into_iter().next()
    }
}

fn parse_compound(part: &str) -> Result<Vec<SimpleSelector>, SelectorError> {
    let mut simples = Vec::new();
    let mut rest = part;
    while !rest.is_empty() {
        let (simple, tail) = match rest.as_bytes()[0] {
            b'#' => take_name(&rest[1..], SimpleSelector::Id)?,
            b'.' => take_name(&rest[1..], SimpleSelector::Class)?,
            b'[' => {
                let end = rest
                    .find(']')
                    .ok_or_else(|| SelectorError(format!("unterminated [ in {part}")))?;
                let body = &rest[1..end];
                let (k, v) = body
                    .split_once('=')
                    .ok_or_else(|| SelectorError(format!("expected k=v in {body}")))?;
                let v = v.trim_matches(|c| c == '"' || c == '\'');
                (
                    SimpleSelector::Attr(k.trim().to_string(), v.to_string()),
                    &rest[end + 1..],
                )
            }
            _ => take_name(rest, SimpleSelector::Tag)?,
        };
        simples.push(simple);
        rest = tail;
    }
    if simples.is_empty() {
        return Err(SelectorError("empty compound selector".to_string()));
    }
    Ok(simples)
}

fn take_name(
    rest: &str,
    build: fn(String) -> SimpleSelector,
) -> Result<(SimpleSelector, &str), SelectorError> {
    let end = rest
        .find(['#', '.', '['])
        .unwrap_or(rest.len());
    if end == 0 {
        return Err(SelectorError(format!("empty name in selector near {rest}")));
    }
    Ok((build(rest[..end].to_string()), &rest[end..]))
}

fn matches_compound(node: &DomNode, compound: &[SimpleSelector]) -> bool {
    compound.iter().all(|simple| match simple {
        SimpleSelector::Tag(t) => node.tag == *t,
        SimpleSelector::Id(id) => node.attr("id") == Some(id.as_str()),
        SimpleSelector::Class(c) => node
            .attr("class")
            .map(|classes| classes.split_whitespace().any(|x| x == c))
            .unwrap_or(false),
        SimpleSelector::Attr(k, v) => node.attr(k) == Some(v.as_str()),
    })
}

fn walk<'a>(
    node: &'a DomNode,
    ancestors: &mut Vec<&'a DomNode>,
    compounds: &[Vec<SimpleSelector>],
    out: &mut Vec<&'a DomNode>,
) {
    if matches_compound(node, compounds.last().unwrap())
        && ancestors_satisfy(ancestors, &compounds[..compounds.len() - 1])
    {
        out.push(node);
    }
    ancestors.push(node);
    for child in &node.children {
        walk(child, ancestors, compounds, out);
    }
    ancestors.pop();
}

// Descendant-only combinators: match remaining compounds greedily from the
// innermost ancestor outward.
fn ancestors_satisfy(ancestors: &[&DomNode], compounds: &[Vec<SimpleSelector>]) -> bool {
    let mut remaining = compounds.len();
    for node in ancestors.iter().rev() {
        if remaining == 0 {
            break;
        }
        if matches_compound(node, &compounds[remaining - 1]) {
            remaining -= 1;
        }
    }
    remaining == 0
}
