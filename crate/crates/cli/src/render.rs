//! Text, JSON and DOT renderings of command results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use decprov_core::query::{
    DecisionPipeline, Direction, ErasureReport, FlowFinding, InventoryEntry, NodeView, PipelineEdge, Relation, UNBOUNDED,
};
use decprov_core::store::LogVerification;
use decprov_core::{ChainStatus, Federation, NodeKind, QualifiedId, Resolution};
use serde::Serialize;

/// ANSI styling, enabled or not.
#[derive(Debug, Clone, Copy)]
pub struct Style {
    pub color: bool,
}

impl Style {
    fn paint(self, text: &str, code: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    pub fn bold(self, text: &str) -> String {
        self.paint(text, "1")
    }

    pub fn dim(self, text: &str) -> String {
        self.paint(text, "2")
    }

    pub fn good(self, text: &str) -> String {
        self.paint(text, "32")
    }

    pub fn warn(self, text: &str) -> String {
        self.paint(text, "33")
    }

    pub fn bad(self, text: &str) -> String {
        self.paint(text, "31")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("reports always serialize");
    out.push('\n');
    out
}

#[derive(Debug, Serialize)]
pub struct GraphNode {
    pub id: QualifiedId,
    #[serde(flatten)]
    pub view: NodeView,
}

/// A renderable subgraph: a query pipeline or a whole federation.
#[derive(Debug, Serialize)]
pub struct Graph {
    pub name: String,
    pub requesting_domain: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<QualifiedId>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<PipelineEdge>,
}

impl Graph {
    pub fn from_pipeline(p: &DecisionPipeline) -> Self {
        Graph {
            name: format!("{} of {}", direction_name(p.direction), p.root),
            requesting_domain: p.requesting_domain.clone(),
            root: Some(p.root.clone()),
            nodes: p
                .nodes
                .iter()
                .map(|n| GraphNode {
                    id: n.id.clone(),
                    view: n.view.clone(),
                })
                .collect(),
            edges: p.edges.clone(),
        }
    }

    /// Every node and relation in the federation, as `requester` sees it.
    pub fn whole(federation: &Federation, requester: &str) -> Self {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for store in federation.stores() {
            for node in store.nodes() {
                let view = match federation.resolve(&node.id, requester) {
                    Resolution::Full(n) => NodeView::Full(n.clone()),
                    Resolution::Redacted { kind, .. } => NodeView::Redacted(kind),
                    Resolution::Unresolvable(_) => NodeView::Unresolvable,
                };
                if let Some(original) = node.alias_of() {
                    edges.push(PipelineEdge {
                        source: node.id.clone(),
                        target: original,
                        relation: Relation::AliasOf,
                    });
                }
                nodes.push(GraphNode {
                    id: node.id.clone(),
                    view,
                });
            }
            for e in store.edges() {
                edges.push(PipelineEdge {
                    source: e.source.clone(),
                    target: e.target.clone(),
                    relation: Relation::Edge(e.kind),
                });
            }
        }
        edges.sort();
        Graph {
            name: "federation".into(),
            requesting_domain: requester.to_string(),
            root: None,
            nodes,
            edges,
        }
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Backward => "lineage",
        Direction::Forward => "impact",
    }
}

fn dot_escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

fn shape(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Entity => "ellipse",
        NodeKind::Activity => "box",
        NodeKind::Agent => "house",
    }
}

/// DOT text with one cluster per domain. Nodes are labelled
/// `id\nkind:node_type`; redacted nodes are dashed.
pub fn dot(graph: &Graph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", dot_escape(&graph.name));
    out.push_str("  rankdir=RL;\n");
    out.push_str("  node [fontname=\"Helvetica\", fontsize=10];\n");
    out.push_str("  edge [fontname=\"Helvetica\", fontsize=9];\n");
    let mut by_domain: BTreeMap<&str, Vec<&GraphNode>> = BTreeMap::new();
    for n in &graph.nodes {
        by_domain.entry(n.id.domain()).or_default().push(n);
    }
    for (domain, nodes) in by_domain {
        let _ = writeln!(out, "  subgraph \"cluster_{}\" {{", dot_escape(domain));
        let _ = writeln!(out, "    label=\"{}\";", dot_escape(domain));
        for n in nodes {
            let id = dot_escape(&n.id.to_string());
            let (label, attrs) = match &n.view {
                NodeView::Full(node) => (
                    format!("{id}\\n{}", dot_escape(&format!("{}:{}", node.kind, node.node_type))),
                    format!("shape={}", shape(node.kind)),
                ),
                NodeView::Redacted(kind) => (format!("{id}\\n{kind}:redacted"), format!("shape={}, style=dashed", shape(*kind))),
                NodeView::Unresolvable => (format!("{id}\\nunresolvable"), "shape=plaintext, style=dotted".to_string()),
            };
            let emphasis = if graph.root.as_ref() == Some(&n.id) { ", penwidth=2" } else { "" };
            let _ = writeln!(out, "    \"{id}\" [label=\"{label}\", {attrs}{emphasis}];");
        }
        out.push_str("  }\n");
    }
    for e in &graph.edges {
        let style = if e.relation == Relation::AliasOf { ", style=dotted" } else { "" };
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [label=\"{}\"{style}];",
            dot_escape(&e.source.to_string()),
            dot_escape(&e.target.to_string()),
            e.relation.as_str()
        );
    }
    out.push_str("}\n");
    out
}

fn view_columns(view: &NodeView, style: Style) -> (String, String) {
    match view {
        NodeView::Full(n) => (n.kind.to_string(), n.node_type.clone()),
        NodeView::Redacted(kind) => (kind.to_string(), style.dim("(redacted)")),
        NodeView::Unresolvable => ("?".into(), style.warn("(unresolvable)")),
    }
}

fn edge_lines(out: &mut String, edges: &[PipelineEdge]) {
    let _ = writeln!(out, "edges ({}):", edges.len());
    for e in edges {
        let _ = writeln!(out, "  {} --{}--> {}", e.source, e.relation.as_str(), e.target);
    }
}

pub fn pipeline_text(p: &DecisionPipeline, depth: usize, style: Style) -> String {
    let mut out = String::new();
    let limit = if depth == UNBOUNDED { "unbounded".to_string() } else { depth.to_string() };
    let header = format!(
        "{} of {} as {}: {} nodes in {} domains (depth limit {limit})",
        direction_name(p.direction),
        p.root,
        p.requesting_domain,
        p.nodes.len(),
        p.domains().len()
    );
    let _ = writeln!(out, "{}", style.bold(&header));
    let width = p.nodes.iter().map(|n| n.id.to_string().len()).max().unwrap_or(0);
    for n in &p.nodes {
        let (kind, node_type) = view_columns(&n.view, style);
        let _ = writeln!(out, "  {:>3}  {:<width$}  {:<8}  {node_type}", n.depth, n.id.to_string(), kind);
    }
    edge_lines(&mut out, &p.edges);
    if !p.agents.is_empty() {
        out.push_str("agents:\n");
        for a in &p.agents {
            let _ = writeln!(out, "  {} ({}, depth {})", a.id, a.node_type, a.depth);
        }
    }
    if p.truncated {
        let _ = writeln!(out, "{}", style.warn("truncated: the depth limit cut the traversal or some nodes were unresolvable"));
    }
    out
}

pub fn graph_text(g: &Graph, style: Style) -> String {
    let mut out = String::new();
    let header = format!("{} as {}: {} nodes", g.name, g.requesting_domain, g.nodes.len());
    let _ = writeln!(out, "{}", style.bold(&header));
    let width = g.nodes.iter().map(|n| n.id.to_string().len()).max().unwrap_or(0);
    for n in &g.nodes {
        let (kind, node_type) = view_columns(&n.view, style);
        let _ = writeln!(out, "  {:<width$}  {:<8}  {node_type}", n.id.to_string(), kind);
    }
    edge_lines(&mut out, &g.edges);
    out
}

fn braces(items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let items: Vec<String> = items.into_iter().map(|s| s.as_ref().to_string()).collect();
    format!("{{{}}}", items.join(","))
}

#[derive(Serialize)]
pub struct InventoryReport<'a> {
    pub data_subject: &'a str,
    pub requesting_domain: &'a str,
    pub entities: &'a [InventoryEntry],
}

pub fn inventory_text(r: &InventoryReport<'_>, style: Style) -> String {
    let mut out = String::new();
    let header = format!("inventory of {} as {}: {} entities", r.data_subject, r.requesting_domain, r.entities.len());
    let _ = writeln!(out, "{}", style.bold(&header));
    for e in r.entities {
        let _ = writeln!(out, "  {}  {}  purpose {}", e.id, e.node_type, braces(&e.purpose));
        if !e.alias_ancestors.is_empty() {
            let _ = writeln!(out, "      copy of: {}", braces(e.alias_ancestors.iter().map(|i| i.to_string())));
        }
        if !e.alias_descendants.is_empty() {
            let _ = writeln!(out, "      copies: {}", braces(e.alias_descendants.iter().map(|i| i.to_string())));
        }
    }
    out
}

pub fn erasure_text(r: &ErasureReport, style: Style) -> String {
    let mut out = String::new();
    let header = format!(
        "erasure set for {}: {} entities in {} domains",
        r.data_subject,
        r.targets.len(),
        r.domains().len()
    );
    let _ = writeln!(out, "{}", style.bold(&header));
    for id in &r.targets {
        let _ = writeln!(out, "  {id}");
    }
    let _ = writeln!(out, "frontier ({} activities used these entities):", r.frontier.len());
    for id in &r.frontier {
        let _ = writeln!(out, "  {id}");
    }
    out
}

#[derive(Serialize)]
pub struct FlowReport<'a> {
    pub declared: usize,
    pub observed: usize,
    pub unexpected: &'a [FlowFinding],
}

pub fn flows_text(r: &FlowReport<'_>, style: Style) -> String {
    let mut out = String::new();
    let header = format!(
        "{} transfers observed, {} unexpected ({} declared flows)",
        r.observed,
        r.unexpected.len(),
        r.declared
    );
    let _ = writeln!(out, "{}", style.bold(&header));
    for f in r.unexpected {
        let via = f.transfer_activity.as_ref().map(|a| format!(" via {a}")).unwrap_or_default();
        let line = format!("  t{}  {} -> {}  {}{via}", f.at, f.source, f.alias, f.node_type);
        let _ = writeln!(out, "{}", style.warn(&line));
    }
    out
}

#[derive(Serialize)]
pub struct StoreCheck {
    pub domain: String,
    pub file: String,
    pub records: usize,
    /// Position of the first corrupt record, if any.
    pub first_corrupt: Option<usize>,
}

impl StoreCheck {
    pub fn new(file: String, v: LogVerification) -> Self {
        let first_corrupt = match v.status {
            ChainStatus::Ok => None,
            ChainStatus::FirstCorrupt(pos) => Some(pos),
        };
        StoreCheck {
            domain: v.domain,
            file,
            records: v.records,
            first_corrupt,
        }
    }
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub stores: Vec<StoreCheck>,
}

pub fn verify_text(r: &VerifyReport, style: Style) -> String {
    let mut out = String::new();
    for s in &r.stores {
        let status = match s.first_corrupt {
            None => style.good("ok"),
            Some(pos) => style.bad(&format!("CORRUPT at record {pos} (line {})", pos + 2)),
        };
        let _ = writeln!(out, "{}  {status}  {} records  {}", s.domain, s.records, s.file);
    }
    let corrupt = r.stores.iter().filter(|s| s.first_corrupt.is_some()).count();
    let _ = writeln!(out, "{} stores, {corrupt} corrupt", r.stores.len());
    out
}
