//! Per-domain append-only provenance logs and the federation that joins them.
//!
//! Each [`ProvStore`] is a SHA-256 hash chain over canonically serialized
//! records. Edges are log records in their own right, so the chain covers
//! relations as well as data. A [`Federation`] registers stores by domain and
//! resolves identifiers across them under a per-store visibility level.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{self, canonical_serialize, ModelError, NodeKind, ProvEdge, ProvNode, QualifiedId, Record};

pub type Hash = [u8; 32];

/// Chain seed: SHA-256 of `decprov-log genesis`.
pub fn genesis() -> Hash {
    Sha256::digest(b"decprov-log genesis").into()
}

fn chain_step(prev: &Hash, bytes: &[u8]) -> Hash {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(bytes);
    h.finalize().into()
}

pub const LOG_FORMAT: &str = "decprov-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("validation failed: {0}")]
    ValidationFailed(#[from] ModelError),
    #[error("record {record} belongs to domain {record_domain:?}, store is {store_domain:?}")]
    WrongDomain {
        record: String,
        record_domain: String,
        store_domain: String,
    },
    #[error("duplicate node id {0}")]
    DuplicateNode(QualifiedId),
    #[error("dangling reference to {0}")]
    DanglingReference(QualifiedId),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("chain mismatch at line {line}")]
    ChainMismatch { line: usize },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Outcome of recomputing a hash chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "position")]
pub enum ChainStatus {
    Ok,
    FirstCorrupt(usize),
}

#[derive(Debug, Clone)]
pub struct ProvStore {
    domain: String,
    records: Vec<Record>,
    hashes: Vec<Hash>,
    nodes: HashMap<QualifiedId, usize>,
    out_edges: HashMap<QualifiedId, Vec<usize>>,
    // Keyed by target, which may live in another domain.
    in_edges: HashMap<QualifiedId, Vec<usize>>,
    // alias_of target -> positions of local alias nodes.
    aliases: HashMap<QualifiedId, Vec<usize>>,
}

impl ProvStore {
    pub fn new(domain: &str) -> Result<Self, StoreError> {
        model::validate_domain(domain)?;
        Ok(Self {
            domain: domain.to_string(),
            records: Vec::new(),
            hashes: Vec::new(),
            nodes: HashMap::new(),
            out_edges: HashMap::new(),
            in_edges: HashMap::new(),
            aliases: HashMap::new(),
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn hashes(&self) -> &[Hash] {
        &self.hashes
    }

    pub fn head_hash(&self) -> Hash {
        self.hashes.last().copied().unwrap_or_else(genesis)
    }

    pub fn node(&self, id: &QualifiedId) -> Option<&ProvNode> {
        self.nodes.get(id).and_then(|&pos| self.records[pos].as_node())
    }

    pub fn contains(&self, id: &QualifiedId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn position_of(&self, id: &QualifiedId) -> Option<usize> {
        self.nodes.get(id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ProvNode> {
        self.records.iter().filter_map(Record::as_node)
    }

    pub fn edges(&self) -> impl Iterator<Item = &ProvEdge> {
        self.records.iter().filter_map(Record::as_edge)
    }

    /// Edges whose source is `id`.
    pub fn out_edges(&self, id: &QualifiedId) -> impl Iterator<Item = &ProvEdge> {
        self.edges_at(self.out_edges.get(id))
    }

    /// Edges in this store whose target is `id` (local or foreign).
    pub fn in_edges(&self, id: &QualifiedId) -> impl Iterator<Item = &ProvEdge> {
        self.edges_at(self.in_edges.get(id))
    }

    /// Local alias nodes whose `alias_of` is `id`.
    pub fn aliases_of(&self, id: &QualifiedId) -> impl Iterator<Item = &ProvNode> {
        self.aliases
            .get(id)
            .into_iter()
            .flatten()
            .filter_map(|&p| self.records[p].as_node())
    }

    fn edges_at<'a>(&'a self, positions: Option<&'a Vec<usize>>) -> impl Iterator<Item = &'a ProvEdge> {
        positions
            .into_iter()
            .flatten()
            .filter_map(|&p| self.records[p].as_edge())
    }

    fn kind_of(&self, id: &QualifiedId, pending: &[Record]) -> Option<NodeKind> {
        self.node(id).map(|n| n.kind).or_else(|| {
            pending
                .iter()
                .filter_map(Record::as_node)
                .find(|n| &n.id == id)
                .map(|n| n.kind)
        })
    }

    /// Checks `record` against the store as if `pending` had already been appended.
    fn check(&self, record: &Record, pending: &[Record]) -> Result<(), StoreError> {
        match record {
            Record::Node(node) => {
                if node.id.domain() != self.domain {
                    return Err(StoreError::WrongDomain {
                        record: node.id.to_string(),
                        record_domain: node.id.domain().to_string(),
                        store_domain: self.domain.clone(),
                    });
                }
                node.validate()?;
                if self.kind_of(&node.id, pending).is_some() {
                    return Err(StoreError::DuplicateNode(node.id.clone()));
                }
            }
            Record::Edge(edge) => {
                let source_kind = self
                    .kind_of(&edge.source, pending)
                    .ok_or_else(|| StoreError::DanglingReference(edge.source.clone()))?;
                if edge.target.domain() == self.domain {
                    let target_kind = self
                        .kind_of(&edge.target, pending)
                        .ok_or_else(|| StoreError::DanglingReference(edge.target.clone()))?;
                    model::validate_edge(edge, source_kind, target_kind)?;
                } else if source_kind != edge.kind.endpoints().0 {
                    // Foreign target kinds are checked by the capture layer when resolvable.
                    let (s, t) = edge.kind.endpoints();
                    return Err(ModelError::KindConstraintViolation {
                        edge: edge.kind,
                        expected_source: s,
                        expected_target: t,
                        source_kind,
                        target_kind: t,
                    }
                    .into());
                }
            }
        }
        Ok(())
    }

    /// Validates a record without appending it.
    pub fn validate(&self, record: &Record) -> Result<(), StoreError> {
        self.check(record, &[])
    }

    /// Appends one record, returning its position and the new head hash.
    pub fn append(&mut self, record: Record) -> Result<(usize, Hash), StoreError> {
        self.check(&record, &[])?;
        Ok(self.push_unchecked(record))
    }

    /// Validates a batch as if appended in order, without appending.
    pub fn check_all(&self, records: &[Record]) -> Result<(), StoreError> {
        for (i, r) in records.iter().enumerate() {
            self.check(r, &records[..i])?;
        }
        Ok(())
    }

    /// Appends all records or none of them.
    pub fn append_all(&mut self, records: Vec<Record>) -> Result<Vec<usize>, StoreError> {
        self.check_all(&records)?;
        Ok(records.into_iter().map(|r| self.push_unchecked(r).0).collect())
    }

    fn push_unchecked(&mut self, record: Record) -> (usize, Hash) {
        let pos = self.records.len();
        let hash = chain_step(&self.head_hash(), &canonical_serialize(&record));
        match &record {
            Record::Node(n) => {
                self.nodes.insert(n.id.clone(), pos);
                if let Some(target) = n.alias_of() {
                    self.aliases.entry(target).or_default().push(pos);
                }
            }
            Record::Edge(e) => {
                self.out_edges.entry(e.source.clone()).or_default().push(pos);
                self.in_edges.entry(e.target.clone()).or_default().push(pos);
            }
        }
        self.records.push(record);
        self.hashes.push(hash);
        (pos, hash)
    }

    /// Recomputes the chain over the in-memory records.
    pub fn verify_chain(&self) -> ChainStatus {
        let mut prev = genesis();
        for (pos, (record, stored)) in self.records.iter().zip(&self.hashes).enumerate() {
            let h = chain_step(&prev, &canonical_serialize(record));
            if &h != stored {
                return ChainStatus::FirstCorrupt(pos);
            }
            prev = h;
        }
        ChainStatus::Ok
    }

    /// Writes the store in the line-oriented log format.
    pub fn export<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = LogHeader {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            domain: self.domain.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (seq, (record, hash)) in self.records.iter().zip(&self.hashes).enumerate() {
            out.write_all(&render_line(seq, hash, record))?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn export_to_vec(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.export(&mut buf).expect("writing to memory");
        buf
    }

    /// Rebuilds a store from its log form, re-validating every record and
    /// checking each declared hash against the recomputed chain.
    pub fn import<R: BufRead>(input: R) -> Result<Self, StoreError> {
        let mut lines = input.lines();
        let header_line = match lines.next() {
            Some(line) => line?,
            None => {
                return Err(StoreError::MalformedRecord {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        };
        let header = parse_header(&header_line)?;
        let mut store = ProvStore::new(&header.domain).map_err(|e| StoreError::MalformedRecord {
            line: 1,
            reason: e.to_string(),
        })?;
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            let malformed = |reason: String| StoreError::MalformedRecord { line: line_no, reason };
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            if parsed.seq != idx {
                return Err(malformed(format!("expected seq {idx}, found {}", parsed.seq)));
            }
            let declared = decode_hash(&parsed.hash).ok_or_else(|| malformed("bad hash encoding".into()))?;
            let record: Record = serde_json::from_str(parsed.record.get()).map_err(|e| malformed(e.to_string()))?;
            let (_, computed) = match store.append(record) {
                Ok(r) => r,
                Err(StoreError::ValidationFailed(e)) => return Err(malformed(e.to_string())),
                Err(e @ (StoreError::DanglingReference(_) | StoreError::DuplicateNode(_) | StoreError::WrongDomain { .. })) => {
                    return Err(malformed(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            if computed != declared {
                return Err(StoreError::ChainMismatch { line: line_no });
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    format: String,
    version: u32,
    domain: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine<'a> {
    seq: usize,
    hash: String,
    #[serde(borrow)]
    record: &'a RawValue,
}

fn parse_header(line: &str) -> Result<LogHeader, StoreError> {
    let malformed = |reason: String| StoreError::MalformedRecord { line: 1, reason };
    let header: LogHeader = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(malformed(format!("unsupported format {} v{}", header.format, header.version)));
    }
    Ok(header)
}

fn render_line(seq: usize, hash: &Hash, record: &Record) -> Vec<u8> {
    render_canonical_line(seq, hash, &canonical_serialize(record))
}

fn render_canonical_line(seq: usize, hash: &Hash, canonical: &[u8]) -> Vec<u8> {
    let mut line = format!("{{\"seq\":{seq},\"hash\":\"{}\",\"record\":", hex::encode(hash)).into_bytes();
    line.extend_from_slice(canonical);
    line.push(b'}');
    line
}

fn decode_hash(text: &str) -> Option<Hash> {
    if text.len() != 64 || text.bytes().any(|b| b.is_ascii_uppercase()) {
        return None;
    }
    hex::decode(text).ok()?.try_into().ok()
}

/// Result of verifying a persisted log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogVerification {
    pub domain: String,
    pub records: usize,
    pub status: ChainStatus,
}

/// Verifies a persisted log byte-for-byte.
///
/// Every record line must be exactly the canonical rendering of its own
/// parsed content, carry the expected sequence number, and hash correctly
/// against its predecessor. The first line failing any of these checks is
/// reported as `FirstCorrupt(position)`. Only an unreadable header is an
/// error. A truncated tail verifies as `Ok`; detecting truncation needs an
/// externally pinned head hash.
pub fn verify_log(bytes: &[u8]) -> Result<LogVerification, StoreError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let mut lines = body.split(|&b| b == b'\n');
    let header_bytes = lines.next().unwrap_or_default();
    let header_text = std::str::from_utf8(header_bytes).map_err(|e| StoreError::MalformedRecord {
        line: 1,
        reason: e.to_string(),
    })?;
    let header = parse_header(header_text)?;
    let mut prev = genesis();
    let mut count = 0;
    for (pos, raw) in lines.enumerate() {
        count = pos + 1;
        match check_line(pos, raw, &prev) {
            Some(h) => prev = h,
            None => {
                return Ok(LogVerification {
                    domain: header.domain,
                    records: pos,
                    status: ChainStatus::FirstCorrupt(pos),
                })
            }
        }
    }
    Ok(LogVerification {
        domain: header.domain,
        records: count,
        status: ChainStatus::Ok,
    })
}

fn check_line(pos: usize, raw: &[u8], prev: &Hash) -> Option<Hash> {
    let text = std::str::from_utf8(raw).ok()?;
    let parsed: LogLine = serde_json::from_str(text).ok()?;
    let record: Record = serde_json::from_str(parsed.record.get()).ok()?;
    let declared = decode_hash(&parsed.hash)?;
    let canonical = canonical_serialize(&record);
    let computed = chain_step(prev, &canonical);
    (computed == declared && render_canonical_line(pos, &declared, &canonical) == raw).then_some(computed)
}

/// Verifies several logs concurrently, one thread per log. Results are in
/// input order.
pub fn verify_logs(logs: &[&[u8]]) -> Vec<Result<LogVerification, StoreError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = logs.iter().map(|bytes| scope.spawn(move || verify_log(bytes))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("verification thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Visibility {
    #[default]
    Full,
    AgentsOnly,
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Visibility::Full => "full",
            Visibility::AgentsOnly => "agents-only",
        })
    }
}

/// Requesting principal that always sees full nodes.
pub const REGULATOR: &str = "regulator";

/// What a requester gets back for an identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution<'a> {
    Full(&'a ProvNode),
    Redacted { id: QualifiedId, kind: NodeKind },
    Unresolvable(QualifiedId),
}

#[derive(Debug, Clone, Default)]
pub struct Federation {
    stores: BTreeMap<String, ProvStore>,
    visibility: BTreeMap<String, Visibility>,
}

impl Federation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a store, replacing any previous store for the same domain.
    pub fn add_store(&mut self, store: ProvStore, visibility: Visibility) {
        self.visibility.insert(store.domain.clone(), visibility);
        self.stores.insert(store.domain.clone(), store);
    }

    /// Creates an empty store for `domain` if none exists.
    pub fn ensure_store(&mut self, domain: &str, visibility: Visibility) -> Result<&mut ProvStore, StoreError> {
        if !self.stores.contains_key(domain) {
            self.add_store(ProvStore::new(domain)?, visibility);
        }
        Ok(self.stores.get_mut(domain).expect("just inserted"))
    }

    pub fn set_visibility(&mut self, domain: &str, visibility: Visibility) {
        if self.stores.contains_key(domain) {
            self.visibility.insert(domain.to_string(), visibility);
        }
    }

    pub fn visibility(&self, domain: &str) -> Option<Visibility> {
        self.visibility.get(domain).copied()
    }

    pub fn store(&self, domain: &str) -> Option<&ProvStore> {
        self.stores.get(domain)
    }

    pub fn store_mut(&mut self, domain: &str) -> Option<&mut ProvStore> {
        self.stores.get_mut(domain)
    }

    /// Stores in ascending domain order.
    pub fn stores(&self) -> impl Iterator<Item = &ProvStore> {
        self.stores.values()
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.stores.keys().map(String::as_str)
    }

    pub fn record_count(&self) -> usize {
        self.stores.values().map(ProvStore::len).sum()
    }

    /// Unredacted node lookup across all stores.
    pub fn node(&self, id: &QualifiedId) -> Option<&ProvNode> {
        self.stores.get(id.domain())?.node(id)
    }

    pub fn out_edges<'a>(&'a self, id: &'a QualifiedId) -> impl Iterator<Item = &'a ProvEdge> + 'a {
        self.stores.get(id.domain()).into_iter().flat_map(move |s| s.out_edges(id))
    }

    /// Edges targeting `id` from any store.
    pub fn in_edges<'a>(&'a self, id: &'a QualifiedId) -> impl Iterator<Item = &'a ProvEdge> + 'a {
        self.stores.values().flat_map(move |s| s.in_edges(id))
    }

    /// Alias nodes of `id` in any store.
    pub fn aliases_of<'a>(&'a self, id: &'a QualifiedId) -> impl Iterator<Item = &'a ProvNode> + 'a {
        self.stores.values().flat_map(move |s| s.aliases_of(id))
    }

    /// Resolves an identifier on behalf of `requesting_domain`.
    ///
    /// The owning domain and the regulator always get the full node. Other
    /// requesters get the full node from `full` stores; from `agents-only`
    /// stores they get Agents in full and a redacted stub (id and kind)
    /// for everything else.
    pub fn resolve(&self, id: &QualifiedId, requesting_domain: &str) -> Resolution<'_> {
        let Some(node) = self.node(id) else {
            return Resolution::Unresolvable(id.clone());
        };
        if requesting_domain == REGULATOR || requesting_domain == id.domain() || node.kind == NodeKind::Agent {
            return Resolution::Full(node);
        }
        match self.visibility(id.domain()).unwrap_or_default() {
            Visibility::Full => Resolution::Full(node),
            Visibility::AgentsOnly => Resolution::Redacted {
                id: id.clone(),
                kind: node.kind,
            },
        }
    }

    /// Every cross-store reference whose target cannot be found, as
    /// (referencing record summary, missing id) pairs.
    pub fn dangling_references(&self) -> Vec<(String, QualifiedId)> {
        let mut out = Vec::new();
        for store in self.stores.values() {
            for record in store.records() {
                let target = match record {
                    Record::Edge(e) if e.target.domain() != store.domain => Some(e.target.clone()),
                    Record::Node(n) => n.alias_of(),
                    Record::Edge(_) => None,
                };
                if let Some(t) = target {
                    if self.node(&t).is_none() {
                        out.push((record.summary(), t));
                    }
                }
            }
        }
        out
    }
}

/// Free-function form of [`Federation::resolve`].
pub fn federated_resolve<'a>(federation: &'a Federation, id: &QualifiedId, requesting_domain: &str) -> Resolution<'a> {
    federation.resolve(id, requesting_domain)
}
