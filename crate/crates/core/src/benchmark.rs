//! Session-partitioned lifelong retrieval data: a synthetic drift
//! generator plus string-level parsers for externally prepared corpora.
//!
//! The generator builds one domain-tagged corpus from per-domain topic
//! vocabularies mixed with a shared background vocabulary, then splits it
//! into an initial collection and upcoming sessions. Two kinds of domains
//! drive the drift: common domains emerge evenly over time, while each
//! upcoming session is dominated by one booming domain. Labeled training
//! pairs exist only for the initial session; every training positive also
//! spawns paraphrase documents (token dropout plus synonym substitution)
//! that land in future sessions as unlabeled positives. Dev and test
//! queries of a session are linked to documents present by that session.
//!
//! File formats are line-based: corpus rows are tab-separated
//! `(doc_id, domain, text)`, qrels rows follow the classic
//! `(query_id, 0, doc_id, 1)` convention.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::{DocId, QueryId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchmarkError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("domain {domain} needs {needed} documents but only {available} are configured")]
    RatioDeficit {
        domain: String,
        needed: u64,
        available: u64,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate document id {0}")]
    DuplicateDoc(DocId),
    #[error("duplicate query id {0}")]
    DuplicateQuery(QueryId),
    #[error("document {0} has no tokens")]
    EmptyDocument(DocId),
    #[error("qrels reference unknown or future documents: {0:?}")]
    DanglingQrels(Vec<(QueryId, DocId)>),
    #[error("query {0} has no relevant documents")]
    MissingRelevant(QueryId),
    #[error("training labels outside the initial session (session {0})")]
    TrainOutsideInitial(u32),
}

/// One corpus document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    pub domain: String,
    pub tokens: Vec<String>,
}

/// One query with its text tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: QueryId,
    pub tokens: Vec<String>,
}

/// Queries plus their relevance judgments for one split of one session.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub qrels: BTreeMap<QueryId, BTreeSet<DocId>>,
}

impl QuerySet {
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// One session: the document delta that arrived plus its query splits.
/// The train split is populated only for session 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionData {
    pub index: u32,
    pub documents: Vec<Document>,
    pub train: QuerySet,
    pub dev: QuerySet,
    pub test: QuerySet,
}

/// Ordered sessions 0..=T.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionStream {
    pub sessions: Vec<SessionData>,
}

impl SessionStream {
    /// Highest session index (`T`).
    pub fn t_max(&self) -> usize {
        self.sessions.len() - 1
    }

    pub fn session(&self, t: usize) -> &SessionData {
        &self.sessions[t]
    }

    pub fn train_set(&self) -> &QuerySet {
        &self.sessions[0].train
    }

    pub fn total_docs(&self) -> usize {
        self.sessions.iter().map(|s| s.documents.len()).sum()
    }

    /// Referential integrity: unique ids, non-empty documents, labels only
    /// in session 0, and every judged document present by its session.
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let mut known_docs: BTreeSet<&DocId> = BTreeSet::new();
        let mut known_queries: BTreeSet<&QueryId> = BTreeSet::new();
        for (t, session) in self.sessions.iter().enumerate() {
            for doc in &session.documents {
                if doc.tokens.is_empty() {
                    return Err(BenchmarkError::EmptyDocument(doc.id.clone()));
                }
                if !known_docs.insert(&doc.id) {
                    return Err(BenchmarkError::DuplicateDoc(doc.id.clone()));
                }
            }
            if t > 0 && !session.train.is_empty() {
                return Err(BenchmarkError::TrainOutsideInitial(session.index));
            }
            for set in [&session.train, &session.dev, &session.test] {
                let mut dangling = Vec::new();
                for q in &set.queries {
                    if !known_queries.insert(&q.id) {
                        return Err(BenchmarkError::DuplicateQuery(q.id.clone()));
                    }
                    match set.qrels.get(&q.id) {
                        None => return Err(BenchmarkError::MissingRelevant(q.id.clone())),
                        Some(rel) if rel.is_empty() => {
                            return Err(BenchmarkError::MissingRelevant(q.id.clone()))
                        }
                        Some(rel) => {
                            for d in rel {
                                if !known_docs.contains(d) {
                                    dangling.push((q.id.clone(), d.clone()));
                                }
                            }
                        }
                    }
                }
                if !dangling.is_empty() {
                    return Err(BenchmarkError::DanglingQrels(dangling));
                }
            }
        }
        Ok(())
    }
}

/// Session split shares: which fraction of each domain's documents lands
/// where. A booming domain contributes `initial_booming` to session 0,
/// `later_boom` to its boom session, and `later_rest` to every other
/// upcoming session; common domains contribute `initial_common` and then
/// `later_common` per session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionRatios {
    pub initial_common: f64,
    pub initial_booming: f64,
    pub later_common: f64,
    pub later_boom: f64,
    pub later_rest: f64,
}

impl Default for SessionRatios {
    fn default() -> Self {
        Self {
            initial_common: 0.7,
            initial_booming: 0.4,
            later_common: 0.1,
            later_boom: 0.5,
            later_rest: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub domains: usize,
    pub common_domains: usize,
    pub docs_per_domain: usize,
    pub clusters_per_domain: usize,
    pub cluster_vocab: usize,
    pub background_vocab: usize,
    pub background_mix: f64,
    pub doc_len: usize,
    pub query_len: usize,
    pub train_queries_per_domain: usize,
    pub dev_queries_per_session: usize,
    pub test_queries_per_session: usize,
    /// Upcoming sessions (T); the initial collection is session 0.
    pub sessions: usize,
    /// Paraphrase documents generated per training query and spread over
    /// upcoming sessions as unlabeled positives.
    pub paraphrases_per_query: usize,
    pub paraphrase_dropout: f64,
    pub paraphrase_synonym_rate: f64,
    /// Rate at which query tokens use the synonym form of a document
    /// token; this is the lexical gap a dense retriever must close.
    pub query_synonym_rate: f64,
    /// Relevant documents per query: the source document plus sampled
    /// same-topic documents available by the query's session.
    pub positives_per_query: usize,
    pub ratios: SessionRatios,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            domains: 5,
            common_domains: 2,
            docs_per_domain: 4000,
            clusters_per_domain: 8,
            cluster_vocab: 30,
            background_vocab: 500,
            background_mix: 0.3,
            doc_len: 20,
            query_len: 5,
            train_queries_per_domain: 100,
            dev_queries_per_session: 30,
            test_queries_per_session: 60,
            sessions: 3,
            paraphrases_per_query: 3,
            paraphrase_dropout: 0.3,
            paraphrase_synonym_rate: 0.3,
            query_synonym_rate: 0.5,
            positives_per_query: 4,
            ratios: SessionRatios::default(),
        }
    }
}

impl GeneratorConfig {
    /// Per-domain share of each session; domain roles are fixed by index:
    /// the first `common_domains` are common, booming domains follow in
    /// session order.
    fn share(&self, domain: usize, session: usize) -> f64 {
        let common = domain < self.common_domains;
        let boom_session = if common {
            None
        } else {
            let b = domain - self.common_domains + 1;
            (b <= self.sessions).then_some(b)
        };
        let r = &self.ratios;
        if session == 0 {
            if common {
                r.initial_common
            } else {
                r.initial_booming
            }
        } else if common {
            r.later_common
        } else if boom_session == Some(session) {
            r.later_boom
        } else {
            r.later_rest
        }
    }

    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let bad = |m: &str| Err(BenchmarkError::InvalidConfig(m.to_string()));
        if self.domains < 3 {
            return bad("at least 3 domains required");
        }
        if self.common_domains == 0 || self.common_domains >= self.domains {
            return bad("common_domains must be in 1..domains");
        }
        if self.sessions == 0 {
            return bad("at least 1 upcoming session required");
        }
        if self.docs_per_domain == 0
            || self.clusters_per_domain == 0
            || self.cluster_vocab == 0
            || self.doc_len == 0
            || self.query_len == 0
            || self.positives_per_query == 0
        {
            return bad("sizes must be positive");
        }
        for p in [
            self.background_mix,
            self.paraphrase_dropout,
            self.paraphrase_synonym_rate,
            self.query_synonym_rate,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        for d in 0..self.domains {
            let needed: u64 = (0..=self.sessions)
                .map(|t| (self.share(d, t) * self.docs_per_domain as f64).floor() as u64)
                .sum();
            if needed > self.docs_per_domain as u64 {
                return Err(BenchmarkError::RatioDeficit {
                    domain: domain_name(d),
                    needed,
                    available: self.docs_per_domain as u64,
                });
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment, unknown keys are an
    /// error. Missing keys keep their defaults.
    pub fn from_key_values(text: &str) -> Result<Self, BenchmarkError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| BenchmarkError::Malformed {
                line: lineno + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed("expected key=value".to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            let as_usize = || {
                value
                    .parse::<usize>()
                    .map_err(|_| malformed(format!("bad integer for {key}: {value}")))
            };
            let as_f64 = || {
                value
                    .parse::<f64>()
                    .map_err(|_| malformed(format!("bad number for {key}: {value}")))
            };
            match key {
                "domains" => cfg.domains = as_usize()?,
                "common_domains" => cfg.common_domains = as_usize()?,
                "docs_per_domain" => cfg.docs_per_domain = as_usize()?,
                "clusters_per_domain" => cfg.clusters_per_domain = as_usize()?,
                "cluster_vocab" => cfg.cluster_vocab = as_usize()?,
                "background_vocab" => cfg.background_vocab = as_usize()?,
                "background_mix" => cfg.background_mix = as_f64()?,
                "doc_len" => cfg.doc_len = as_usize()?,
                "query_len" => cfg.query_len = as_usize()?,
                "train_queries_per_domain" => cfg.train_queries_per_domain = as_usize()?,
                "dev_queries_per_session" => cfg.dev_queries_per_session = as_usize()?,
                "test_queries_per_session" => cfg.test_queries_per_session = as_usize()?,
                "sessions" => cfg.sessions = as_usize()?,
                "paraphrases_per_query" => cfg.paraphrases_per_query = as_usize()?,
                "paraphrase_dropout" => cfg.paraphrase_dropout = as_f64()?,
                "paraphrase_synonym_rate" => cfg.paraphrase_synonym_rate = as_f64()?,
                "query_synonym_rate" => cfg.query_synonym_rate = as_f64()?,
                "positives_per_query" => cfg.positives_per_query = as_usize()?,
                "initial_common" => cfg.ratios.initial_common = as_f64()?,
                "initial_booming" => cfg.ratios.initial_booming = as_f64()?,
                "later_common" => cfg.ratios.later_common = as_f64()?,
                "later_boom" => cfg.ratios.later_boom = as_f64()?,
                "later_rest" => cfg.ratios.later_rest = as_f64()?,
                _ => return Err(malformed(format!("unknown key {key}"))),
            }
        }
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        let r = &self.ratios;
        format!(
            "domains={}\ncommon_domains={}\ndocs_per_domain={}\nclusters_per_domain={}\n\
             cluster_vocab={}\nbackground_vocab={}\nbackground_mix={}\ndoc_len={}\n\
             query_len={}\ntrain_queries_per_domain={}\ndev_queries_per_session={}\n\
             test_queries_per_session={}\nsessions={}\nparaphrases_per_query={}\n\
             paraphrase_dropout={}\nparaphrase_synonym_rate={}\nquery_synonym_rate={}\n\
             positives_per_query={}\ninitial_common={}\ninitial_booming={}\n\
             later_common={}\nlater_boom={}\nlater_rest={}\n",
            self.domains,
            self.common_domains,
            self.docs_per_domain,
            self.clusters_per_domain,
            self.cluster_vocab,
            self.background_vocab,
            self.background_mix,
            self.doc_len,
            self.query_len,
            self.train_queries_per_domain,
            self.dev_queries_per_session,
            self.test_queries_per_session,
            self.sessions,
            self.paraphrases_per_query,
            self.paraphrase_dropout,
            self.paraphrase_synonym_rate,
            self.query_synonym_rate,
            self.positives_per_query,
            r.initial_common,
            r.initial_booming,
            r.later_common,
            r.later_boom,
            r.later_rest,
        )
    }
}

pub fn domain_name(d: usize) -> String {
    format!("dom{d}")
}

fn domain_token(domain: usize, cluster: usize, word: usize) -> String {
    format!("d{domain}c{cluster}w{word}")
}

fn background_token(word: usize) -> String {
    format!("bg{word}")
}

fn synonym_of(token: &str) -> String {
    format!("{token}x")
}

fn is_background(token: &str) -> bool {
    token.starts_with("bg")
}

/// Deterministic synthetic stream for one seed. Byte-identical output for
/// identical inputs.
pub fn generate_synthetic_stream(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<SessionStream, BenchmarkError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_count = cfg.sessions + 1;

    // core documents per (session, domain); each document belongs to one
    // topic cluster within its domain
    let mut doc_seq = 0usize;
    let mut sessions_docs: Vec<Vec<Document>> = (0..t_count).map(|_| Vec::new()).collect();
    let mut cluster_members: BTreeMap<(usize, usize), Vec<(usize, DocId)>> = BTreeMap::new();
    for t in 0..t_count {
        for d in 0..cfg.domains {
            let count = (cfg.share(d, t) * cfg.docs_per_domain as f64).floor() as usize;
            for _ in 0..count {
                let cluster = rng.gen_range(0..cfg.clusters_per_domain);
                let tokens = (0..cfg.doc_len)
                    .map(|_| {
                        if rng.gen_bool(cfg.background_mix) {
                            background_token(rng.gen_range(0..cfg.background_vocab))
                        } else {
                            domain_token(d, cluster, rng.gen_range(0..cfg.cluster_vocab))
                        }
                    })
                    .collect();
                let id = DocId::new(format!("d{doc_seq:06}"));
                cluster_members
                    .entry((d, cluster))
                    .or_default()
                    .push((t, id.clone()));
                sessions_docs[t].push(Document {
                    id,
                    domain: domain_name(d),
                    tokens,
                });
                doc_seq += 1;
            }
        }
    }
    let core_counts: Vec<usize> = sessions_docs.iter().map(Vec::len).collect();
    let doc_cluster: BTreeMap<DocId, (usize, usize)> = cluster_members
        .iter()
        .flat_map(|(key, members)| members.iter().map(move |(_, id)| (id.clone(), *key)))
        .collect();

    // relevance: the source document plus sampled same-cluster documents
    // that have arrived by the query's session
    let relevants_for = |source: &Document,
                         max_session: usize,
                         cluster_members: &BTreeMap<(usize, usize), Vec<(usize, DocId)>>,
                         rng: &mut ChaCha8Rng|
     -> BTreeSet<DocId> {
        let mut rel = BTreeSet::from([source.id.clone()]);
        let key = doc_cluster[&source.id];
        let mut mates: Vec<&DocId> = cluster_members[&key]
            .iter()
            .filter(|(t, id)| *t <= max_session && *id != source.id)
            .map(|(_, id)| id)
            .collect();
        while rel.len() < cfg.positives_per_query && !mates.is_empty() {
            let i = rng.gen_range(0..mates.len());
            rel.insert(mates.swap_remove(i).clone());
        }
        rel
    };

    // query text: sample distinct tokens from the source document (both
    // topical and common background words, as in real queries); topical
    // picks switch to their synonym form at the configured rate
    let query_tokens = |doc: &Document, rng: &mut ChaCha8Rng| -> Vec<String> {
        let mut distinct: Vec<&String> = Vec::new();
        let mut seen = BTreeSet::new();
        for tok in &doc.tokens {
            if seen.insert(tok) {
                distinct.push(tok);
            }
        }
        let mut out: Vec<String> = Vec::new();
        while out.len() < cfg.query_len && !distinct.is_empty() {
            let i = rng.gen_range(0..distinct.len());
            let tok = distinct.swap_remove(i);
            if !is_background(tok) && rng.gen_bool(cfg.query_synonym_rate) {
                out.push(synonym_of(tok));
            } else {
                out.push(tok.clone());
            }
        }
        out
    };

    // training queries from the initial collection
    let mut train = QuerySet::default();
    let mut train_sources: Vec<(usize, Document)> = Vec::new();
    let mut query_seq = 0usize;
    for d in 0..cfg.domains {
        let pool: Vec<usize> = sessions_docs[0]
            .iter()
            .enumerate()
            .filter(|(_, doc)| doc.domain == domain_name(d))
            .map(|(i, _)| i)
            .collect();
        if pool.is_empty() && cfg.train_queries_per_domain > 0 {
            return Err(BenchmarkError::InvalidConfig(format!(
                "domain {} has no initial-session documents to source training queries",
                domain_name(d)
            )));
        }
        for _ in 0..cfg.train_queries_per_domain {
            let source = sessions_docs[0][pool[rng.gen_range(0..pool.len())]].clone();
            let qid = QueryId::new(format!("qt{query_seq:05}"));
            query_seq += 1;
            train.queries.push(Query {
                id: qid.clone(),
                tokens: query_tokens(&source, &mut rng),
            });
            let rel = relevants_for(&source, 0, &cluster_members, &mut rng);
            train.qrels.insert(qid, rel);
            train_sources.push((d, source));
        }
    }

    // paraphrase documents of the training positives, spread over upcoming
    // sessions with the source domain's later-session shares
    let mut para_seq = 0usize;
    for (domain, source) in &train_sources {
        let weights: Vec<f64> = (1..t_count).map(|t| cfg.share(*domain, t)).collect();
        let total: f64 = weights.iter().sum();
        for _ in 0..cfg.paraphrases_per_query {
            let target = if total <= 0.0 {
                1 + rng.gen_range(0..cfg.sessions)
            } else {
                let mut pick = rng.gen_range(0.0..total);
                let mut chosen = cfg.sessions;
                for (i, w) in weights.iter().enumerate() {
                    if pick < *w {
                        chosen = i + 1;
                        break;
                    }
                    pick -= w;
                }
                chosen.min(cfg.sessions)
            };
            let mut tokens: Vec<String> = Vec::new();
            for tok in &source.tokens {
                if rng.gen_bool(cfg.paraphrase_dropout) {
                    continue;
                }
                if !is_background(tok) && rng.gen_bool(cfg.paraphrase_synonym_rate) {
                    tokens.push(synonym_of(tok));
                } else {
                    tokens.push(tok.clone());
                }
            }
            if tokens.is_empty() {
                tokens.push(source.tokens[0].clone());
            }
            sessions_docs[target].push(Document {
                id: DocId::new(format!("p{para_seq:06}")),
                domain: source.domain.clone(),
                tokens,
            });
            para_seq += 1;
        }
    }

    // dev/test queries per session, sourced from that session's core delta
    let mut sessions: Vec<SessionData> = Vec::with_capacity(t_count);
    for (t, docs) in sessions_docs.into_iter().enumerate() {
        let mut dev = QuerySet::default();
        let mut test = QuerySet::default();
        let core = core_counts[t];
        for (set, count, tag) in [
            (&mut dev, cfg.dev_queries_per_session, "qd"),
            (&mut test, cfg.test_queries_per_session, "qe"),
        ] {
            for _ in 0..count.min(core) {
                let source = &docs[rng.gen_range(0..core)];
                let qid = QueryId::new(format!("{tag}{query_seq:05}"));
                query_seq += 1;
                set.queries.push(Query {
                    id: qid.clone(),
                    tokens: query_tokens(source, &mut rng),
                });
                let rel = relevants_for(source, t, &cluster_members, &mut rng);
                set.qrels.insert(qid, rel);
            }
        }
        sessions.push(SessionData {
            index: t as u32,
            documents: docs,
            train: if t == 0 {
                core::mem::take(&mut train)
            } else {
                QuerySet::default()
            },
            dev,
            test,
        });
    }

    let stream = SessionStream { sessions };
    stream.validate()?;
    Ok(stream)
}

// --- line-based formats -------------------------------------------------

pub fn corpus_to_tsv(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(d.id.as_str());
        out.push('\t');
        out.push_str(&d.domain);
        out.push('\t');
        out.push_str(&d.tokens.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_corpus_tsv(text: &str) -> Result<Vec<Document>, BenchmarkError> {
    let mut docs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.splitn(3, '\t');
        let (id, domain, body) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(BenchmarkError::Malformed {
                    line: lineno + 1,
                    reason: "expected doc_id<TAB>domain<TAB>text".to_string(),
                })
            }
        };
        docs.push(Document {
            id: DocId::new(id),
            domain: domain.to_string(),
            tokens: body.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(docs)
}

pub fn queries_to_tsv(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(q.id.as_str());
        out.push('\t');
        out.push_str(&q.tokens.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_queries_tsv(text: &str) -> Result<Vec<Query>, BenchmarkError> {
    let mut queries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let (id, body) = raw.split_once('\t').ok_or(BenchmarkError::Malformed {
            line: lineno + 1,
            reason: "expected query_id<TAB>text".to_string(),
        })?;
        queries.push(Query {
            id: QueryId::new(id),
            tokens: body.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(queries)
}

pub fn qrels_to_lines(qrels: &BTreeMap<QueryId, BTreeSet<DocId>>) -> String {
    let mut out = String::new();
    for (q, docs) in qrels {
        for d in docs {
            out.push_str(&format!("{} 0 {} 1\n", q.as_str(), d.as_str()));
        }
    }
    out
}

pub fn parse_qrels(text: &str) -> Result<BTreeMap<QueryId, BTreeSet<DocId>>, BenchmarkError> {
    let mut qrels: BTreeMap<QueryId, BTreeSet<DocId>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 4 || fields[1] != "0" {
            return Err(BenchmarkError::Malformed {
                line: lineno + 1,
                reason: "expected: query_id 0 doc_id relevance".to_string(),
            });
        }
        let relevance: i64 = fields[3].parse().map_err(|_| BenchmarkError::Malformed {
            line: lineno + 1,
            reason: format!("bad relevance value {}", fields[3]),
        })?;
        if relevance > 0 {
            qrels
                .entry(QueryId::new(fields[0]))
                .or_default()
                .insert(DocId::new(fields[2]));
        }
    }
    Ok(qrels)
}
