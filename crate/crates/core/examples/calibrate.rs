// scratch calibration harness (not part of the deliverable)
use l2r_core::benchmark::{generate_synthetic_stream, GeneratorConfig};
use l2r_core::runner::{run_stream, Method, RunConfig};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    if env_or("ORDERINGS", 0u8) == 1 {
        return orderings();
    }
    let method = Method::parse(&env_or::<String>("METHOD", "initial".into())).unwrap();
    let gen = GeneratorConfig {
        docs_per_domain: env_or("DPD", 4000),
        clusters_per_domain: env_or("CLUSTERS", 8),
        cluster_vocab: env_or("CVOCAB", 30),
        query_len: env_or("QLEN", 5),
        doc_len: env_or("DLEN", 20),
        background_mix: env_or("BGMIX", 0.3),
        background_vocab: env_or("BGVOCAB", 500),
        test_queries_per_session: env_or("TESTQ", 60),
        paraphrases_per_query: env_or("PARA", 3),
        ..GeneratorConfig::default()
    };
    let stream = generate_synthetic_stream(&gen, env_or("GSEED", 1)).unwrap();
    eprintln!(
        "stream: {} docs, sizes {:?}, {} train queries",
        stream.total_docs(),
        stream.sessions.iter().map(|s| s.documents.len()).collect::<Vec<_>>(),
        stream.train_set().queries.len()
    );

    let cfg = RunConfig {
        method,
        dim: env_or("DIM", 32),
        feature_dim: env_or("FDIM", 2048),
        lr_initial: env_or("LRI", 1.0),
        lr_upcoming: env_or("LRU", 0.5),
        epochs_initial: env_or("EPI", 8),
        epochs_upcoming: env_or("EPU", 1),
        lambda: env_or("LAMBDA", 1.0),
        alpha: env_or("ALPHA", 0.6),
        seed: env_or("SEED", 42),
        compat_baseline: env_or("COMPATBASE", 0u8) == 1,
        ..RunConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = run_stream(&stream, &cfg).unwrap();
    let elapsed = t0.elapsed();
    let losses = &out.report.stats.initial_losses;
    if !losses.is_empty() {
        let w = (losses.len() / 20).max(2);
        let means: Vec<f64> = losses.chunks(w).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let drops = means.windows(2).filter(|p| p[1] < p[0]).count();
        eprintln!(
            "epoch-0 drop fraction: {:.2} ({}/{})",
            drops as f64 / (means.len() - 1) as f64,
            drops,
            means.len() - 1
        );
    }
    eprintln!("session mean losses: {:?}", out.report.stats.session_mean_loss);
    eprintln!("dev primary: {:?}", out.report.stats.dev_primary);
    for m in &out.report.matrices {
        eprintln!("--- {} ---", m.spec().name());
        for t in 0..=m.t_max() {
            let row: Vec<String> = (0..=m.t_max())
                .map(|j| m.get(t, j).map_or("  .  ".into(), |v| format!("{v:.3}")))
                .collect();
            eprintln!("p[{t}][..] = {}", row.join(" "));
        }
    }
    let t_max = out.report.matrices[0].t_max();
    for (mi, m) in out.report.matrices.iter().enumerate() {
        let s = &out.report.summaries[mi][t_max];
        eprintln!(
            "{}: AP={:.4} P_T={:.4} Forget_T={:.4?} FWT={:.4?}",
            m.spec().name(), s.ap, s.p_t, s.forget, s.fwt
        );
    }
    eprintln!(
        "steps={} skipped={} violations={} elapsed={elapsed:?}",
        out.report.stats.steps,
        out.report.stats.skipped_queries,
        out.report.stats.memory_update_violations
    );

    if env_or("PROBE", 0u8) == 1 {
        probe(&stream, &cfg, &out);
    }
}

fn probe(
    stream: &l2r_core::benchmark::SessionStream,
    cfg: &RunConfig,
    out: &l2r_core::runner::RunOutput,
) {
    use l2r_core::encoder::{featurize, Tower};
    let f = cfg.feature_dim;
    // signed row: the hashing sign times the weight row, i.e. the vector a
    // single-token input actually contributes
    let fresh = |tower: Tower, params: &l2r_core::encoder::EncoderParams, token: &str| -> Vec<f64> {
        let dim = params.dim() as usize;
        let (r, w) = featurize(&[token.to_string()], f).iter().next().unwrap();
        params.weights(tower)[r as usize * dim..(r as usize + 1) * dim]
            .iter()
            .map(|v| v * w)
            .collect()
    };
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12)
    };
    // alignment of token rows: same-token across towers, synonym->original
    let params = &out.params;
    let init = l2r_core::encoder::EncoderParams::init(cfg.feature_dim, cfg.dim, cfg.shared_towers, {
        // same derivation as the runner
        let mut h = 0xcbf29ce484222325u64 ^ 0;
        h = h ^ (cfg.seed ^ 0x51ed270b9f4c1d37);
        h
    });
    let _ = init;
    let mut ident = 0.0;
    let mut syn = 0.0;
    let mut count = 0;
    for d in 0..3 {
        for c in 0..6 {
            for w in 0..6 {
                let tok = format!("d{d}c{c}w{w}");
                let qa = fresh(Tower::Query, params, &tok);
                let da = fresh(Tower::Document, params, &tok);
                let sa = fresh(Tower::Query, params, &format!("{tok}x"));
                ident += cos(&qa, &da);
                syn += cos(&sa, &da);
                count += 1;
            }
        }
    }
    eprintln!("PROBE ident cos(Wq[t], Wd[t]) mean = {:.4}", ident / count as f64);

    // pool composition for training queries at session 0
    {
        use l2r_core::lexical::InvertedIndex;
        use l2r_core::selection::{candidate_pool, SelectionConfig};
        use std::collections::BTreeMap;
        let s0 = &stream.sessions[0];
        let mut lex = InvertedIndex::new(cfg.bm25_k1, cfg.bm25_b);
        let batch: Vec<(l2r_core::DocId, Vec<String>)> = s0
            .documents
            .iter()
            .map(|d| (d.id.clone(), d.tokens.clone()))
            .collect();
        lex.add_documents(&batch).unwrap();
        let allowed: std::collections::BTreeSet<l2r_core::DocId> =
            s0.documents.iter().map(|d| d.id.clone()).collect();
        let cluster_of: BTreeMap<&l2r_core::DocId, &str> = s0
            .documents
            .iter()
            .map(|d| {
                let tok = d
                    .tokens
                    .iter()
                    .find(|t| t.starts_with('d') && !t.starts_with("bg"))
                    .map(|t| t.trim_end_matches('x'))
                    .unwrap_or("?");
                (&d.id, &tok[..tok.find('w').unwrap_or(tok.len())])
            })
            .collect();
        let sel = SelectionConfig {
            alpha: cfg.alpha,
            n_new: cfg.n_new + cfg.n_mem,
            pool_size: cfg.pool_initial,
            upsample_factor: cfg.upsample_factor,
        };
        let train = stream.train_set();
        let mut same = 0usize;
        let mut total = 0usize;
        for q in train.queries.iter().take(40) {
            let rel = &train.qrels[&q.id];
            let pos = rel.iter().next().unwrap();
            let pos_cluster = cluster_of.get(pos).copied().unwrap_or("?");
            let pool = candidate_pool(&lex, &q.tokens, &allowed, rel, &sel, 17);
            for id in &pool {
                total += 1;
                if cluster_of.get(id).copied() == Some(pos_cluster) {
                    same += 1;
                }
            }
        }
        eprintln!(
            "PROBE pool same-cluster fraction = {:.3} ({} of {})",
            same as f64 / total.max(1) as f64,
            same,
            total
        );
    }
    eprintln!("PROBE syn   cos(Wq[tx], Wd[t]) mean = {:.4}", syn / count as f64);

    // score distributions: test positives vs random docs, session 0
    let sess = &stream.sessions[0];
    let mut pos_scores = Vec::new();
    for q in sess.test.queries.iter().take(30) {
        let qe = params
            .encode(&featurize(&q.tokens, f), Tower::Query)
            .unwrap();
        for d in &sess.test.qrels[&q.id] {
            if let Some(doc) = out.store.get(d) {
                pos_scores.push(
                    qe.as_slice()
                        .iter()
                        .zip(doc.embedding.as_slice())
                        .map(|(a, b)| a * b)
                        .sum::<f64>(),
                );
            }
        }
    }
    pos_scores.sort_by(|a, b| a.total_cmp(b));
    let med = pos_scores[pos_scores.len() / 2];
    eprintln!(
        "PROBE test-positive scores: median {med:.5} min {:.5} max {:.5}",
        pos_scores[0],
        pos_scores[pos_scores.len() - 1]
    );
}

// appended diagnostics module driven by PROBE=1


/// Criterion-9/10 style comparison on one stream.
fn orderings() {
    let gen = GeneratorConfig {
        docs_per_domain: env_or("DPD", 4000),
        clusters_per_domain: env_or("CLUSTERS", 50),
        cluster_vocab: env_or("CVOCAB", 12),
        query_len: env_or("QLEN", 5),
        test_queries_per_session: env_or("TESTQ", 60),
        paraphrases_per_query: env_or("PARA", 3),
        ..GeneratorConfig::default()
    };
    let base = RunConfig {
        dim: env_or("DIM", 64),
        feature_dim: env_or("FDIM", 4096),
        lr_initial: env_or("LRI", 0.05),
        lr_upcoming: env_or("LRU", 0.05),
        epochs_initial: env_or("EPI", 6),
        epochs_upcoming: env_or("EPU", 1),
        lambda: env_or("LAMBDA", 1.0),
        alpha: env_or("ALPHA", 0.6),
        eval_fwt: false,
        ..RunConfig::default()
    };
    let seeds: Vec<u64> = (0..env_or("NSEEDS", 2u64)).map(|i| 42 + i).collect();
    let gseed = env_or("GSEED", 1);
    let stream = generate_synthetic_stream(&gen, gseed).unwrap();
    let mut table: Vec<(String, Vec<f64>)> = Vec::new();
    let variants: Vec<(String, RunConfig)> = vec![
        ("initial".into(), RunConfig { method: Method::Initial, ..base.clone() }),
        ("l2r_vanilla".into(), RunConfig { method: Method::L2rVanilla, ..base.clone() }),
        ("l2r_emb".into(), RunConfig { method: Method::L2rEmb, ..base.clone() }),
        ("l2r_rank".into(), RunConfig { method: Method::L2rRank, ..base.clone() }),
        ("er_embalign".into(), RunConfig { method: Method::Er, compat_baseline: true, ..base.clone() }),
        ("l2r_rank_nopss".into(), RunConfig { method: Method::L2rRank, alpha: 0.0, ..base.clone() }),
    ];
    for (name, cfg) in variants {
        let mut aps = Vec::new();
        for &seed in &seeds {
            let cfg = RunConfig { seed, ..cfg.clone() };
            let t0 = std::time::Instant::now();
            let out = run_stream(&stream, &cfg).unwrap();
            let _ = t0;
            aps.push(out.report.primary_ap(&cfg));
        }
        let mean = aps.iter().sum::<f64>() / aps.len() as f64;
        eprintln!("{name:>16}: AP(s@10) mean {mean:.4}  per-seed {aps:.4?}");
        table.push((name, aps));
    }
    let get = |n: &str| -> f64 {
        let aps = &table.iter().find(|(name, _)| name == n).unwrap().1;
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    eprintln!("9a vanilla<initial: {}", get("l2r_vanilla") < get("initial"));
    eprintln!("9b rank>emb:        {}", get("l2r_rank") > get("l2r_emb"));
    eprintln!("9c rank>er+emb:     {}", get("l2r_rank") > get("er_embalign"));
    eprintln!("10 rank>-pss:       {}", get("l2r_rank") > get("l2r_rank_nopss"));
}
