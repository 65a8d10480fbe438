//! Function-level embedding similarity between original and decompiled code.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ctransform::{code_token_indices, tokenize_c, LexError, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Source,
    Decompiled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionText {
    pub fn_id: String,
    pub text: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedFunction {
    pub function: FunctionText,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// `distances[i][j]` is the cosine distance of row `i` to column `j`.
    pub distances: Vec<Vec<f64>>,
    pub pairing: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalScore {
    pub top1_accuracy: f64,
    pub mean_rank: f64,
    pub pairs: usize,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("vectors have different dimensions ({0} and {1})")]
    DimensionMismatch(usize, usize),
    #[error("cannot take the cosine distance of a zero vector")]
    ZeroVector,
    #[error("function {0} has no embedding vector")]
    MissingVector(String),
    #[error("invalid pairing: {0}")]
    InvalidPairing(String),
    #[error("embedding backend error: {0}")]
    Backend(String),
}

/// Extracts top-level function definitions: a `{` at depth 0 directly after
/// a `)` starts a body, and the identifier before the matching `(` names it.
pub fn split_functions(c_source: &str, origin: Origin) -> Result<Vec<FunctionText>, EmbedError> {
    let tokens = tokenize_c(c_source)?;
    let code = code_token_indices(&tokens);
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut decl_start: Option<usize> = None;
    let mut parens: Vec<usize> = Vec::new();
    let mut last_paren_pair: Option<(usize, usize)> = None;
    let mut body: Option<(String, usize)> = None;
    let mut prev: Option<usize> = None;
    for (pos, &i) in code.iter().enumerate() {
        let t = &tokens[i];
        if depth == 0 && decl_start.is_none() {
            decl_start = Some(i);
        }
        if t.is_punct("(") {
            parens.push(pos);
        } else if t.is_punct(")") {
            if let Some(open) = parens.pop() {
                last_paren_pair = Some((open, pos));
            }
        } else if t.is_punct("{") {
            if depth == 0 {
                let after_paren = prev.is_some_and(|p| tokens[p].is_punct(")"));
                let name = last_paren_pair
                    .filter(|&(_, close)| after_paren && close + 1 == pos)
                    .and_then(|(open, _)| open.checked_sub(1))
                    .map(|k| &tokens[code[k]])
                    .filter(|n| n.kind == TokenKind::Identifier)
                    .map(|n| n.lexeme.clone());
                if let (Some(name), Some(start)) = (name, decl_start) {
                    body = Some((name, start));
                }
            }
            depth += 1;
        } else if t.is_punct("}") {
            depth = depth.saturating_sub(1);
            if depth == 0 {
                if let Some((name, start)) = body.take() {
                    out.push(FunctionText {
                        fn_id: name,
                        text: c_source[tokens[start].span.start..t.span.end].to_string(),
                        origin,
                    });
                }
                decl_start = None;
            }
        } else if t.is_punct(";") && depth == 0 {
            decl_start = None;
        }
        prev = Some(i);
    }
    Ok(out)
}

/// `1 - u.v / (|u| |v|)`, clamped to [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0))
}

pub fn confusion_matrix(
    src: &[EmbeddedFunction],
    dec: &[EmbeddedFunction],
    pairing: &BTreeMap<String, String>,
) -> Result<EmbeddingMatrix, EmbedError> {
    for f in src.iter().chain(dec) {
        if f.vector.is_empty() {
            return Err(EmbedError::MissingVector(f.function.fn_id.clone()));
        }
    }
    let row_ids: Vec<String> = src.iter().map(|f| f.function.fn_id.clone()).collect();
    let col_ids: Vec<String> = dec.iter().map(|f| f.function.fn_id.clone()).collect();
    let mut targets = HashSet::new();
    for (s, d) in pairing {
        if !row_ids.contains(s) || !col_ids.contains(d) {
            return Err(EmbedError::InvalidPairing(format!("{s} -> {d} names an unknown function")));
        }
        if !targets.insert(d) {
            return Err(EmbedError::InvalidPairing(format!("{d} is paired twice")));
        }
    }
    let distances = src
        .iter()
        .map(|s| dec.iter().map(|d| cosine_distance(&s.vector, &d.vector)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingMatrix { row_ids, col_ids, distances, pairing: pairing.clone() })
}

/// How strongly the paired cells dominate their rows. `None` when the pairing
/// is empty.
pub fn diagonal_score(m: &EmbeddingMatrix) -> Option<DiagonalScore> {
    let mut hits = 0usize;
    let mut rank_sum = 0usize;
    let mut pairs = 0usize;
    for (s, d) in &m.pairing {
        let (Some(i), Some(j)) = (m.row_ids.iter().position(|x| x == s), m.col_ids.iter().position(|x| x == d)) else {
            continue;
        };
        let row = &m.distances[i];
        let target = row[j];
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        hits += usize::from(target <= min);
        let better = row.iter().enumerate().filter(|&(k, &x)| x < target || (x == target && k < j)).count();
        rank_sum += better + 1;
        pairs += 1;
    }
    (pairs > 0).then(|| DiagonalScore {
        top1_accuracy: hits as f64 / pairs as f64,
        mean_rank: rank_sum as f64 / pairs as f64,
        pairs,
    })
}

/// Pairs functions with the same name (debug builds).
pub fn pair_by_name(src: &[FunctionText], dec: &[FunctionText]) -> BTreeMap<String, String> {
    let names: HashSet<&str> = dec.iter().map(|f| f.fn_id.as_str()).collect();
    src.iter()
        .filter(|f| names.contains(f.fn_id.as_str()))
        .map(|f| (f.fn_id.clone(), f.fn_id.clone()))
        .collect()
}

pub trait EmbeddingBackend: Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Deterministic offline backend: each text is hashed to seed a generator
/// that draws a fixed-dimension vector.
pub struct StubBackend {
    pub dim: usize,
}

impl Default for StubBackend {
    fn default() -> Self {
        StubBackend { dim: 64 }
    }
}

impl EmbeddingBackend for StubBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| {
                let digest = Sha256::digest(t.as_bytes());
                let mut rng = ChaCha8Rng::from_seed(digest.into());
                (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            })
            .collect())
    }
}

/// Backend speaking `{model, input} -> {data:[{embedding}]}` over HTTP.
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub batch_size: usize,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: &str, model: &str, api_key_env: &str, timeout_secs: u64) -> HttpBackend {
        HttpBackend {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.to_string(),
            batch_size: 16,
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(timeout_secs)))
                .build()
                .into(),
        }
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let token = std::env::var(&self.api_key_env)
            .map_err(|_| EmbedError::Backend(format!("environment variable {} is not set", self.api_key_env)))?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size.max(1)) {
            let mut resp = self
                .agent
                .post(&self.endpoint)
                .header("Authorization", &format!("Bearer {token}"))
                .send_json(json!({ "model": self.model, "input": chunk }))
                .map_err(|e| EmbedError::Backend(e.to_string()))?;
            let status = resp.status().as_u16();
            if !(200..300).contains(&status) {
                return Err(EmbedError::Backend(format!("HTTP {status}")));
            }
            let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| EmbedError::Backend(e.to_string()))?;
            let data = v["data"].as_array().ok_or_else(|| EmbedError::Backend("response has no data array".into()))?;
            if data.len() != chunk.len() {
                return Err(EmbedError::Backend(format!("asked for {} embeddings, got {}", chunk.len(), data.len())));
            }
            for item in data {
                let vec: Vec<f64> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| EmbedError::Backend("item has no embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| EmbedError::Backend("non-numeric embedding".into())))
                    .collect::<Result<_, _>>()?;
                out.push(vec);
            }
        }
        Ok(out)
    }
}

pub fn embed_functions(backend: &dyn EmbeddingBackend, fns: &[FunctionText]) -> Result<Vec<EmbeddedFunction>, EmbedError> {
    let texts: Vec<String> = fns.iter().map(|f| f.text.clone()).collect();
    let vectors = backend.embed(&texts)?;
    if vectors.len() != fns.len() {
        return Err(EmbedError::Backend(format!("expected {} vectors, got {}", fns.len(), vectors.len())));
    }
    Ok(fns.iter().cloned().zip(vectors).map(|(function, vector)| EmbeddedFunction { function, vector }).collect())
}

/// Matrix as CSV: a header of column ids, then one row per source function.
pub fn matrix_csv(m: &EmbeddingMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["source\\decompiled".to_string()];
    header.extend(m.col_ids.iter().cloned());
    w.write_record(&header).expect("csv to memory");
    for (id, row) in m.row_ids.iter().zip(&m.distances) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|d| format!("{d:.6}")));
        w.write_record(&rec).expect("csv to memory");
    }
    String::from_utf8(w.into_inner().expect("flush csv")).expect("csv is utf-8")
}

/// JSON sidecar with ids, pairing and score.
pub fn matrix_sidecar(m: &EmbeddingMatrix) -> serde_json::Value {
    json!({
        "metric": "cosine_distance",
        "row_ids": m.row_ids,
        "col_ids": m.col_ids,
        "pairing": m.pairing,
        "score": diagonal_score(m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ef(id: &str, v: Vec<f64>) -> EmbeddedFunction {
        EmbeddedFunction { function: FunctionText { fn_id: id.into(), text: id.into(), origin: Origin::Source }, vector: v }
    }

    #[test]
    fn splits_delete_listen() {
        let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/delete_listen.c")).unwrap();
        let fns = split_functions(&src, Origin::Source).unwrap();
        let ids: Vec<&str> = fns.iter().map(|f| f.fn_id.as_str()).collect();
        assert_eq!(ids, vec!["del_in_dir", "do_run", "main"]);
        assert!(fns[0].text.starts_with("void del_in_dir(char *dirname)"));
        assert!(fns[2].text.ends_with('}'));
        assert!(split_functions("int x = 3;\nstruct s { int a; };\n", Origin::Source).unwrap().is_empty());
    }

    #[test]
    fn skips_macros_and_initializers() {
        let src = "#define BODY() { }\nint arr[] = {1, 2};\nstatic int f(void) { if (1) { return 2; } return 0; }\n";
        let fns = split_functions(src, Origin::Source).unwrap();
        assert_eq!(fns.len(), 1);
        assert_eq!(fns[0].fn_id, "f");
        assert!(fns[0].text.starts_with("static int f"));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert!((cosine_distance(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!(matches!(cosine_distance(&[1.0], &[1.0, 2.0]), Err(EmbedError::DimensionMismatch(1, 2))));
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]), Err(EmbedError::ZeroVector)));
    }

    #[test]
    fn matrix_and_scores() {
        let m = confusion_matrix(&[ef("a", vec![1.0, 0.0])], &[ef("a", vec![2.0, 0.0])], &[("a".into(), "a".into())].into())
            .unwrap();
        assert_eq!(m.distances, vec![vec![0.0]]);

        let basis = |k: usize| (0..3).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let src: Vec<_> = (0..3).map(|k| ef(&format!("f{k}"), basis(k))).collect();
        let pairing: BTreeMap<String, String> = (0..3).map(|k| (format!("f{k}"), format!("f{k}"))).collect();
        let m = confusion_matrix(&src, &src, &pairing).unwrap();
        for k in 0..3 {
            assert_eq!(m.distances[k][k], 0.0);
        }
        let s = diagonal_score(&m).unwrap();
        assert_eq!((s.top1_accuracy, s.mean_rank), (1.0, 1.0));

        let adversarial = EmbeddingMatrix {
            row_ids: vec!["a".into(), "b".into()],
            col_ids: vec!["x".into(), "y".into()],
            distances: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            pairing: [("a".into(), "x".into()), ("b".into(), "y".into())].into(),
        };
        let s = diagonal_score(&adversarial).unwrap();
        assert_eq!((s.top1_accuracy, s.mean_rank), (0.0, 2.0));
        assert!(diagonal_score(&EmbeddingMatrix { pairing: BTreeMap::new(), ..adversarial }).is_none());
    }

    #[test]
    fn ties_rank_by_column_order() {
        let m = EmbeddingMatrix {
            row_ids: vec!["a".into()],
            col_ids: vec!["x".into(), "y".into()],
            distances: vec![vec![0.5, 0.5]],
            pairing: [("a".into(), "y".into())].into(),
        };
        let s = diagonal_score(&m).unwrap();
        assert_eq!(s.top1_accuracy, 1.0);
        assert_eq!(s.mean_rank, 2.0);
    }

    #[test]
    fn pairing_validation() {
        let a = [ef("a", vec![1.0])];
        let b = [ef("b", vec![1.0])];
        assert!(matches!(confusion_matrix(&a, &b, &[("a".into(), "zz".into())].into()), Err(EmbedError::InvalidPairing(_))));
        assert!(matches!(confusion_matrix(&[ef("a", vec![])], &b, &BTreeMap::new()), Err(EmbedError::MissingVector(_))));
    }

    #[test]
    fn random_vectors_top1_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2023);
        let mut total = 0.0;
        let trials = 20;
        for _ in 0..trials {
            let mk = |rng: &mut ChaCha8Rng, p: &str| -> Vec<EmbeddedFunction> {
                (0..100).map(|k| ef(&format!("{p}{k}"), (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())).collect()
            };
            let src = mk(&mut rng, "s");
            let dec = mk(&mut rng, "d");
            let pairing = (0..100).map(|k| (format!("s{k}"), format!("d{k}"))).collect();
            total += diagonal_score(&confusion_matrix(&src, &dec, &pairing).unwrap()).unwrap().top1_accuracy;
        }
        let mean = total / trials as f64;
        assert!((0.0..=0.03).contains(&mean), "{mean}");
    }

    #[test]
    fn stub_is_deterministic() {
        let b = StubBackend::default();
        let v1 = b.embed(&["int f(void){}".into()]).unwrap();
        let v2 = b.embed(&["int f(void){}".into()]).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1[0].len(), 64);
    }

    #[test]
    fn csv_and_sidecar() {
        let m = EmbeddingMatrix {
            row_ids: vec!["a".into()],
            col_ids: vec!["x".into()],
            distances: vec![vec![0.25]],
            pairing: [("a".into(), "x".into())].into(),
        };
        assert_eq!(matrix_csv(&m), "source\\decompiled,x\na,0.250000\n");
        assert_eq!(matrix_sidecar(&m)["score"]["top1_accuracy"], 1.0);
    }

    proptest! {
        #[test]
        fn scale_invariance(u in prop::collection::vec(-10.0f64..10.0, 4), v in prop::collection::vec(-10.0f64..10.0, 4),
                            a in 0.1f64..100.0, b in 0.1f64..100.0) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let d = cosine_distance(&u, &v).unwrap();
            let us: Vec<f64> = u.iter().map(|x| x * a).collect();
            let vs: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((d - cosine_distance(&us, &vs).unwrap()).abs() < 1e-9);
            prop_assert!((0.0..=2.0).contains(&d));
        }

        #[test]
        fn transpose_equivalence(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<_> = (0..3).map(|k| ef(&format!("s{k}"), (0..5).map(|_| rng.random_range(0.1..1.0)).collect())).collect();
            let dec: Vec<_> = (0..4).map(|k| ef(&format!("d{k}"), (0..5).map(|_| rng.random_range(0.1..1.0)).collect())).collect();
            let pairing: BTreeMap<String, String> = (0..3).map(|k| (format!("s{k}"), format!("d{k}"))).collect();
            let flipped: BTreeMap<String, String> = pairing.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
            let m = confusion_matrix(&src, &dec, &pairing).unwrap();
            let t = confusion_matrix(&dec, &src, &flipped).unwrap();
            for i in 0..3 {
                for j in 0..4 {
                    prop_assert!((m.distances[i][j] - t.distances[j][i]).abs() < 1e-12);
                }
            }
        }
    }
}
