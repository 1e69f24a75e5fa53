use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::http::{JsonClient, RemoteSettings};

/// Maps text to a fixed-dimension real vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        (**self).embed_batch(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        (**self).embed_batch(texts)
    }
}

/// Deterministic signed feature hashing over lowercase word tokens, L2-normalized.
///
/// Text without any token embeds to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbeddingProvider {
    dimension: usize,
    seed: u64,
}

impl HashEmbeddingProvider {
    pub fn new(dimension: usize) -> Self {
        Self::with_seed(dimension, 0)
    }

    pub fn with_seed(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        // FNV-1a, 64-bit
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dimension as u64) as usize, sign)
    }
}

/// Lowercase alphanumeric tokens; `_` and `-` stay inside tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl EmbeddingProvider for HashEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut v = vec![0.0; self.dimension];
        for token in tokenize(text) {
            let (i, sign) = self.bucket(&token);
            v[i] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// Memoizes another provider by exact text.
pub struct CachingProvider<P> {
    inner: P,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<P: EmbeddingProvider> CachingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachingProvider<P> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        if let Some(v) = self.cache.lock().ok().and_then(|c| c.get(text).cloned()) {
            return Ok(v);
        }
        let v = self.inner.embed(text)?;
        if let Ok(mut c) = self.cache.lock() {
            c.insert(text.to_string(), v.clone());
        }
        Ok(v)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST /embed {"texts": [...]} -> {"vectors": [[...]]}`.
#[derive(Debug)]
pub struct RemoteEmbeddingClient {
    client: JsonClient,
    dimension: usize,
}

impl RemoteEmbeddingClient {
    pub fn new(settings: RemoteSettings, dimension: usize) -> Self {
        Self {
            client: JsonClient::new(settings),
            dimension,
        }
    }
}

impl EmbeddingProvider for RemoteEmbeddingClient {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        Ok(out.pop().unwrap_or_default())
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let response: EmbedResponse = self.client.post("/embed", &EmbedRequest { texts })?;
        if response.vectors.len() != texts.len() {
            return Err(RetrievalError::Provider(format!(
                "asked for {} vectors, received {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        if let Some(v) = response.vectors.iter().find(|v| v.len() != self.dimension) {
            return Err(RetrievalError::Dimension {
                expected: self.dimension,
                actual: v.len(),
            });
        }
        Ok(response.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::serve;

    #[test]
    fn hash_embedding_is_deterministic_and_normalized() {
        let p = HashEmbeddingProvider::new(32);
        let a = p.embed("[USER] I need a cheap hotel").unwrap();
        assert_eq!(a, p.embed("[user] i NEED a cheap hotel").unwrap());
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.embed("  !! ").unwrap().iter().all(|&x| x == 0.0));
        assert_ne!(
            a,
            HashEmbeddingProvider::with_seed(32, 1)
                .embed("[USER] I need a cheap hotel")
                .unwrap()
        );
    }

    #[test]
    fn caching_provider_memoizes() {
        let p = CachingProvider::new(HashEmbeddingProvider::new(8));
        let a = p.embed("x y").unwrap();
        assert_eq!(p.embed("x y").unwrap(), a);
        assert_eq!(p.cached(), 1);
    }

    #[test]
    fn remote_client_round_trip_and_dimension_check() {
        let served = serve(vec![
            (200, r#"{"vectors":[[1.0,0.0],[0.0,1.0]]}"#.into()),
            (200, r#"{"vectors":[[1.0,0.0,0.0]]}"#.into()),
        ]);
        let client = RemoteEmbeddingClient::new(RemoteSettings::new(&served.url), 2);
        let out = client.embed_batch(&["a".into(), "b".into()]).unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let err = client.embed("c").unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::Dimension {
                expected: 2,
                actual: 3
            }
        ));
        let requests = served.requests.lock().unwrap();
        assert_eq!(requests[0].0, "/embed");
        let body: serde_json::Value = serde_json::from_str(&requests[0].1).unwrap();
        assert_eq!(body, serde_json::json!({"texts": ["a", "b"]}));
    }
}
