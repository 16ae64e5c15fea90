//! Pre-mapping credentials.
//!
//! The most informative features (highest Shannon entropy over a batch) are
//! discretized to 4-bit levels and packed with the grading outcome into a
//! canonical binary record sealed by SHA-256. A QR code carries only
//! `base64url(product_id ‖ digest)`; the full record is looked up and checked
//! against it. See `docs/credential-layout.md` for the byte layout.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{DecisionTrace, ExitPoint, ScreeningOutcome};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FruitSample};
use crate::rgid::{RgidEntry, VarietyId};

pub const CREDENTIAL_VERSION: u8 = 1;
pub const LEVELS: usize = 16;
pub const DIGEST_LEN: usize = 32;
pub const PRODUCT_ID_LEN: usize = 16;
/// Encoded size with empty strings and no feature codes.
pub const MIN_LEN: usize = 1 + PRODUCT_ID_LEN + 2 + 2 + 2 + 1 + 1 + 2 + 4 + 8 + DIGEST_LEN;

/// Level 0..=15 of a value on `[0, 1]`; 1.0 falls in the top bin.
pub fn level(v: f64) -> u8 {
    ((v.clamp(0.0, 1.0) * LEVELS as f64) as usize).min(LEVELS - 1) as u8
}

/// Shannon entropy (bits) of a histogram.
pub fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

pub fn feature_entropies(batch: &[FeatureVector]) -> Result<Vec<f64>> {
    let n = batch.first().ok_or_else(|| Error::domain("empty batch"))?.values.len();
    if batch.iter().any(|v| v.values.len() != n) {
        return Err(Error::domain("feature vectors differ in length"));
    }
    Ok((0..n)
        .map(|k| {
            let mut hist = [0usize; LEVELS];
            for v in batch {
                hist[level(v.values[k]) as usize] += 1;
            }
            entropy(&hist)
        })
        .collect())
}

/// The `k` highest-entropy features, ties broken by `phi` order, returned
/// in ascending index order.
pub fn select_features(batch: &[FeatureVector], k: usize) -> Result<Vec<usize>> {
    let h = feature_entropies(batch)?;
    if k == 0 || k > h.len() {
        return Err(Error::domain(format!("k = {k} with {} features", h.len())));
    }
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitKind {
    Screening = 0,
    Layer = 1,
    Full = 2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCode {
    pub id: String,
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub version: u8,
    #[serde(with = "hex_bytes")]
    pub product_id: [u8; PRODUCT_ID_LEN],
    pub lambda: VarietyId,
    pub grade: String,
    pub feature_codes: Vec<FeatureCode>,
    pub exit_kind: ExitKind,
    pub exit_layer: u16,
    /// Score at exit in units of 1/10000.
    pub cumulative: u32,
    /// Unix seconds.
    pub t_issue: u64,
    #[serde(with = "hex_bytes")]
    pub digest: [u8; DIGEST_LEN],
}

mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(b: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(D::Error::custom)?;
        v.try_into()
            .map_err(|_| D::Error::custom(format!("expected {N} bytes")))
    }
}

/// First 16 bytes of SHA-256 over `origin/variety` NUL `sample_id`.
pub fn product_id(lambda: &VarietyId, sample_id: &str) -> [u8; PRODUCT_ID_LEN] {
    let mut h = Sha256::new();
    h.update(lambda.to_string().as_bytes());
    h.update([0u8]);
    h.update(sample_id.as_bytes());
    let d = h.finalize();
    let mut out = [0u8; PRODUCT_ID_LEN];
    out.copy_from_slice(&d[..PRODUCT_ID_LEN]);
    out
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len()).map_err(|_| Error::Encoding(format!("string of {} bytes too long", s.len())))?;
    buf.extend_from_slice(&n.to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

impl Credential {
    /// Canonical encoding of every field before the digest.
    pub fn body(&self) -> Result<Vec<u8>> {
        let mut b = Vec::with_capacity(MIN_LEN + 16 * self.feature_codes.len());
        b.push(self.version);
        b.extend_from_slice(&self.product_id);
        put_str(&mut b, &self.lambda.origin)?;
        put_str(&mut b, &self.lambda.variety)?;
        put_str(&mut b, &self.grade)?;
        let k = u8::try_from(self.feature_codes.len())
            .map_err(|_| Error::Encoding("more than 255 feature codes".into()))?;
        b.push(k);
        for c in &self.feature_codes {
            if c.level as usize >= LEVELS {
                return Err(Error::Encoding(format!("level {} out of range", c.level)));
            }
            put_str(&mut b, &c.id)?;
            b.push(c.level);
        }
        b.push(self.exit_kind as u8);
        b.extend_from_slice(&self.exit_layer.to_be_bytes());
        b.extend_from_slice(&self.cumulative.to_be_bytes());
        b.extend_from_slice(&self.t_issue.to_be_bytes());
        Ok(b)
    }

    pub fn compute_digest(&self) -> Result<[u8; DIGEST_LEN]> {
        Ok(Sha256::digest(self.body()?).into())
    }

    /// Recompute and store the digest.
    pub fn seal(&mut self) -> Result<()> {
        self.digest = self.compute_digest()?;
        Ok(())
    }

    /// Body followed by the stored digest.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = self.body()?;
        b.extend_from_slice(&self.digest);
        Ok(b)
    }

    pub fn qr_text(&self) -> String {
        qr_text(&self.product_id, &self.digest)
    }

    pub fn score(&self) -> f64 {
        self.cumulative as f64 / 10_000.0
    }
}

pub fn qr_text(product_id: &[u8; PRODUCT_ID_LEN], digest: &[u8; DIGEST_LEN]) -> String {
    let mut raw = Vec::with_capacity(PRODUCT_ID_LEN + DIGEST_LEN);
    raw.extend_from_slice(product_id);
    raw.extend_from_slice(digest);
    URL_SAFE_NO_PAD.encode(raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub credential: Credential,
    pub bytes: Vec<u8>,
    pub qr_text: String,
}

fn is_resolved(t: &DecisionTrace) -> bool {
    match t.exit {
        ExitPoint::Screening => !matches!(t.screening, None | Some(ScreeningOutcome::Continue)),
        ExitPoint::Layer(l) => l >= 1 && l <= t.cumulative.len(),
        ExitPoint::Full => t.composite.is_some(),
    }
}

/// Build and seal a credential for a decided sample.
pub fn encode_credential(
    trace: &DecisionTrace,
    sample: &FruitSample,
    entry: &RgidEntry,
    features: &FeatureVector,
    selected: &[usize],
    t_issue: u64,
) -> Result<Encoded> {
    if !is_resolved(trace) {
        return Err(Error::Unresolved);
    }
    if trace.sample_id != sample.id {
        return Err(Error::Invariant(format!(
            "trace is for `{}`, sample is `{}`",
            trace.sample_id, sample.id
        )));
    }
    let feature_codes = selected
        .iter()
        .map(|&k| {
            let spec = entry
                .phi
                .get(k)
                .ok_or_else(|| Error::domain(format!("selected feature {k} outside phi")))?;
            let v = *features
                .values
                .get(k)
                .ok_or_else(|| Error::domain(format!("feature vector lacks index {k}")))?;
            Ok(FeatureCode {
                id: spec.id.clone(),
                level: level(v),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (exit_kind, exit_layer) = match trace.exit {
        ExitPoint::Screening => (ExitKind::Screening, 0),
        ExitPoint::Layer(l) => (
            ExitKind::Layer,
            u16::try_from(l).map_err(|_| Error::Encoding("exit layer too large".into()))?,
        ),
        ExitPoint::Full => (ExitKind::Full, 0),
    };
    let score = match trace.exit {
        ExitPoint::Screening => trace.s_early.unwrap_or(0.0),
        _ => trace.final_score(),
    };
    let mut credential = Credential {
        version: CREDENTIAL_VERSION,
        product_id: product_id(&sample.lambda, &sample.id),
        lambda: sample.lambda.clone(),
        grade: trace.decision.label().to_string(),
        feature_codes,
        exit_kind,
        exit_layer,
        cumulative: (score.clamp(0.0, 1.0) * 10_000.0).round() as u32,
        t_issue,
        digest: [0; DIGEST_LEN],
    };
    credential.seal()?;
    let bytes = credential.to_bytes()?;
    let qr_text = credential.qr_text();
    Ok(Encoded {
        credential,
        bytes,
        qr_text,
    })
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.b.len() {
            return Err(Error::Truncated(format!("need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Encoding(e.to_string()))
    }
}

/// Parse a binary record. The digest is checked before any field is
/// interpreted, so corruption anywhere reports [`Error::DigestMismatch`].
pub fn decode_credential(bytes: &[u8]) -> Result<Credential> {
    if bytes.len() < MIN_LEN {
        return Err(Error::Truncated(format!("{} bytes, minimum is {MIN_LEN}", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let digest: [u8; DIGEST_LEN] = digest.try_into().unwrap();
    if <[u8; DIGEST_LEN]>::from(Sha256::digest(body)) != digest {
        return Err(Error::DigestMismatch);
    }
    let mut r = Reader { b: body, pos: 0 };
    let version = r.u8()?;
    if version != CREDENTIAL_VERSION {
        return Err(Error::Version(version));
    }
    let product_id: [u8; PRODUCT_ID_LEN] = r.take(PRODUCT_ID_LEN)?.try_into().unwrap();
    let origin = r.string()?;
    let variety = r.string()?;
    let grade = r.string()?;
    let k = r.u8()?;
    let mut feature_codes = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let id = r.string()?;
        let level = r.u8()?;
        if level as usize >= LEVELS {
            return Err(Error::Encoding(format!("level {level} out of range")));
        }
        feature_codes.push(FeatureCode { id, level });
    }
    let exit_kind = match r.u8()? {
        0 => ExitKind::Screening,
        1 => ExitKind::Layer,
        2 => ExitKind::Full,
        other => return Err(Error::Encoding(format!("unknown exit kind {other}"))),
    };
    let exit_layer = r.u16()?;
    let cumulative = r.u32()?;
    let t_issue = r.u64()?;
    if r.pos != body.len() {
        return Err(Error::Encoding(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Credential {
        version,
        product_id,
        lambda: VarietyId { origin, variety },
        grade,
        feature_codes,
        exit_kind,
        exit_layer,
        cumulative,
        t_issue,
        digest,
    })
}

/// Check a scanned QR payload against a full record.
pub fn verify(qr_text: &str, record: &Credential) -> Result<bool> {
    let raw = URL_SAFE_NO_PAD
        .decode(qr_text.trim())
        .map_err(|e| Error::Encoding(e.to_string()))?;
    if raw.len() != PRODUCT_ID_LEN + DIGEST_LEN {
        return Err(Error::Encoding(format!(
            "QR payload is {} bytes, expected {}",
            raw.len(),
            PRODUCT_ID_LEN + DIGEST_LEN
        )));
    }
    let (pid, digest) = raw.split_at(PRODUCT_ID_LEN);
    Ok(pid == record.product_id && digest == record.compute_digest()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{CascadeConfig, CascadeEngine};
    use crate::features::{extract_vector, SyntheticExtractor};
    use crate::rgid::Plane;
    use crate::testutil::{fixture_entry, fixture_sample};

    fn fv(values: Vec<f64>) -> FeatureVector {
        let planes = vec![Plane::General; values.len()];
        FeatureVector { values, planes }
    }

    fn fixture() -> Encoded {
        let e = fixture_entry();
        let s = fixture_sample();
        let cfg = CascadeConfig::sound(&e, 0.15, 0.85).unwrap();
        let trace = CascadeEngine::new(&e, cfg)
            .unwrap()
            .run(&s, &SyntheticExtractor)
            .unwrap();
        let f = extract_vector(&s, &e, &SyntheticExtractor).unwrap();
        encode_credential(&trace, &s, &e, &f, &[0, 2], 1_760_000_000).unwrap()
    }

    #[test]
    fn constant_loses_to_uniform() {
        let batch: Vec<_> = (0..160).map(|i| fv(vec![0.5, (i % 16) as f64 / 16.0 + 0.01])).collect();
        let h = feature_entropies(&batch).unwrap();
        assert_eq!(h[0], 0.0);
        assert!((h[1] - 4.0).abs() < 1e-12);
        assert_eq!(select_features(&batch, 1).unwrap(), vec![1]);
    }

    #[test]
    fn four_bins_is_two_bits() {
        let batch: Vec<_> = (0..40).map(|i| fv(vec![(i % 4) as f64 / 16.0])).collect();
        assert!((feature_entropies(&batch).unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_k_is_identity() {
        let batch = vec![fv(vec![0.1, 0.9, 0.3]), fv(vec![0.2, 0.9, 0.7])];
        assert_eq!(select_features(&batch, 3).unwrap(), vec![0, 1, 2]);
        assert!(select_features(&batch, 4).is_err());
        assert!(select_features(&[], 1).is_err());
    }

    #[test]
    fn levels() {
        assert_eq!(level(0.0), 0);
        assert_eq!(level(1.0), 15);
        assert_eq!(level(0.0625), 1);
        assert_eq!(level(0.0624), 0);
    }

    #[test]
    fn roundtrip_and_determinism() {
        let enc = fixture();
        assert_eq!(decode_credential(&enc.bytes).unwrap(), enc.credential);
        assert_eq!(enc.credential.to_bytes().unwrap(), enc.bytes);
        assert_eq!(fixture().bytes, enc.bytes);
        assert_eq!(enc.qr_text.len(), 64);
    }

    #[test]
    fn version_checked_after_digest() {
        let mut c = fixture().credential;
        c.version = 9;
        c.seal().unwrap();
        assert!(matches!(
            decode_credential(&c.to_bytes().unwrap()),
            Err(Error::Version(9))
        ));
        let mut raw = fixture().bytes;
        raw[0] = 9;
        assert!(matches!(decode_credential(&raw), Err(Error::DigestMismatch)));
    }

    #[test]
    fn short_input_is_truncated() {
        let raw = fixture().bytes;
        assert!(matches!(
            decode_credential(&raw[..MIN_LEN - 1]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn verify_pairs() {
        let enc = fixture();
        assert!(verify(&enc.qr_text, &enc.credential).unwrap());
        let mut altered = enc.credential.clone();
        altered.grade = "A".into();
        if altered.grade == enc.credential.grade {
            altered.grade = "B".into();
        }
        assert!(!verify(&enc.qr_text, &altered).unwrap());
        let mut foreign = enc.credential.clone();
        foreign.product_id[0] ^= 1;
        assert!(!verify(&enc.qr_text, &foreign).unwrap());
        assert!(matches!(
            verify("not base64!", &enc.credential),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn continue_trace_is_unresolved() {
        let e = fixture_entry();
        let s = fixture_sample();
        let cfg = CascadeConfig::sound(&e, 0.15, 0.85).unwrap();
        let mut trace = CascadeEngine::new(&e, cfg)
            .unwrap()
            .run(&s, &SyntheticExtractor)
            .unwrap();
        trace.exit = ExitPoint::Screening;
        trace.screening = Some(ScreeningOutcome::Continue);
        let f = extract_vector(&s, &e, &SyntheticExtractor).unwrap();
        assert!(matches!(
            encode_credential(&trace, &s, &e, &f, &[0], 0),
            Err(Error::Unresolved)
        ));
    }
}
