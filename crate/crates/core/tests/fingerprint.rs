use std::collections::{HashMap, HashSet};

use base64::Engine;
use mathagent::backend::{canonical_bytes, request_fingerprint, Decoding, ModelRequest, PhaseTag, Segment};
use mathagent::data_model::{ImageKind, ImageRef};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

// Written from the documented byte layout, without reusing library helpers.
fn oracle_bytes(r: &ModelRequest) -> Vec<u8> {
    let mut s: Vec<u8> = Vec::new();
    let mut put = |b: &[u8]| s.extend_from_slice(b);
    put(b"mathagent.request.v1\n");
    put(format!("model_id {}\n", r.model_id.len()).as_bytes());
    put(r.model_id.as_bytes());
    put(b"\n");
    put(format!("system_prompt {}\n", r.system_prompt.len()).as_bytes());
    put(r.system_prompt.as_bytes());
    put(b"\n");
    put(format!("segments {}\n", r.segments.len()).as_bytes());
    for seg in &r.segments {
        match seg {
            Segment::Text(t) => {
                put(format!("text {}\n", t.len()).as_bytes());
                put(t.as_bytes());
                put(b"\n");
            }
            Segment::Image(img) => {
                let (kind, payload) = match img.kind {
                    ImageKind::InlineBase64 => (
                        "inline_base64",
                        base64::engine::general_purpose::STANDARD.decode(img.value.trim()).unwrap(),
                    ),
                    ImageKind::FilePath => ("file_path", std::fs::read(&img.value).unwrap()),
                    ImageKind::Url => ("url", img.value.clone().into_bytes()),
                };
                put(format!("image {kind} {}\n{}\n", img.media_type.len(), img.media_type).as_bytes());
                let digest: String = Sha256::digest(&payload).iter().map(|b| format!("{b:02x}")).collect();
                put(digest.as_bytes());
                put(b"\n");
            }
        }
    }
    let t = if r.temperature == 0.0 { 0u64 } else { r.temperature.to_bits() };
    put(format!("temperature {t:016x}\n").as_bytes());
    put(format!("max_tokens {}\n", r.max_tokens).as_bytes());
    s
}

fn oracle_fingerprint(r: &ModelRequest) -> String {
    Sha256::digest(oracle_bytes(r)).iter().map(|b| format!("{b:02x}")).collect()
}

fn random_request(rng: &mut ChaCha8Rng) -> ModelRequest {
    const WORDS: &[&str] = &["", "a", "b\n", "step 1", "Triangle(A, B, C)", "é", "text 3\n", "\n\n"];
    let pick = |rng: &mut ChaCha8Rng| WORDS[rng.gen_range(0..WORDS.len())].to_string();
    let decoding = Decoding { temperature: [0.0, -0.0, 0.2, 1.0][rng.gen_range(0..4)], max_tokens: rng.gen_range(1..4) };
    let model = ["gpt-4o", "claude", "m"][rng.gen_range(0..3)];
    let mut r = ModelRequest::new(model, decoding, pick(rng));
    for _ in 0..rng.gen_range(1..4) {
        r = if rng.gen_bool(0.2) {
            let bytes: Vec<u8> = (0..rng.gen_range(0..6)).map(|_| rng.gen()).collect();
            let img = if rng.gen_bool(0.5) {
                ImageRef::inline(&bytes, "image/png")
            } else {
                ImageRef { kind: ImageKind::Url, value: format!("https://x/{}", rng.gen::<u8>()), media_type: "image/jpeg".into() }
            };
            r.image(img)
        } else {
            r.text(pick(rng))
        };
    }
    r
}

#[test]
fn matches_independent_serializer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let r = random_request(&mut rng);
        assert_eq!(canonical_bytes(&r), oracle_bytes(&r));
        assert_eq!(request_fingerprint(&r), oracle_fingerprint(&r));
    }
}

#[test]
fn file_path_images_hash_file_contents() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    std::fs::write(&a, b"same bytes").unwrap();
    std::fs::write(&b, b"same bytes").unwrap();
    let req = |p: &std::path::Path| {
        ModelRequest::new("m", Decoding::default(), "s").text("t").image(ImageRef {
            kind: ImageKind::FilePath,
            value: p.display().to_string(),
            media_type: "image/png".into(),
        })
    };
    assert_eq!(request_fingerprint(&req(&a)), oracle_fingerprint(&req(&a)));
    assert_eq!(request_fingerprint(&req(&a)), request_fingerprint(&req(&b)));
    std::fs::write(&b, b"other bytes").unwrap();
    assert_ne!(request_fingerprint(&req(&a)), request_fingerprint(&req(&b)));
}

#[test]
fn distinct_requests_get_distinct_fingerprints() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut fps = HashSet::new();
    while seen.len() < 10_000 {
        let r = random_request(&mut rng);
        let temperature = if r.temperature == 0.0 { 0.0 } else { r.temperature };
        let key = format!("{:?}", (&r.model_id, &r.system_prompt, &r.segments, temperature.to_bits(), r.max_tokens));
        let fp = request_fingerprint(&r);
        match seen.get(&key) {
            Some(prev) => assert_eq!(prev, &fp),
            None => {
                assert!(fps.insert(fp.clone()), "collision for distinct request {r:?}");
                seen.insert(key, fp);
            }
        }
    }
}

proptest! {
    #[test]
    fn tag_never_changes_fingerprint(text in ".{0,40}", id in "[a-z0-9]{1,8}") {
        let r = ModelRequest::new("m", Decoding::default(), "sys").text(text);
        let tagged = r.clone().tagged(PhaseTag::Phase3, &id);
        prop_assert_eq!(request_fingerprint(&r), request_fingerprint(&tagged));
    }

    #[test]
    fn moving_a_text_boundary_changes_fingerprint(a in "[a-z]{1,10}", b in "[a-z]{1,10}") {
        let split = ModelRequest::new("m", Decoding::default(), "").text(a.clone()).text(b.clone());
        let joined = ModelRequest::new("m", Decoding::default(), "").text(format!("{a}{b}"));
        prop_assert_ne!(request_fingerprint(&split), request_fingerprint(&joined));
    }
}
