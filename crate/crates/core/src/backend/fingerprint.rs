//! Content-addressed request identity.
//!
//! The canonical byte string is line oriented; every variable-length field
//! is length-prefixed so that no two requests share an encoding:
//!
//! ```text
//! mathagent.request.v1\n
//! model_id <byte-len>\n<bytes>\n
//! system_prompt <byte-len>\n<bytes>\n
//! segments <count>\n
//!   text <byte-len>\n<bytes>\n
//!   image <kind> <media-type-byte-len>\n<media-type>\n<sha256-hex of payload>\n
//! temperature <IEEE-754 bits, 16 lowercase hex digits>\n
//! max_tokens <decimal>\n
//! ```
//!
//! The image payload is the decoded bytes for inline images, the file
//! contents for readable file paths, and otherwise the reference string
//! itself. The request tag is excluded.

use sha2::{Digest, Sha256};

use super::{ModelRequest, Segment};
use crate::data_model::ImageKind;

fn field(out: &mut Vec<u8>, name: &str, value: &[u8]) {
    out.extend_from_slice(format!("{name} {}\n", value.len()).as_bytes());
    out.extend_from_slice(value);
    out.push(b'\n');
}

pub fn canonical_bytes(request: &ModelRequest) -> Vec<u8> {
    let mut out = b"mathagent.request.v1\n".to_vec();
    field(&mut out, "model_id", request.model_id.as_bytes());
    field(&mut out, "system_prompt", request.system_prompt.as_bytes());
    out.extend_from_slice(format!("segments {}\n", request.segments.len()).as_bytes());
    for seg in &request.segments {
        match seg {
            Segment::Text(t) => field(&mut out, "text", t.as_bytes()),
            Segment::Image(img) => {
                let kind = match img.kind {
                    ImageKind::FilePath => "file_path",
                    ImageKind::InlineBase64 => "inline_base64",
                    ImageKind::Url => "url",
                };
                let payload = match img.kind {
                    ImageKind::InlineBase64 => img.inline_bytes().and_then(Result::ok),
                    ImageKind::FilePath => std::fs::read(&img.value).ok(),
                    ImageKind::Url => None,
                }
                .unwrap_or_else(|| img.value.as_bytes().to_vec());
                field(&mut out, &format!("image {kind}"), img.media_type.as_bytes());
                out.extend_from_slice(hex::encode(Sha256::digest(&payload)).as_bytes());
                out.push(b'\n');
            }
        }
    }
    // 0.0 and -0.0 are the same temperature.
    let temperature = if request.temperature == 0.0 { 0.0f64 } else { request.temperature };
    out.extend_from_slice(format!("temperature {:016x}\n", temperature.to_bits()).as_bytes());
    out.extend_from_slice(format!("max_tokens {}\n", request.max_tokens).as_bytes());
    out
}

/// Lowercase hex SHA-256 of [`canonical_bytes`].
pub fn request_fingerprint(request: &ModelRequest) -> String {
    hex::encode(Sha256::digest(canonical_bytes(request)))
}
