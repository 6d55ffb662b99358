//! Blocking HTTP client for the node API.

use std::time::Duration;

use biotrak_api::{now_secs, AuthHeaders, ErrorBody, DUMP_FIELD};
use biotrak_core::SigningKey;

use crate::error::CliError;

const BOUNDARY: &str = "biotrak-cli-7f3a9c21d4e8";

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: &str) -> Result<Self, CliError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| CliError::Network(format!("http client: {e}")))?;
        Ok(Client { base: base.trim_end_matches('/').to_owned(), http })
    }

    pub fn get(&self, path: &str) -> Result<Vec<u8>, CliError> {
        self.send(self.http.get(format!("{}{path}", self.base)))
    }

    pub fn post_signed(
        &self,
        path: &str,
        body: Vec<u8>,
        content_type: &str,
        key: &SigningKey,
    ) -> Result<Vec<u8>, CliError> {
        let auth = AuthHeaders::sign(key, "POST", path, &body, now_secs());
        let mut req = self.http.post(format!("{}{path}", self.base)).header("content-type", content_type);
        for (k, v) in auth.pairs() {
            req = req.header(k, v);
        }
        self.send(req.body(body))
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<Vec<u8>, CliError> {
        let resp = req.send().map_err(|e| CliError::Network(format!("{}: {e}", self.base)))?;
        let status = resp.status().as_u16();
        let body = resp.bytes().map_err(|e| CliError::Network(format!("{}: {e}", self.base)))?.to_vec();
        if (200..300).contains(&status) {
            return Ok(body);
        }
        let detail = match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(b) => {
                let mut s = format!("{} {}: {}", status, b.error.code, b.error.message);
                if !b.error.forward_to.is_empty() {
                    s.push_str(&format!(" (try {})", b.error.forward_to.join(", ")));
                }
                s
            }
            Err(_) => format!("{status}: {}", String::from_utf8_lossy(&body)),
        };
        Err(if status == 404 { CliError::NotFound(detail) } else { CliError::Refused(detail) })
    }
}

/// A multipart body with the dump as its only field.
pub fn multipart(dump: &[u8]) -> (String, Vec<u8>) {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{DUMP_FIELD}\"; filename=\"dump.csv\"\r\n\
         Content-Type: text/csv\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(dump);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}
