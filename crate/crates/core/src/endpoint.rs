//! Endpoint identities shared by every stage of the pipeline.

use std::cmp::Ordering;
use std::fmt;
use std::net::Ipv6Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    /// Numeric measurement-probe identifier.
    Probe,
    /// IPv4 or IPv6 address in canonical text form.
    Ip,
    /// Free-form name (city, host label) used by hand-built graphs.
    Label,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("invalid address {0:?}")]
    InvalidAddress(String),
    #[error("invalid probe id {0:?}")]
    InvalidProbe(String),
    #[error("empty endpoint key")]
    Empty,
}

/// A graph node: either a probe, an IP address or a plain label.
///
/// Keys order by their text value first and kind second, so "smallest key"
/// tie-breaks are lexicographic on what gets printed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EndpointKey {
    kind: EndpointKind,
    value: String,
}

impl EndpointKey {
    pub fn probe(id: u64) -> Self {
        Self {
            kind: EndpointKind::Probe,
            value: id.to_string(),
        }
    }

    /// Parses and canonicalizes an IP address. IPv4 octets may carry
    /// leading zeros on input; they never do on output.
    pub fn ip(text: &str) -> Result<Self, EndpointError> {
        let value = canonical_ip(text).ok_or_else(|| EndpointError::InvalidAddress(text.to_string()))?;
        Ok(Self {
            kind: EndpointKind::Ip,
            value,
        })
    }

    pub fn label(text: impl Into<String>) -> Self {
        Self {
            kind: EndpointKind::Label,
            value: text.into(),
        }
    }

    /// Infers the kind from text: all digits is a probe, a parseable address
    /// is an IP, anything else is a label.
    pub fn infer(text: &str) -> Result<Self, EndpointError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(EndpointError::Empty);
        }
        if text.bytes().all(|b| b.is_ascii_digit()) {
            return text
                .parse::<u64>()
                .map(Self::probe)
                .map_err(|_| EndpointError::InvalidProbe(text.to_string()));
        }
        if let Some(value) = canonical_ip(text) {
            return Ok(Self {
                kind: EndpointKind::Ip,
                value,
            });
        }
        Ok(Self::label(text))
    }

    pub fn kind(&self) -> EndpointKind {
        self.kind
    }

    pub fn as_str(&self) -> &str {
        &self.value
    }
}

impl Ord for EndpointKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value.cmp(&other.value).then(self.kind.cmp(&other.kind))
    }
}

impl PartialOrd for EndpointKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EndpointKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

/// Canonical text for an IPv4 or IPv6 address, or `None` if `text` is not one.
pub fn canonical_ip(text: &str) -> Option<String> {
    let text = text.trim();
    if let Some(octets) = parse_ipv4_lenient(text) {
        return Some(format!("{}.{}.{}.{}", octets[0], octets[1], octets[2], octets[3]));
    }
    if text.contains(':') {
        return text.parse::<Ipv6Addr>().ok().map(|a| a.to_string());
    }
    None
}

/// Dotted-quad parser that accepts leading zeros ("010.001.0.1"), which
/// `std::net::Ipv4Addr` rejects.
pub fn parse_ipv4_lenient(text: &str) -> Option<[u8; 4]> {
    let mut octets = [0u8; 4];
    let mut parts = text.split('.');
    for slot in octets.iter_mut() {
        let part = parts.next()?;
        if part.is_empty() || part.len() > 3 || !part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        *slot = part.parse::<u8>().ok()?;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(octets)
}
