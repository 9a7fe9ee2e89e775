//! Static bearer tokens from an allowlist file.
//!
//! One account per line: `email role token`, separated by whitespace.
//! Blank lines and `#` comments are ignored.
//!
//! ```text
//! # email               role       token
//! lead@example.org      admin      8f1c2e
//! ana@example.org       annotator  77ab90
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Admin,
    Annotator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub email: String,
    pub role: Role,
}

impl Principal {
    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }
}

#[derive(Debug, Error)]
pub enum AllowlistError {
    #[error("cannot read allowlist {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("allowlist line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct Allowlist {
    by_token: HashMap<String, Principal>,
}

impl Allowlist {
    pub fn parse(text: &str) -> Result<Self, AllowlistError> {
        let mut by_token = HashMap::new();
        let mut emails = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| AllowlistError::Line { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [email, role, token] = fields[..] else {
                return Err(err(format!("expected `email role token`, got {} fields", fields.len())));
            };
            if !email.contains('@') {
                return Err(err(format!("{email:?} is not an email address")));
            }
            let role = match role {
                "admin" => Role::Admin,
                "annotator" => Role::Annotator,
                other => return Err(err(format!("unknown role {other:?}"))),
            };
            if !emails.insert(email.to_string()) {
                return Err(err(format!("{email} is listed twice")));
            }
            let principal = Principal {
                email: email.to_string(),
                role,
            };
            if by_token.insert(token.to_string(), principal).is_some() {
                return Err(err("token is not unique".into()));
            }
        }
        Ok(Self { by_token })
    }

    pub fn load(path: &Path) -> Result<Self, AllowlistError> {
        let text = std::fs::read_to_string(path).map_err(|source| AllowlistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn authenticate(&self, token: &str) -> Option<&Principal> {
        self.by_token.get(token)
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }
}
