//! What the replay proxies serve for a request: archived bytes, a generated
//! substitute, or a miss.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveEntry, ImageAnnotation, PageArchive};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Original,
    GeneratedClient,
    GeneratedServer,
    Hybrid,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Mode::Original),
            "generated_client" => Ok(Mode::GeneratedClient),
            "generated_server" => Ok(Mode::GeneratedServer),
            "hybrid" => Ok(Mode::Hybrid),
            other => Err(format!(
                "unknown serve mode `{other}` (original, generated_client, generated_server, hybrid)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Original => "original",
            Mode::GeneratedClient => "generated_client",
            Mode::GeneratedServer => "generated_server",
            Mode::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeMode {
    pub mode: Mode,
    #[serde(default)]
    pub hybrid_urls: BTreeSet<String>,
}

impl ServeMode {
    pub fn original() -> Self {
        Self::new(Mode::Original)
    }

    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            hybrid_urls: BTreeSet::new(),
        }
    }

    pub fn hybrid<I, S>(urls: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            mode: Mode::Hybrid,
            hybrid_urls: urls.into_iter().map(Into::into).collect(),
        }
    }

    /// The prompt to generate `image` from, or `None` when the original must
    /// be served. Hybrid mode uses the server prompt and falls back to the
    /// client prompt.
    pub fn prompt_for<'a>(&self, image: &'a ImageAnnotation) -> Option<&'a str> {
        let nonempty = |p: &'a Option<String>| p.as_deref().filter(|s| !s.trim().is_empty());
        match self.mode {
            Mode::Original => None,
            Mode::GeneratedClient => nonempty(&image.client_prompt),
            Mode::GeneratedServer => nonempty(&image.server_prompt),
            Mode::Hybrid => {
                if self.hybrid_urls.contains(&image.url) {
                    nonempty(&image.server_prompt).or_else(|| nonempty(&image.client_prompt))
                } else {
                    None
                }
            }
        }
    }

    pub fn substitutes(&self, image: &ImageAnnotation) -> bool {
        self.prompt_for(image).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    #[default]
    NotFound404,
    Gateway502,
}

impl MissPolicy {
    pub fn status(self) -> u16 {
        match self {
            MissPolicy::NotFound404 => 404,
            MissPolicy::Gateway502 => 502,
        }
    }
}

impl FromStr for MissPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "404" | "not_found_404" | "not-found" => Ok(MissPolicy::NotFound404),
            "502" | "gateway_502" | "gateway" => Ok(MissPolicy::Gateway502),
            other => Err(format!("unknown miss policy `{other}` (404, 502)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision<'a> {
    Archived(&'a ArchiveEntry),
    Generate {
        entry: &'a ArchiveEntry,
        image: &'a ImageAnnotation,
        prompt: &'a str,
    },
    Miss,
}

/// Exact `(url, method)` lookup; a plain-http request also matches an https
/// entry for the same URL since replay runs without TLS.
pub fn resolve_entry<'a>(archive: &'a PageArchive, method: &str, url: &str) -> Option<&'a ArchiveEntry> {
    archive.lookup(url, method).or_else(|| {
        let rest = url.strip_prefix("http://")?;
        archive.lookup(&format!("https://{rest}"), method)
    })
}

pub fn decide<'a>(archive: &'a PageArchive, mode: &ServeMode, method: &str, url: &str) -> Decision<'a> {
    let Some(entry) = resolve_entry(archive, method, url) else {
        return Decision::Miss;
    };
    if entry.is_image {
        if let Some(image) = archive.image(&entry.url) {
            if let Some(prompt) = mode.prompt_for(image) {
                return Decision::Generate {
                    entry,
                    image,
                    prompt,
                };
            }
        }
    }
    Decision::Archived(entry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(client: Option<&str>, server: Option<&str>) -> ImageAnnotation {
        let mut i = ImageAnnotation::new("https://x.com/a.png", 10, 10, true);
        i.client_prompt = client.map(String::from);
        i.server_prompt = server.map(String::from);
        i
    }

    #[test]
    fn prompt_selection() {
        let both = image(Some("ctx"), Some("cap; ctx"));
        assert_eq!(ServeMode::original().prompt_for(&both), None);
        assert_eq!(ServeMode::new(Mode::GeneratedClient).prompt_for(&both), Some("ctx"));
        assert_eq!(ServeMode::new(Mode::GeneratedServer).prompt_for(&both), Some("cap; ctx"));
        assert_eq!(ServeMode::hybrid(["https://x.com/a.png"]).prompt_for(&both), Some("cap; ctx"));
        assert_eq!(ServeMode::hybrid(["https://x.com/b.png"]).prompt_for(&both), None);

        let empty_client = image(Some(""), None);
        assert_eq!(ServeMode::new(Mode::GeneratedClient).prompt_for(&empty_client), None);
        assert_eq!(ServeMode::new(Mode::GeneratedServer).prompt_for(&empty_client), None);
        assert_eq!(
            ServeMode::hybrid(["https://x.com/a.png"]).prompt_for(&image(Some("ctx"), None)),
            Some("ctx")
        );
    }

    #[test]
    fn parse_modes() {
        for m in ["original", "generated_client", "generated_server", "hybrid"] {
            assert_eq!(m.parse::<Mode>().unwrap().to_string(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
        assert_eq!("502".parse::<MissPolicy>().unwrap().status(), 502);
    }
}
