use std::io::Read;
use std::time::Duration;

use aquamine_core::ingest::{FetchAdapter, FileFetcher};
use aquamine_core::Error;

/// Fetches `http(s)://` URLs with a blocking client and everything else
/// from the filesystem.
pub struct UrlFetcher {
    agent: ureq::Agent,
}

impl Default for UrlFetcher {
    fn default() -> Self {
        UrlFetcher { agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build() }
    }
}

impl FetchAdapter for UrlFetcher {
    fn fetch(&self, url: &str) -> aquamine_core::Result<Vec<u8>> {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return FileFetcher.fetch(url);
        }
        let resp = self.agent.get(url).call().map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
        let mut body = Vec::new();
        resp.into_reader()
            .read_to_end(&mut body)
            .map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
        Ok(body)
    }
}
