//! The `webhook:<key>` refinement: POSTs the refinement context as JSON to
//! the URL configured under `key`. A response of the form
//! `{"variables": {...}}` supplies variable writes; any other 2xx body is
//! ignored.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use subjekt_core::{Bindings, Piid, Refinement, RefinementContext, Siid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebhookPayload {
    pub refinement: String,
    pub pid: String,
    pub piid: Piid,
    pub siid: Siid,
    pub state_id: String,
    pub variables: Bindings,
}

#[derive(Debug, Default, Deserialize)]
struct WebhookReply {
    #[serde(default)]
    variables: Bindings,
}

pub struct WebhookRefinement {
    urls: BTreeMap<String, String>,
    agent: ureq::Agent,
}

impl WebhookRefinement {
    pub fn new(urls: BTreeMap<String, String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        WebhookRefinement { urls, agent }
    }
}

impl Refinement for WebhookRefinement {
    fn invoke(&self, ctx: &RefinementContext<'_>) -> Result<Bindings, String> {
        let key =
            ctx.name.strip_prefix("webhook:").ok_or_else(|| format!("{:?} is not a webhook refinement", ctx.name))?;
        let url = self.urls.get(key).ok_or_else(|| format!("no webhook configured for {key:?}"))?;
        let payload = WebhookPayload {
            refinement: ctx.name.to_string(),
            pid: ctx.pid.to_string(),
            piid: ctx.piid.clone(),
            siid: ctx.siid.clone(),
            state_id: ctx.state_id.to_string(),
            variables: ctx.variables.clone(),
        };
        tracing::info!(%url, refinement = ctx.name, siid = %ctx.siid, "calling webhook");
        let mut resp = self.agent.post(url).send_json(&payload).map_err(|e| format!("POST {url}: {e}"))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| format!("POST {url}: {e}"))?;
        if !status.is_success() {
            return Err(format!("POST {url} returned {status}"));
        }
        if text.trim().is_empty() {
            return Ok(Bindings::new());
        }
        Ok(serde_json::from_str::<WebhookReply>(&text).unwrap_or_default().variables)
    }
}
