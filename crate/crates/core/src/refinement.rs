//! Named callbacks attached to function states.
//!
//! A refinement name is either matched exactly (`"erp"`) or by its scheme,
//! the part before the first `:` (`"webhook:erp"` resolves to the handler
//! registered as `"webhook"`, which receives the full name).

use std::collections::HashMap;
use std::sync::Arc;

use crate::model::Bindings;
use crate::task::{Piid, Siid};

pub struct RefinementContext<'a> {
    pub name: &'a str,
    pub pid: &'a str,
    pub piid: &'a Piid,
    pub siid: &'a Siid,
    pub state_id: &'a str,
    pub variables: &'a Bindings,
}

pub trait Refinement: Send + Sync {
    /// Returns variable writes to apply before the transition is taken.
    fn invoke(&self, ctx: &RefinementContext<'_>) -> Result<Bindings, String>;
}

impl<F> Refinement for F
where
    F: Fn(&RefinementContext<'_>) -> Result<Bindings, String> + Send + Sync,
{
    fn invoke(&self, ctx: &RefinementContext<'_>) -> Result<Bindings, String> {
        self(ctx)
    }
}

#[derive(Clone, Default)]
pub struct RefinementRegistry {
    handlers: HashMap<String, Arc<dyn Refinement>>,
}

impl RefinementRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, handler: impl Refinement + 'static) -> &mut Self {
        self.handlers.insert(name.into(), Arc::new(handler));
        self
    }

    pub fn resolve(&self, name: &str) -> Option<Arc<dyn Refinement>> {
        if let Some(h) = self.handlers.get(name) {
            return Some(h.clone());
        }
        let (scheme, _) = name.split_once(':')?;
        self.handlers.get(scheme).cloned()
    }
}
