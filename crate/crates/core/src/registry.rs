//! Named server-side functions that `callAPI` states and `api_call` options
//! invoke, e.g. a model proposing bounding boxes for the annotator to correct.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde_json::Value;

use crate::engine::{InstanceRef, SavedAnswer};

/// A plugin receives the current instance and the answers saved so far and
/// returns an opaque JSON payload. Plugins must not write to the store.
pub trait ApiFunction: Send + Sync {
    fn call(&self, instance: &InstanceRef, answers: &[SavedAnswer]) -> Result<Value, String>;
}

impl<F> ApiFunction for F
where
    F: Fn(&InstanceRef, &[SavedAnswer]) -> Result<Value, String> + Send + Sync,
{
    fn call(&self, instance: &InstanceRef, answers: &[SavedAnswer]) -> Result<Value, String> {
        self(instance, answers)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error("no API function named `{0}`")]
    Unknown(String),
    #[error("API function `{name}` failed: {message}")]
    Failed { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("API function `{0}` is already registered")]
pub struct DuplicateFunction(pub String);

#[derive(Clone, Default)]
pub struct ApiRegistry {
    functions: BTreeMap<String, Arc<dyn ApiFunction>>,
}

impl fmt::Debug for ApiRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.functions.keys()).finish()
    }
}

impl ApiRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        function: impl ApiFunction + 'static,
    ) -> Result<(), DuplicateFunction> {
        let name = name.into();
        if self.functions.contains_key(&name) {
            return Err(DuplicateFunction(name));
        }
        self.functions.insert(name, Arc::new(function));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    /// Runs `name`. A panicking plugin is reported as a failure.
    pub fn call(
        &self,
        name: &str,
        instance: &InstanceRef,
        answers: &[SavedAnswer],
    ) -> Result<Value, CallError> {
        let f = self
            .functions
            .get(name)
            .ok_or_else(|| CallError::Unknown(name.to_string()))?;
        match catch_unwind(AssertUnwindSafe(|| f.call(instance, answers))) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(message)) => Err(CallError::Failed {
                name: name.to_string(),
                message,
            }),
            Err(_) => Err(CallError::Failed {
                name: name.to_string(),
                message: "function panicked".to_string(),
            }),
        }
    }
}
