use std::collections::{BTreeMap, HashMap};

use super::{AdError, Array, Graph, Var};

/// Named parameter arrays, iterated in name order.
pub type Params = BTreeMap<String, Array>;

/// Lazily binds parameters into a graph as named inputs, one node per name.
pub struct Binder<'p> {
    params: &'p Params,
    bound: HashMap<&'p str, Var>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self {
            params,
            bound: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var, AdError> {
        let (key, value) = self
            .params
            .get_key_value(name)
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))?;
        if let Some(v) = self.bound.get(key.as_str()) {
            return Ok(*v);
        }
        let v = g.input(key.clone(), value.clone())?;
        self.bound.insert(key.as_str(), v);
        Ok(v)
    }
}
