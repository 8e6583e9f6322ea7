//! Name-keyed registry of strategy constructors.

use std::fmt;

type Factory<T> = Box<dyn Fn() -> Box<T> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    entries: Vec<(String, Factory<T>)>,
}

impl<T: ?Sized> Default for Registry<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: ?Sized> Registry<T> {
    /// Registers `factory` under `name`, replacing an earlier entry.
    pub fn register(&mut self, name: &str, factory: impl Fn() -> Box<T> + Send + Sync + 'static) {
        self.entries.retain(|(n, _)| n != name);
        self.entries.push((name.to_string(), Box::new(factory)));
    }

    pub fn create(&self, name: &str) -> Option<Box<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, f)| f())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
