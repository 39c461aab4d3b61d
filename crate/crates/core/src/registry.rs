//! Name-keyed registries for interchangeable pipeline strategies.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} '{name}' (available: {})", available.join(", "))]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: Vec<String>,
}

type Factory<T, P> = Box<dyn Fn(&P) -> Box<T> + Send + Sync>;

/// Maps strategy names to factories that build a boxed trait object from parameters `P`.
///
/// Registration order is preserved; [`Registry::names`] lists entries in that order.
pub struct Registry<T: ?Sized, P = ()> {
    kind: &'static str,
    entries: Vec<(String, Factory<T, P>)>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry with that name.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&P) -> Box<T> + Send + Sync + 'static,
    {
        let factory: Factory<T, P> = Box::new(factory);
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = factory,
            None => self.entries.push((name.to_owned(), factory)),
        }
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>, UnknownStrategy> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f(params))
            .ok_or_else(|| UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                available: self.names(),
            })
    }
}

impl<T: ?Sized, P> fmt::Debug for Registry<T, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Fixed(String);

    impl Greeter for Fixed {
        fn greet(&self) -> String {
            self.0.clone()
        }
    }

    #[test]
    fn create_by_name_and_report_unknown() {
        let mut reg: Registry<dyn Greeter, String> = Registry::new("greeter");
        reg.register("plain", |p: &String| Box::new(Fixed(p.clone())));
        reg.register("loud", |p: &String| Box::new(Fixed(p.to_uppercase())));

        assert_eq!(reg.names(), vec!["plain", "loud"]);
        assert_eq!(reg.create("loud", &"hi".into()).unwrap().greet(), "HI");

        let err = reg.create("quiet", &"hi".into()).err().unwrap();
        assert_eq!(err.kind, "greeter");
        assert_eq!(err.available, vec!["plain", "loud"]);
        assert!(err.to_string().contains("plain, loud"));
    }

    #[test]
    fn re_registering_replaces_in_place() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("a", |_| Box::new(Fixed("one".into())));
        reg.register("b", |_| Box::new(Fixed("two".into())));
        reg.register("a", |_| Box::new(Fixed("three".into())));
        assert_eq!(reg.names(), vec!["a", "b"]);
        assert_eq!(reg.create("a", &()).unwrap().greet(), "three");
    }
}
