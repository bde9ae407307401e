//! Opaque identifier tokens.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! token {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(token: impl Into<String>) -> Self {
                Self(token.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

token!(
    /// A participating device. Ordering is lexicographic, which is what the
    /// layout solver uses to break ties.
    DeviceId
);
token!(
    /// A team of devices. Every device starts in its own singleton group.
    GroupId
);
token!(
    /// A capturing session created when a host closes team formation.
    SessionId
);
token!(
    /// One synchronized capture command.
    OrderId
);
