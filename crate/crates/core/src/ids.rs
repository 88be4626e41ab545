//! Identifier newtypes and the simulated clock.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulated time. One tick per federated-learning task.
pub type TaskIndex = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A task publisher (the aggregator that owns a learning task).
    PublisherId,
    "p"
);
id_type!(
    /// A mobile worker training on local data.
    WorkerId,
    "w"
);
id_type!(
    /// A pre-selected consensus node of the reputation ledger.
    MinerId,
    "m"
);
