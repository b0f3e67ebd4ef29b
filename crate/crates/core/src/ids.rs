use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Index of an application (tenant) within a scenario.
    AppId(u32)
);
id_type!(
    /// Index of a stream; every stream owns exactly one launch queue.
    StreamId(u32)
);
id_type!(
    /// Unique identifier of a dispatched atom.
    AtomId(u64)
);
id_type!(
    /// Handle to a ground-truth kernel description held by the device.
    KernelHandle(u32)
);
id_type!(
    /// Index of a request within a run.
    RequestId(u64)
);

/// Index of a TPC on the simulated device.
pub type TpcId = u32;
