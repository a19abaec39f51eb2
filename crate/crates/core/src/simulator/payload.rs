use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

/// A consensus value. Only `0` and `1` are proposed.
pub type Bin = u8;

/// Message payloads of every shipped protocol.
///
/// Encoded in traces as tagged arrays, e.g. `["Lock", 2, "?", 1]` where `"?"`
/// stands for the undecided lock value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Payload {
    Propose { r: u32, v: Bin },
    Lock { r: u32, lock: Option<Bin>, v: Bin },
    Leader { r: u32, v: Bin },
    Report { r: u32, v: Bin },
    Vote { r: u32, aux: Option<Bin> },
    Decide { v: Bin },
    Alive { r: u32 },
    Heartbeat { r: u32, id: u64 },
    Announce { seq: u64 },
}

impl Payload {
    /// Round tag used for round isolation; `None` for untagged messages.
    pub fn round(&self) -> Option<u32> {
        match *self {
            Payload::Propose { r, .. }
            | Payload::Lock { r, .. }
            | Payload::Leader { r, .. }
            | Payload::Report { r, .. }
            | Payload::Vote { r, .. }
            | Payload::Alive { r }
            | Payload::Heartbeat { r, .. } => Some(r),
            Payload::Decide { .. } | Payload::Announce { .. } => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Payload::Propose { .. } => "Propose",
            Payload::Lock { .. } => "Lock",
            Payload::Leader { .. } => "Leader",
            Payload::Report { .. } => "Report",
            Payload::Vote { .. } => "Vote",
            Payload::Decide { .. } => "Decide",
            Payload::Alive { .. } => "ALIVE",
            Payload::Heartbeat { .. } => "HB",
            Payload::Announce { .. } => "ANNOUNCE",
        }
    }

    pub fn to_json(&self) -> Value {
        fn opt(v: Option<Bin>) -> Value {
            v.map_or_else(|| json!("?"), |b| json!(b))
        }
        match *self {
            Payload::Propose { r, v } => json!(["Propose", r, v]),
            Payload::Lock { r, lock, v } => json!(["Lock", r, opt(lock), v]),
            Payload::Leader { r, v } => json!(["Leader", r, v]),
            Payload::Report { r, v } => json!(["Report", r, v]),
            Payload::Vote { r, aux } => json!(["Vote", r, opt(aux)]),
            Payload::Decide { v } => json!(["Decide", v]),
            Payload::Alive { r } => json!(["ALIVE", r]),
            // Ids travel as strings: JSON numbers are not exact above 2^53.
            Payload::Heartbeat { r, id } => json!(["HB", r, id.to_string()]),
            Payload::Announce { seq } => json!(["ANNOUNCE", seq]),
        }
    }

    pub fn from_json(value: &Value) -> Result<Self, String> {
        let arr = value.as_array().ok_or("payload must be an array")?;
        let tag = arr
            .first()
            .and_then(Value::as_str)
            .ok_or("payload must start with a tag")?;
        let arity = |k: usize| {
            if arr.len() == k + 1 {
                Ok(())
            } else {
                Err(format!("`{tag}` takes {k} fields"))
            }
        };
        let num = |i: usize| {
            arr[i]
                .as_u64()
                .ok_or_else(|| format!("field {i} of `{tag}` must be a number"))
        };
        let round = |i: usize| num(i).and_then(|x| u32::try_from(x).map_err(|e| e.to_string()));
        let bin = |i: usize| match num(i)? {
            b @ (0 | 1) => Ok(b as Bin),
            _ => Err(format!("field {i} of `{tag}` must be 0 or 1")),
        };
        let opt = |i: usize| {
            if arr[i].as_str() == Some("?") {
                Ok(None)
            } else {
                bin(i).map(Some)
            }
        };
        match tag {
            "Propose" => arity(2).and_then(|_| {
                Ok(Payload::Propose {
                    r: round(1)?,
                    v: bin(2)?,
                })
            }),
            "Lock" => arity(3).and_then(|_| {
                Ok(Payload::Lock {
                    r: round(1)?,
                    lock: opt(2)?,
                    v: bin(3)?,
                })
            }),
            "Leader" => arity(2).and_then(|_| {
                Ok(Payload::Leader {
                    r: round(1)?,
                    v: bin(2)?,
                })
            }),
            "Report" => arity(2).and_then(|_| {
                Ok(Payload::Report {
                    r: round(1)?,
                    v: bin(2)?,
                })
            }),
            "Vote" => arity(2).and_then(|_| {
                Ok(Payload::Vote {
                    r: round(1)?,
                    aux: opt(2)?,
                })
            }),
            "Decide" => arity(1).and_then(|_| Ok(Payload::Decide { v: bin(1)? })),
            "ALIVE" => arity(1).and_then(|_| Ok(Payload::Alive { r: round(1)? })),
            "HB" => arity(2).and_then(|_| {
                let id = arr[2]
                    .as_str()
                    .and_then(|s| s.parse().ok())
                    .ok_or("HB id must be a decimal string")?;
                Ok(Payload::Heartbeat { r: round(1)?, id })
            }),
            "ANNOUNCE" => arity(1).and_then(|_| Ok(Payload::Announce { seq: num(1)? })),
            other => Err(format!("unknown payload tag `{other}`")),
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Payload::from_json(&v).map_err(D::Error::custom)
    }
}
