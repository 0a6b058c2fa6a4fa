//! Serde helpers for `"0xNN"`-style address fields in config files. Plain
//! decimal is accepted on input for convenience; output is always hex.

use serde::{de, Deserialize, Deserializer, Serializer};

fn parse(s: &str) -> Result<u64, String> {
    if let Some(hexpart) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hexpart, 16).map_err(|e| format!("bad hex {s:?}: {e}"))
    } else {
        s.parse::<u64>().map_err(|e| format!("bad number {s:?}: {e}"))
    }
}

pub mod u8_hex {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u8, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:02x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u8, D::Error> {
        let raw = String::deserialize(d)?;
        let n = parse(&raw).map_err(de::Error::custom)?;
        u8::try_from(n).map_err(|_| de::Error::custom(format!("{raw} out of u8 range")))
    }
}

pub mod u16_hex {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u16, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:04x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u16, D::Error> {
        let raw = String::deserialize(d)?;
        let n = parse(&raw).map_err(de::Error::custom)?;
        u16::try_from(n).map_err(|_| de::Error::custom(format!("{raw} out of u16 range")))
    }
}

pub mod u64_hex {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(de::Error::custom)
    }
}

pub mod u16_hex_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<u16>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => s.serialize_some(&format!("0x{v:04x}")),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u16>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        match raw {
            None => Ok(None),
            Some(raw) => {
                let n = parse(&raw).map_err(de::Error::custom)?;
                u16::try_from(n)
                    .map(Some)
                    .map_err(|_| de::Error::custom(format!("{raw} out of u16 range")))
            }
        }
    }
}
