//! Rating dimensions, rater perspectives, and the ten (dimension, perspective)
//! heads they span.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of score bins; scores run 1..=10.
pub const NUM_BINS: usize = 10;

/// Number of prediction heads (5 dimensions x 2 perspectives).
pub const NUM_HEADS: usize = 10;

/// Perceptual rating dimension.
///
/// Declaration order is the canonical serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    /// Production quality.
    PQ,
    /// Production complexity.
    PC,
    /// Content enjoyment.
    CE,
    /// Content usefulness.
    CU,
    /// Textual alignment.
    TA,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::PQ,
        Dimension::PC,
        Dimension::CE,
        Dimension::CU,
        Dimension::TA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::PQ => "PQ",
            Dimension::PC => "PC",
            Dimension::CE => "CE",
            Dimension::CU => "CU",
            Dimension::TA => "TA",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dimension {s:?} (expected PQ, PC, CE, CU or TA)"))
    }
}

/// Rater population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Perspective {
    #[serde(rename = "expert")]
    Expert,
    #[serde(rename = "nonexpert")]
    NonExpert,
}

impl Perspective {
    pub const ALL: [Perspective; 2] = [Perspective::Expert, Perspective::NonExpert];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Expert => "expert",
            Perspective::NonExpert => "nonexpert",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perspective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expert" => Ok(Perspective::Expert),
            "nonexpert" => Ok(Perspective::NonExpert),
            _ => Err(format!("unknown perspective {s:?} (expected expert or nonexpert)")),
        }
    }
}

/// One (dimension, perspective) pair. Each pair owns one prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeadKey {
    pub dimension: Dimension,
    pub perspective: Perspective,
}

impl HeadKey {
    /// All ten heads in canonical order: dimension-major, expert before
    /// non-expert.
    pub const ALL: [HeadKey; NUM_HEADS] = {
        let mut out = [HeadKey {
            dimension: Dimension::PQ,
            perspective: Perspective::Expert,
        }; NUM_HEADS];
        let mut i = 0;
        while i < NUM_HEADS {
            out[i] = HeadKey {
                dimension: Dimension::ALL[i / 2],
                perspective: Perspective::ALL[i % 2],
            };
            i += 1;
        }
        out
    };

    pub const fn new(dimension: Dimension, perspective: Perspective) -> Self {
        Self {
            dimension,
            perspective,
        }
    }

    /// Position of this head in [`HeadKey::ALL`].
    pub fn index(self) -> usize {
        self.dimension.index() * 2 + self.perspective.index()
    }
}

impl fmt::Display for HeadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dimension, self.perspective)
    }
}

impl FromStr for HeadKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (d, v) = s
            .split_once('/')
            .ok_or_else(|| format!("head key {s:?} is not of the form DIM/perspective"))?;
        Ok(HeadKey::new(d.parse()?, v.parse()?))
    }
}

/// A value for every head, stored in canonical order.
///
/// Serializes as a map keyed by `"DIM/perspective"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerHead<T>(pub [T; NUM_HEADS]);

impl<T> PerHead<T> {
    pub fn from_fn(mut f: impl FnMut(HeadKey) -> T) -> Self {
        PerHead(std::array::from_fn(|i| f(HeadKey::ALL[i])))
    }

    pub fn iter(&self) -> impl Iterator<Item = (HeadKey, &T)> {
        HeadKey::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(HeadKey, &T) -> U) -> PerHead<U> {
        PerHead::from_fn(|k| f(k, &self[k]))
    }
}

impl<T: Default> Default for PerHead<T> {
    fn default() -> Self {
        PerHead(std::array::from_fn(|_| T::default()))
    }
}

impl<T> Index<HeadKey> for PerHead<T> {
    type Output = T;

    fn index(&self, key: HeadKey) -> &T {
        &self.0[key.index()]
    }
}

impl<T> IndexMut<HeadKey> for PerHead<T> {
    fn index_mut(&mut self, key: HeadKey) -> &mut T {
        &mut self.0[key.index()]
    }
}

impl<T: Serialize> Serialize for PerHead<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(NUM_HEADS))?;
        for (key, value) in self.iter() {
            map.serialize_entry(&key.to_string(), value)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for PerHead<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PerHeadVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Deserialize<'de>> Visitor<'de> for PerHeadVisitor<T> {
            type Value = PerHead<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map with one entry per DIM/perspective head")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut slots: [Option<T>; NUM_HEADS] = std::array::from_fn(|_| None);
                while let Some(name) = access.next_key::<String>()? {
                    let key: HeadKey = name.parse().map_err(de::Error::custom)?;
                    if slots[key.index()].is_some() {
                        return Err(de::Error::custom(format!("duplicate head {key}")));
                    }
                    slots[key.index()] = Some(access.next_value()?);
                }
                let mut out = Vec::with_capacity(NUM_HEADS);
                for (key, slot) in HeadKey::ALL.into_iter().zip(slots) {
                    out.push(slot.ok_or_else(|| de::Error::custom(format!("missing head {key}")))?);
                }
                match out.try_into() {
                    Ok(arr) => Ok(PerHead(arr)),
                    Err(_) => unreachable!("exactly NUM_HEADS entries collected"),
                }
            }
        }

        deserializer.deserialize_map(PerHeadVisitor(std::marker::PhantomData))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_dimension_major() {
        let names: Vec<String> = HeadKey::ALL.iter().map(|k| k.to_string()).collect();
        assert_eq!(names[0], "PQ/expert");
        assert_eq!(names[1], "PQ/nonexpert");
        assert_eq!(names[9], "TA/nonexpert");
        for (i, key) in HeadKey::ALL.iter().enumerate() {
            assert_eq!(key.index(), i);
        }
    }

    #[test]
    fn per_head_json_round_trip() {
        let values = PerHead::from_fn(|k| k.index() as f64 * 0.5);
        let json = serde_json::to_string(&values).unwrap();
        assert!(json.starts_with("{\"PQ/expert\":0.0"));
        let back: PerHead<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, values);
    }

    #[test]
    fn per_head_rejects_missing_entries() {
        let err = serde_json::from_str::<PerHead<f64>>("{\"PQ/expert\":1.0}").unwrap_err();
        assert!(err.to_string().contains("missing head PQ/nonexpert"));
    }

    #[test]
    fn parses_names() {
        assert_eq!("CU".parse::<Dimension>().unwrap(), Dimension::CU);
        assert!("XX".parse::<Dimension>().is_err());
        assert_eq!(
            "TA/nonexpert".parse::<HeadKey>().unwrap(),
            HeadKey::new(Dimension::TA, Perspective::NonExpert)
        );
    }
}
