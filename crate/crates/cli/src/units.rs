//! Physical quantities written as `"<number> <unit>"` strings.

use std::fmt;
use std::marker::PhantomData;

use ionlock::oscillator::AMU_KG;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// A dimension: its name, SI unit and accepted suffixes.
pub trait Dimension {
    const NAME: &'static str;
    const SI: &'static str;
    /// Suffix and its factor to SI.
    const UNITS: &'static [(&'static str, f64)];
}

macro_rules! dimension {
    ($ty:ident, $name:literal, $si:literal, [$(($u:literal, $f:expr)),* $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $ty;
        impl Dimension for $ty {
            const NAME: &'static str = $name;
            const SI: &'static str = $si;
            const UNITS: &'static [(&'static str, f64)] = &[$(($u, $f)),*];
        }
    };
}

dimension!(
    Freq,
    "frequency",
    "Hz",
    [("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)]
);
dimension!(
    Time,
    "time",
    "s",
    [
        ("s", 1.0),
        ("ms", 1e-3),
        ("us", 1e-6),
        ("µs", 1e-6),
        ("ns", 1e-9),
        ("min", 60.0),
        ("h", 3600.0)
    ]
);
dimension!(
    Len,
    "length",
    "m",
    [
        ("m", 1.0),
        ("mm", 1e-3),
        ("um", 1e-6),
        ("µm", 1e-6),
        ("nm", 1e-9),
        ("pm", 1e-12)
    ]
);
dimension!(
    Mass,
    "mass",
    "kg",
    [
        ("kg", 1.0),
        ("g", 1e-3),
        ("amu", AMU_KG),
        ("u", AMU_KG),
        ("Da", AMU_KG)
    ]
);
dimension!(
    Force,
    "force",
    "N",
    [
        ("N", 1.0),
        ("mN", 1e-3),
        ("uN", 1e-6),
        ("µN", 1e-6),
        ("nN", 1e-9),
        ("pN", 1e-12),
        ("fN", 1e-15),
        ("aN", 1e-18),
        ("zN", 1e-21),
        ("yN", 1e-24)
    ]
);
dimension!(
    Angle,
    "angle",
    "rad",
    [
        ("rad", 1.0),
        ("mrad", 1e-3),
        ("deg", std::f64::consts::PI / 180.0)
    ]
);

/// A value in SI units that was written with an explicit unit.
pub struct Quantity<D> {
    pub si: f64,
    dim: PhantomData<D>,
}

impl<D> Quantity<D> {
    pub fn new(si: f64) -> Self {
        Quantity {
            si,
            dim: PhantomData,
        }
    }
}

impl<D> Clone for Quantity<D> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<D> Copy for Quantity<D> {}
impl<D> PartialEq for Quantity<D> {
    fn eq(&self, other: &Self) -> bool {
        self.si == other.si
    }
}

impl<D> fmt::Debug for Quantity<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quantity({})", self.si)
    }
}

impl<D: Dimension> fmt::Display for Quantity<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.si, D::SI)
    }
}

/// Parses `"<number> <unit>"`; the space is optional.
pub fn parse_quantity<D: Dimension>(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let split = text
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_alphabetic())
        .last()
        .map_or(text.len(), |(i, _)| i);
    let (number, unit) = (text[..split].trim(), &text[split..]);
    if unit.is_empty() {
        return Err(format!(
            "`{text}` has no unit; write the {} with one of: {}",
            D::NAME,
            unit_list::<D>()
        ));
    }
    let factor = D::UNITS
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, f)| *f)
        .ok_or_else(|| {
            format!(
                "unknown {} unit `{unit}`; expected one of: {}",
                D::NAME,
                unit_list::<D>()
            )
        })?;
    let value: f64 = number
        .parse()
        .map_err(|_| format!("`{number}` is not a number"))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(value * factor)
}

fn unit_list<D: Dimension>() -> String {
    D::UNITS
        .iter()
        .map(|(u, _)| *u)
        .collect::<Vec<_>>()
        .join(", ")
}

impl<'de, D: Dimension> Deserialize<'de> for Quantity<D> {
    fn deserialize<De: Deserializer<'de>>(deserializer: De) -> Result<Self, De::Error> {
        struct V<D>(PhantomData<D>);
        impl<D: Dimension> Visitor<'_> for V<D> {
            type Value = Quantity<D>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a {} string such as \"1 {}\"", D::NAME, D::SI)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                parse_quantity::<D>(v).map(Quantity::new).map_err(E::custom)
            }
        }
        deserializer.deserialize_str(V(PhantomData))
    }
}

impl<D: Dimension> Serialize for Quantity<D> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub type Frequency = Quantity<Freq>;
pub type Duration = Quantity<Time>;
pub type Length = Quantity<Len>;
pub type MassQ = Quantity<Mass>;
pub type ForceQ = Quantity<Force>;
pub type AngleQ = Quantity<Angle>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_space() {
        assert_eq!(parse_quantity::<Freq>("1013 Hz").unwrap(), 1013.0);
        assert_eq!(parse_quantity::<Freq>("1.13MHz").unwrap(), 1.13e6);
        assert_eq!(parse_quantity::<Force>("8.64e-19 N").unwrap(), 8.64e-19);
        assert!((parse_quantity::<Len>("674 nm").unwrap() - 674e-9).abs() < 1e-20);
        assert_eq!(parse_quantity::<Mass>("87.9 amu").unwrap(), 87.9 * AMU_KG);
        assert!((parse_quantity::<Angle>("180 deg").unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(parse_quantity::<Time>("250 us").unwrap(), 250e-6);
    }

    #[test]
    fn rejects_missing_or_wrong_units() {
        assert!(parse_quantity::<Freq>("1013")
            .unwrap_err()
            .contains("no unit"));
        assert!(parse_quantity::<Freq>("1013 nm")
            .unwrap_err()
            .contains("unknown frequency unit"));
        assert!(parse_quantity::<Len>("abc nm").is_err());
    }

    #[test]
    fn display_round_trips() {
        let q = Length::new(117.5e-9);
        assert_eq!(parse_quantity::<Len>(&q.to_string()).unwrap(), 117.5e-9);
    }
}
