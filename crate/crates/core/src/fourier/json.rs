use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FourierError, FourierField, MultiIndex};

/// On-disk form of a vector field. Only nonzero modes are listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldJson {
    pub dim: usize,
    pub real: bool,
    #[serde(rename = "K")]
    pub k: u32,
    pub modes: Vec<ModeJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeJson {
    pub k: Vec<i32>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FourierField {
    pub fn to_json_repr(&self) -> Result<FieldJson, FourierError> {
        let mut modes = Vec::new();
        for (k, c) in self.iter() {
            if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(FourierError::NonFinite(k));
            }
            modes.push(ModeJson {
                k: k.0,
                re: c.iter().map(|z| z.re).collect(),
                im: c.iter().map(|z| z.im).collect(),
            });
        }
        Ok(FieldJson {
            dim: self.dim(),
            real: self.is_real(),
            k: self.trunc_radius(),
            modes,
        })
    }

    pub fn from_json_repr(repr: &FieldJson) -> Result<Self, FourierError> {
        if repr.dim < 2 {
            return Err(FourierError::Invalid(format!(
                "dimension must be at least 2, got {}",
                repr.dim
            )));
        }
        let mut modes = Vec::with_capacity(repr.modes.len());
        for m in &repr.modes {
            let k = MultiIndex(m.k.clone());
            for n in [m.k.len(), m.re.len(), m.im.len()] {
                if n != repr.dim {
                    return Err(FourierError::DimensionMismatch {
                        expected: repr.dim,
                        found: n,
                    });
                }
            }
            if m.re.iter().chain(&m.im).any(|x| !x.is_finite()) {
                return Err(FourierError::NonFinite(k));
            }
            let v =
                m.re.iter()
                    .zip(&m.im)
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect();
            modes.push((k, v));
        }
        FourierField::from_modes(repr.dim, repr.k, repr.real, modes)
    }

    pub fn to_json(&self) -> Result<String, FourierError> {
        let repr = self.to_json_repr()?;
        Ok(serde_json::to_string_pretty(&repr).expect("field JSON is always serialisable"))
    }

    pub fn from_json(text: &str) -> Result<Self, FourierError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let repr: FieldJson = serde_path_to_error::deserialize(de)
            .map_err(|e| FourierError::Invalid(format!("{} at {}", e.inner(), e.path())))?;
        Self::from_json_repr(&repr)
    }
}

impl serde::Serialize for FourierField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json_repr()
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for FourierField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = FieldJson::deserialize(d)?;
        FourierField::from_json_repr(&repr).map_err(serde::de::Error::custom)
    }
}
