use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, NnError};
use crate::quantifiers::ProblemType;

/// Hidden-layer architecture in the textual form `dense:16,8 dropout:0.1`.
///
/// Every hidden dense layer is followed by a ReLU and, when a dropout rate is
/// given, a dropout layer. The output layer is added by
/// [`Architecture::layer_specs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub dropout: Option<f64>,
}

impl Architecture {
    pub fn layer_specs(&self, input_dim: usize, output_dim: usize, problem: ProblemType) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut width = input_dim;
        for &h in &self.hidden {
            specs.push(LayerSpec::dense(width, h));
            specs.push(LayerSpec::relu());
            if let Some(p) = self.dropout {
                specs.push(LayerSpec::dropout(p));
            }
            width = h;
        }
        specs.push(LayerSpec::dense(width, output_dim));
        if problem == ProblemType::Classification {
            specs.push(LayerSpec::softmax());
        }
        specs
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, NnError> {
        let bad = |msg: String| NnError::InvalidConfig(format!("architecture '{s}': {msg}"));
        let mut hidden = None;
        let mut dropout = None;
        for token in s.split_whitespace() {
            let (key, value) = token
                .split_once(':')
                .ok_or_else(|| bad(format!("expected key:value, got '{token}'")))?;
            match key {
                "dense" => {
                    let sizes = value
                        .split(',')
                        .filter(|v| !v.is_empty())
                        .map(|v| match v.parse::<usize>() {
                            Ok(h) if h > 0 => Ok(h),
                            _ => Err(bad(format!("invalid layer width '{v}'"))),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    hidden = Some(sizes);
                }
                "dropout" => {
                    let p: f64 = value
                        .parse()
                        .map_err(|_| bad(format!("invalid dropout rate '{value}'")))?;
                    if !(0.0..1.0).contains(&p) {
                        return Err(bad(format!("dropout rate {p} outside [0, 1)")));
                    }
                    dropout = Some(p);
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        Ok(Self {
            hidden: hidden.ok_or_else(|| bad("missing dense:<widths>".into()))?,
            dropout,
        })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        write!(f, "dense:{}", widths.join(","))?;
        if let Some(p) = self.dropout {
            write!(f, " dropout:{p}")?;
        }
        Ok(())
    }
}
