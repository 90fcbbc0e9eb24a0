//! Declarative (JSON) family definitions.
//!
//! ```json
//! { "kind": "builtin", "family": "gaussian-loc:sigma=2" }
//!
//! { "kind": "exponential", "name": "normal-mean",
//!   "space": { "type": "real-line", "center": 0.0, "scale": 1.0 },
//!   "sufficient_stats": ["y"],
//!   "carrier": "-y^2 / 2.0 - 0.9189385332046727",
//!   "domain": { "lower": [null], "upper": [null] } }
//!
//! { "kind": "mixture", "name": "coin",
//!   "space": { "type": "finite", "atoms": [0.0, 1.0] },
//!   "components": ["if(y == 1.0, 1.0, -1.0)"],
//!   "carrier": "0.5",
//!   "domain": { "lower": [-0.49], "upper": [0.49] } }
//! ```
//!
//! Expressions use `evalexpr` syntax in the variable `y`, with `pi` and `e`
//! predefined and functions such as `math::ln`, `math::exp`, `math::sqrt`.
//! Comparisons against `y` need float literals (`y == 1.0`, not `y == 1`).
//! `null` bounds are infinite. The full schema is `schemas/family-v1.json`.

use std::path::Path;
use std::sync::Arc;

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node,
    Value,
};
use serde::{Deserialize, Serialize};

use super::spec::{from_exponential_spec_with, from_mixture_spec_with};
use super::{builtin, Domain, ExponentialFamilySpec, MixtureFamilySpec, ModelFamily, SampleFn};
use crate::error::{Error, Result};
use crate::quadrature::{QuadConfig, SampleSpace};

/// Sample spaces use the same tagged layout as [`SampleSpace`].
pub type SpaceConfig = SampleSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_max: Option<f64>,
}

impl DomainConfig {
    fn build(&self) -> Result<Domain> {
        let mut d = Domain::boxed(
            self.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect(),
            self.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect(),
        )?;
        d.sum_max = self.sum_max;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    Builtin {
        family: String,
        #[serde(default)]
        quadrature: Option<QuadConfig>,
    },
    Exponential {
        name: String,
        space: SpaceConfig,
        sufficient_stats: Vec<String>,
        #[serde(default = "zero_expr")]
        carrier: String,
        domain: DomainConfig,
        #[serde(default)]
        anchor: Option<Vec<f64>>,
        #[serde(default)]
        quadrature: Option<QuadConfig>,
    },
    Mixture {
        name: String,
        space: SpaceConfig,
        components: Vec<String>,
        carrier: String,
        domain: DomainConfig,
        #[serde(default)]
        anchor: Option<Vec<f64>>,
        #[serde(default)]
        quadrature: Option<QuadConfig>,
    },
}

fn zero_expr() -> String {
    "0.0".into()
}

impl FamilyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("family config: {e}")))
    }

    pub fn build(&self) -> Result<ModelFamily> {
        match self {
            FamilyConfig::Builtin { family, quadrature } => {
                let f = builtin(family)?;
                Ok(match quadrature {
                    Some(q) => f.with_quadrature(*q),
                    None => f,
                })
            }
            FamilyConfig::Exponential {
                name,
                space,
                sufficient_stats,
                carrier,
                domain,
                anchor,
                quadrature,
            } => {
                let spec = ExponentialFamilySpec {
                    name: name.clone(),
                    space: space.clone(),
                    sufficient_stats: sufficient_stats.iter().map(|e| compile(e)).collect::<Result<_>>()?,
                    carrier: compile(carrier)?,
                };
                from_exponential_spec_with(spec, domain.build()?, anchor.clone(), quadrature.unwrap_or_default())
            }
            FamilyConfig::Mixture {
                name,
                space,
                components,
                carrier,
                domain,
                anchor,
                quadrature,
            } => {
                let spec = MixtureFamilySpec {
                    name: name.clone(),
                    space: space.clone(),
                    components: components.iter().map(|e| compile(e)).collect::<Result<_>>()?,
                    carrier: compile(carrier)?,
                };
                from_mixture_spec_with(spec, domain.build()?, anchor.clone(), quadrature.unwrap_or_default())
            }
        }
    }
}

/// Reads and builds a family from a JSON file.
pub fn load_family_config(path: impl AsRef<Path>) -> Result<ModelFamily> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    FamilyConfig::from_json(&text)?.build()
}

/// Compiles an expression in `y`. Evaluation failures yield NaN.
pub(crate) fn compile(expr: &str) -> Result<SampleFn> {
    let tree: Node<DefaultNumericTypes> =
        build_operator_tree(expr).map_err(|e| Error::Config(format!("expression `{expr}`: {e}")))?;
    let tree = Arc::new(tree);
    let eval = move |y: f64| -> f64 {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let ok = ctx.set_value("y".into(), Value::Float(y)).is_ok()
            && ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI)).is_ok()
            && ctx.set_value("e".into(), Value::Float(std::f64::consts::E)).is_ok();
        if !ok {
            return f64::NAN;
        }
        tree.eval_number_with_context(&ctx).unwrap_or(f64::NAN)
    };
    if eval(0.0).is_nan() && eval(1.0).is_nan() {
        return Err(Error::Config(format!("expression `{expr}` does not evaluate to a number")));
    }
    Ok(Arc::new(eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FlatStructure;

    #[test]
    fn builtin_config() {
        let fam = FamilyConfig::from_json(r#"{"kind":"builtin","family":"categorical-3"}"#)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(fam.dim(), 2);
    }

    #[test]
    fn mixture_config_matches_hand_values() {
        let text = r#"{
            "kind": "mixture", "name": "coin",
            "space": {"type": "finite", "atoms": [0.0, 1.0]},
            "components": ["if(y == 1.0, 1.0, -1.0)"],
            "carrier": "0.5",
            "domain": {"lower": [-0.49], "upper": [0.49]}
        }"#;
        let fam = FamilyConfig::from_json(text).unwrap().build().unwrap();
        assert_eq!(fam.flat_structure(), FlatStructure::MixtureFlat);
        let lp = fam.log_density(1.0, &[0.1]).unwrap();
        assert!((lp - 0.6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exponential_config_with_unbounded_domain() {
        let text = r#"{
            "kind": "exponential", "name": "normal-mean",
            "space": {"type": "real-line", "center": 0.0, "scale": 1.0},
            "sufficient_stats": ["y"],
            "carrier": "-y^2 / 2.0 - math::ln(math::sqrt(2.0 * pi))",
            "domain": {"lower": [null], "upper": [null]}
        }"#;
        let fam = FamilyConfig::from_json(text).unwrap().build().unwrap();
        let s = fam.score(2.5, &[0.5]).unwrap()[0];
        assert!((s - 2.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn bad_expression_is_config_error() {
        assert!(matches!(compile("y +* 2"), Err(Error::Config(_))));
        assert!(matches!(
            FamilyConfig::from_json(r#"{"kind":"nope"}"#),
            Err(Error::Config(_))
        ));
    }
}
