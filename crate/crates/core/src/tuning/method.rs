use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::estimators::{BaseEstimatorKind, TunableKind};

/// A tuning recipe: what is searched and with which objective.
///
/// The text form is `<base>`, `<base>-ts-aurc`, `<base>-ts-nll`,
/// `<base>-pnorm`, `ets`, `bk` or `hts`, with bases named `msp`,
/// `softmax-margin`, `max-logit`, `logits-margin`, `neg-entropy` and
/// `neg-gini`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Raw(BaseEstimatorKind),
    TemperatureScaled {
        base: BaseEstimatorKind,
        objective: Objective,
    },
    PNorm(BaseEstimatorKind),
    Tunable(TunableKind),
}

impl Method {
    /// Builds a method from separate base/transform/objective names.
    pub fn from_parts(name: &str, transform: &str, objective: Option<&str>) -> Result<Self> {
        let objective = objective.map(str::parse::<Objective>).transpose()?;
        if let Some(kind) = tunable_kind(name) {
            if transform != "raw" {
                return Err(Error::param(format!(
                    "{} takes no logit transform, got '{transform}'",
                    kind.name()
                )));
            }
            if objective == Some(Objective::Nll) {
                return Err(Error::param(format!("{} is tuned with AURC only", kind.name())));
            }
            return Ok(Method::Tunable(kind));
        }
        let base: BaseEstimatorKind = name.parse()?;
        let method = match transform {
            "raw" => Method::Raw(base),
            "ts" | "temperature-scale" => Method::TemperatureScaled {
                base,
                objective: objective.unwrap_or(Objective::Aurc),
            },
            "pnorm" => {
                if objective == Some(Objective::Nll) {
                    return Err(Error::param("p-norm tuning always uses the AURC objective"));
                }
                Method::PNorm(base)
            }
            _ => return Err(Error::param(format!("unknown transform '{transform}'"))),
        };
        method.validate()?;
        Ok(method)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::TemperatureScaled { base, .. } if base.is_scale_invariant() => Err(Error::param(
                format!("temperature scaling does not change the ranking of {base}"),
            )),
            _ => Ok(()),
        }
    }

    /// Table label, e.g. `MSP-TS-AURC` or `MaxLogit-pNorm`.
    pub fn label(&self) -> String {
        match self {
            Method::Raw(b) => b.display_name().to_string(),
            Method::TemperatureScaled { base, objective } => format!("{base}-TS-{objective}"),
            Method::PNorm(b) => format!("{b}-pNorm"),
            Method::Tunable(k) => k.name().to_string(),
        }
    }
}

fn tunable_kind(name: &str) -> Option<TunableKind> {
    match name {
        "ets" => Some(TunableKind::Ets),
        "bk" => Some(TunableKind::Bk),
        "hts" => Some(TunableKind::Hts),
        _ => None,
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Raw(b) => f.write_str(b.cli_name()),
            Method::TemperatureScaled { base, objective } => {
                let obj = match objective {
                    Objective::Nll => "nll",
                    Objective::Aurc => "aurc",
                };
                write!(f, "{}-ts-{obj}", base.cli_name())
            }
            Method::PNorm(b) => write!(f, "{}-pnorm", b.cli_name()),
            Method::Tunable(k) => f.write_str(&k.name().to_ascii_lowercase()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if tunable_kind(&s).is_some() {
            return Method::from_parts(&s, "raw", None);
        }
        for (suffix, transform, objective) in [
            ("-ts-aurc", "ts", Some("aurc")),
            ("-ts-nll", "ts", Some("nll")),
            ("-ts", "ts", None),
            ("-pnorm", "pnorm", None),
        ] {
            if let Some(name) = s.strip_suffix(suffix) {
                return Method::from_parts(name, transform, objective);
            }
        }
        Method::from_parts(&s, "raw", None)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        let mut all = vec![
            Method::Tunable(TunableKind::Ets),
            Method::Tunable(TunableKind::Bk),
            Method::Tunable(TunableKind::Hts),
        ];
        for b in BaseEstimatorKind::ALL {
            all.push(Method::Raw(b));
            all.push(Method::PNorm(b));
            if !b.is_scale_invariant() {
                for objective in [Objective::Nll, Objective::Aurc] {
                    all.push(Method::TemperatureScaled { base: b, objective });
                }
            }
        }
        for m in all {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn parses_common_names() {
        assert_eq!(
            "msp-ts".parse::<Method>().unwrap(),
            Method::TemperatureScaled {
                base: BaseEstimatorKind::Msp,
                objective: Objective::Aurc
            }
        );
        assert_eq!(
            "MaxLogit-pNorm".replace("MaxLogit", "max-logit").parse::<Method>().unwrap(),
            Method::PNorm(BaseEstimatorKind::MaxLogit)
        );
        assert_eq!(Method::PNorm(BaseEstimatorKind::MaxLogit).label(), "MaxLogit-pNorm");
    }

    #[test]
    fn rejects_invalid_combinations() {
        assert!("max-logit-ts-aurc".parse::<Method>().is_err());
        assert!(Method::from_parts("msp", "pnorm", Some("nll")).is_err());
        assert!(Method::from_parts("ets", "ts", None).is_err());
        assert!(Method::from_parts("msp", "sqrt", None).is_err());
        assert!("softmax".parse::<Method>().is_err());
    }
}
