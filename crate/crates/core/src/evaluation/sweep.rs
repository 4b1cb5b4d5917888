use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::report::{evaluate_split, Evaluation};
use crate::domain::{PipelineConfig, Sample};
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    R,
    H,
    Tau,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::R => "r",
            SweepParam::H => "h",
            SweepParam::Tau => "tau",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "r" => Ok(SweepParam::R),
            "h" => Ok(SweepParam::H),
            "tau" => Ok(SweepParam::Tau),
            other => Err(Error::InvalidValue {
                param: "sweep".into(),
                message: format!("unknown parameter {other:?} (expected r, h or tau)"),
            }),
        }
    }
}

/// Parses `param=v1,v2,...`.
pub fn parse_sweep_spec(spec: &str) -> Result<(SweepParam, Vec<f64>)> {
    let (p, vals) = spec.split_once('=').ok_or_else(|| Error::InvalidValue {
        param: "sweep".into(),
        message: format!("expected param=v1,v2,... but got {spec:?}"),
    })?;
    let param: SweepParam = p.parse()?;
    let values = vals
        .split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| Error::InvalidValue {
                param: param.to_string(),
                message: format!("{v:?} is not a number"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((param, values))
}

/// A copy of `base` with `param` set to `value`, validated.
pub fn apply(base: &PipelineConfig, param: SweepParam, value: f64) -> Result<PipelineConfig> {
    let invalid = |m: &str| Error::InvalidValue {
        param: param.to_string(),
        message: format!("{value}: {m}"),
    };
    let mut c = base.clone();
    match param {
        SweepParam::Tau => c.tau = value,
        SweepParam::R | SweepParam::H => {
            if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                return Err(invalid("must be a positive integer"));
            }
            if param == SweepParam::R {
                c.r = value as usize;
            } else {
                c.h = value as usize;
            }
        }
    }
    c.validate().map_err(|e| invalid(&e.to_string()))?;
    Ok(c)
}

pub struct SweepPoint {
    pub value: f64,
    pub evaluation: Evaluation,
}

pub fn sweep(pipeline: &Pipeline<'_>, samples: &[Sample], param: SweepParam, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidValue {
            param: param.to_string(),
            message: "no sweep values".into(),
        });
    }
    let configs = values
        .iter()
        .map(|&v| apply(&pipeline.config, param, v))
        .collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(configs)
        .map(|(&value, config)| {
            Ok(SweepPoint {
                value,
                evaluation: evaluate_split(&pipeline.with_config(config), samples)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SweepRecord<'a> {
    Header {
        param: SweepParam,
        base_config_digest: &'a str,
        template_versions: &'a [String],
    },
    Point {
        value: f64,
        accuracy: Option<f64>,
        knowledge_used_fraction: Option<f64>,
    },
}

/// Header record, then one `value`/`accuracy` record per point.
pub fn write_sweep(
    points: &[SweepPoint],
    param: SweepParam,
    base_config_digest: &str,
    template_versions: &[String],
    mut out: impl Write,
) -> std::io::Result<()> {
    let mut emit = |r: SweepRecord<'_>| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")
    };
    emit(SweepRecord::Header {
        param,
        base_config_digest,
        template_versions,
    })?;
    for p in points {
        emit(SweepRecord::Point {
            value: p.value,
            accuracy: p.evaluation.report.summary.mean_accuracy,
            knowledge_used_fraction: p.evaluation.report.summary.knowledge_used_fraction,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        let (p, v) = parse_sweep_spec("tau=0,0.5, 0.8,1.0").unwrap();
        assert_eq!(p, SweepParam::Tau);
        assert_eq!(v, [0.0, 0.5, 0.8, 1.0]);
        assert!(parse_sweep_spec("k=1").is_err());
        assert!(parse_sweep_spec("r=1,x").is_err());
        assert!(parse_sweep_spec("r").is_err());
    }

    #[test]
    fn validates_values() {
        let base = PipelineConfig::default();
        assert_eq!(apply(&base, SweepParam::R, 5.0).unwrap().r, 5);
        assert_eq!(apply(&base, SweepParam::Tau, 0.5).unwrap().tau, 0.5);
        for (p, v) in [(SweepParam::R, 0.0), (SweepParam::H, 2.5), (SweepParam::Tau, 1.5), (SweepParam::H, 1e6)] {
            assert!(matches!(apply(&base, p, v), Err(Error::InvalidValue { .. })), "{p}={v}");
        }
    }
}
