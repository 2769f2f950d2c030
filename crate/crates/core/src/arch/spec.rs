//! Declarative architecture descriptions and their line-oriented text form.
//!
//! ```text
//! name dpn92
//! conv1 7 64 2
//! stempool 3 2
//! stage 3 96 32 256 16 1 dualpath
//! stage 4 192 32 512 32 2 dualpath
//! classifier 1000 avg
//! ```
//!
//! `stage` fields are `<blocks> <bottleneck> <groups> <R> <k> <stride> <family>`.
//! For the dense family `R` is the width the stage-entry transition reduces
//! the joint state to. `dense_init <m>` optionally sets the dense width a
//! dual path stage starts from to `m·k` (default 2).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Residual,
    Dense,
    DualPath,
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "residual" => Ok(Family::Residual),
            "dense" => Ok(Family::Dense),
            "dualpath" => Ok(Family::DualPath),
            other => Err(format!("unknown family `{other}` (expected residual, dense or dualpath)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Residual => "residual",
            Family::Dense => "dense",
            Family::DualPath => "dualpath",
        })
    }
}

/// Global pooling in front of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Avg,
    MeanMax,
}

impl FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "avg" => Ok(Pooling::Avg),
            "meanmax" => Ok(Pooling::MeanMax),
            other => Err(format!("unknown pooling `{other}` (expected avg or meanmax)")),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Avg => "avg",
            Pooling::MeanMax => "meanmax",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemConv {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemPool {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub bottleneck: usize,
    pub groups: usize,
    pub residual_width: usize,
    pub dense_increment: usize,
    pub stride: usize,
    pub family: Family,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub classes: usize,
    pub pooling: Pooling,
}

pub const DEFAULT_DENSE_INIT: usize = 2;

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub conv1: StemConv,
    pub stem_pool: Option<StemPool>,
    pub stages: Vec<StageSpec>,
    pub classifier: ClassifierSpec,
    /// Initial dense width of a dual path stage, in multiples of its `k`.
    pub dense_init: usize,
}

fn fail(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::spec(line, field, message)
}

impl StageSpec {
    fn validate(&self, line: usize) -> Result<()> {
        let zero = |v: usize, field: &str| if v == 0 { Err(fail(line, field, "must be positive")) } else { Ok(()) };
        zero(self.blocks, "blocks")?;
        zero(self.bottleneck, "bottleneck")?;
        zero(self.groups, "groups")?;
        zero(self.residual_width, "R")?;
        if !self.bottleneck.is_multiple_of(self.groups) {
            return Err(fail(
                line,
                "groups",
                format!("groups must divide width ({} does not divide {})", self.groups, self.bottleneck),
            ));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(fail(line, "stride", "entry stride must be 1 or 2"));
        }
        match self.family {
            Family::Residual if self.dense_increment != 0 => {
                Err(fail(line, "k", "residual stages have no dense increment (k must be 0)"))
            }
            Family::Dense if self.dense_increment == 0 => Err(fail(line, "k", "dense stages need k > 0")),
            Family::Dense if !self.dense_increment.is_multiple_of(self.groups) => {
                Err(fail(line, "groups", "groups must divide the dense increment of a dense stage"))
            }
            _ => Ok(()),
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(fail(0, "name", "missing"));
        }
        if self.conv1.kernel == 0 || self.conv1.out_channels == 0 || self.conv1.stride == 0 {
            return Err(fail(0, "conv1", "kernel, width and stride must be positive"));
        }
        if let Some(p) = self.stem_pool {
            if p.kernel == 0 || p.stride == 0 {
                return Err(fail(0, "stempool", "kernel and stride must be positive"));
            }
        }
        if self.stages.is_empty() {
            return Err(fail(0, "stage", "at least one stage is required"));
        }
        for stage in &self.stages {
            stage.validate(0)?;
        }
        if self.classifier.classes == 0 {
            return Err(fail(0, "classifier", "class count must be positive"));
        }
        Ok(())
    }

    /// Spatial extent after every stage for a square input, or an error if
    /// the stride chain collapses the feature map.
    pub fn stage_extents(&self, input_hw: usize) -> Result<Vec<usize>> {
        let ext = |v: Option<usize>, what: &str| {
            v.ok_or_else(|| Error::invalid("build_network", format!("input {input_hw} too small at {what}")))
        };
        let c1 = self.conv1;
        let mut s = ext(crate::ops::output_extent(input_hw, c1.kernel, c1.stride, c1.kernel / 2), "conv1")?;
        if let Some(p) = self.stem_pool {
            s = ext(crate::ops::output_extent(s, p.kernel, p.stride, p.kernel / 2), "stempool")?;
        }
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            if st.stride == 2 {
                s = ext(if st.family == Family::Dense { (s >= 2).then_some(s / 2) } else { Some((s - 1) / 2 + 1) }, &format!("stage {}", i + 1))?;
            }
            out.push(s);
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("name {}\n", self.name);
        s += &format!("conv1 {} {} {}\n", self.conv1.kernel, self.conv1.out_channels, self.conv1.stride);
        if let Some(p) = self.stem_pool {
            s += &format!("stempool {} {}\n", p.kernel, p.stride);
        }
        if self.dense_init != DEFAULT_DENSE_INIT {
            s += &format!("dense_init {}\n", self.dense_init);
        }
        for st in &self.stages {
            s += &format!(
                "stage {} {} {} {} {} {} {}\n",
                st.blocks, st.bottleneck, st.groups, st.residual_width, st.dense_increment, st.stride, st.family
            );
        }
        s += &format!("classifier {} {}\n", self.classifier.classes, self.classifier.pooling);
        s
    }
}

fn number(line: usize, field: &str, token: Option<&str>) -> Result<usize> {
    let token = token.ok_or_else(|| fail(line, field, "missing value"))?;
    token.parse().map_err(|_| fail(line, field, format!("expected a non-negative integer, got `{token}`")))
}

/// Parses and validates a spec file.
pub fn parse_spec(text: &str) -> Result<ArchSpec> {
    let mut name = None;
    let mut conv1 = None;
    let mut stem_pool = None;
    let mut classifier = None;
    let mut dense_init = None;
    let mut stages = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tok = content.split_whitespace();
        let key = tok.next().expect("non-empty line");
        let once = |seen: bool| if seen { Err(fail(line, key, "given more than once")) } else { Ok(()) };
        match key {
            "name" => {
                once(name.is_some())?;
                name = Some(tok.next().ok_or_else(|| fail(line, "name", "missing value"))?.to_string());
            }
            "conv1" => {
                once(conv1.is_some())?;
                conv1 = Some(StemConv {
                    kernel: number(line, "conv1.kernel", tok.next())?,
                    out_channels: number(line, "conv1.out", tok.next())?,
                    stride: number(line, "conv1.stride", tok.next())?,
                });
            }
            "stempool" => {
                once(stem_pool.is_some())?;
                stem_pool = Some(StemPool {
                    kernel: number(line, "stempool.kernel", tok.next())?,
                    stride: number(line, "stempool.stride", tok.next())?,
                });
            }
            "dense_init" => {
                once(dense_init.is_some())?;
                dense_init = Some(number(line, "dense_init", tok.next())?);
            }
            "stage" => {
                let stage = StageSpec {
                    blocks: number(line, "blocks", tok.next())?,
                    bottleneck: number(line, "bottleneck", tok.next())?,
                    groups: number(line, "groups", tok.next())?,
                    residual_width: number(line, "R", tok.next())?,
                    dense_increment: number(line, "k", tok.next())?,
                    stride: number(line, "stride", tok.next())?,
                    family: tok
                        .next()
                        .ok_or_else(|| fail(line, "family", "missing value"))?
                        .parse()
                        .map_err(|e: String| fail(line, "family", e))?,
                };
                stage.validate(line)?;
                stages.push(stage);
            }
            "classifier" => {
                once(classifier.is_some())?;
                classifier = Some(ClassifierSpec {
                    classes: number(line, "classifier.classes", tok.next())?,
                    pooling: tok
                        .next()
                        .unwrap_or("avg")
                        .parse()
                        .map_err(|e: String| fail(line, "classifier.pooling", e))?,
                });
            }
            other => return Err(fail(line, other, "unknown keyword")),
        }
        if let Some(extra) = tok.next() {
            return Err(fail(line, key, format!("unexpected trailing token `{extra}`")));
        }
    }

    let spec = ArchSpec {
        name: name.ok_or_else(|| fail(0, "name", "missing"))?,
        conv1: conv1.ok_or_else(|| fail(0, "conv1", "missing"))?,
        stem_pool,
        stages,
        classifier: classifier.ok_or_else(|| fail(0, "classifier", "missing"))?,
        dense_init: dense_init.unwrap_or(DEFAULT_DENSE_INIT),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "# toy\nname toy\nconv1 3 16 1\nstage 2 16 4 16 4 1 dualpath\nstage 1 8 1 32 0 2 residual\nclassifier 4 meanmax\n";

    #[test]
    fn parses_and_round_trips() {
        let spec = parse_spec(TOY).unwrap();
        assert_eq!(spec.stages.len(), 2);
        assert_eq!(spec.stages[0].family, Family::DualPath);
        assert_eq!(spec.classifier.pooling, Pooling::MeanMax);
        assert_eq!(spec.stem_pool, None);
        assert_eq!(parse_spec(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn groups_must_divide_width() {
        let text = TOY.replace("stage 2 16 4", "stage 2 100 32");
        let err = parse_spec(&text).unwrap_err().to_string();
        assert!(err.contains("groups must divide width"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let err = parse_spec("name a\nconv1 7 x 2\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("conv1.out"), "{err}");
        let err = parse_spec("name a\nconv1 7 8 2\nbogus 1\n").unwrap_err().to_string();
        assert!(err.contains("unknown keyword"), "{err}");
        let err = parse_spec("name a\nconv1 7 8 2\nclassifier 10 avg\n").unwrap_err().to_string();
        assert!(err.contains("at least one stage"), "{err}");
        let err = parse_spec(&TOY.replace("32 0 2 residual", "32 4 2 residual")).unwrap_err().to_string();
        assert!(err.contains("k must be 0"), "{err}");
        let err = parse_spec(&TOY.replace("4 1 dualpath", "4 3 dualpath")).unwrap_err().to_string();
        assert!(err.contains("stride"), "{err}");
    }

    #[test]
    fn extents_follow_the_stride_chain() {
        let spec = parse_spec(TOY).unwrap();
        assert_eq!(spec.stage_extents(32).unwrap(), vec![32, 16]);
        assert!(spec.stage_extents(0).is_err());
    }
}
