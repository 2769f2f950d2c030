//! Analytic parameter and multiply-add accounting.
//!
//! The walk below re-derives every layer width from the spec on its own and
//! shares no code with the network builder, so the two can check each other.

use std::fmt::Write as _;

use crate::arch::{preset, ArchSpec, Family, Reference, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::ops::output_extent;

pub const DEFAULT_INPUT_HW: usize = 224;

pub const CONVENTION: &str = "params: conv Cout*(Cin/G)*Kh*Kw (no bias), BN 2*C, fc K*C+K; \
     madds: conv params*Ho*Wo, fc K*C, BN/ReLU/pool/add/concat free";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { kernel: usize, groups: usize },
    BatchNorm,
    MaxPool,
    AvgPool,
    GlobalPool,
    Linear,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            LayerKind::Conv { kernel, groups: 1 } => write!(f, "conv{kernel}x{kernel}"),
            LayerKind::Conv { kernel, groups } => write!(f, "conv{kernel}x{kernel}/g{groups}"),
            LayerKind::BatchNorm => f.write_str("bn"),
            LayerKind::MaxPool => f.write_str("maxpool"),
            LayerKind::AvgPool => f.write_str("avgpool"),
            LayerKind::GlobalPool => f.write_str("globalpool"),
            LayerKind::Linear => f.write_str("fc"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub layer: String,
    pub kind: LayerKind,
    /// Channels, height, width of the layer output.
    pub out_shape: [usize; 3],
    pub params: u64,
    pub madds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub arch: String,
    pub input_hw: usize,
    pub rows: Vec<Row>,
    pub total_params: u64,
    pub total_madds: u64,
    pub convention: &'static str,
}

struct Walk {
    rows: Vec<Row>,
    hw: usize,
}

impl Walk {
    fn push(&mut self, layer: String, kind: LayerKind, out_shape: [usize; 3], params: u64, madds: u64) {
        self.rows.push(Row { layer, kind, out_shape, params, madds });
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.bn"), LayerKind::BatchNorm, [c, self.hw, self.hw], 2 * c as u64, 0);
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, groups: usize) -> Result<()> {
        let out = output_extent(self.hw, kernel, stride, kernel / 2)
            .ok_or_else(|| Error::invalid("count_flops", format!("feature map {} too small at {name}", self.hw)))?;
        let params = (cout * (cin / groups) * kernel * kernel) as u64;
        self.hw = out;
        self.push(format!("{name}.conv"), LayerKind::Conv { kernel, groups }, [cout, out, out], params, params * (out * out) as u64);
        Ok(())
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, groups: usize) -> Result<()> {
        self.bn(name, cin);
        self.conv(name, cin, cout, kernel, stride, groups)
    }
}

/// Parameter and multiply-add count of every layer for a square input.
pub fn analyze(spec: &ArchSpec, input_hw: usize) -> Result<ComplexityReport> {
    spec.validate()?;
    let mut w = Walk { rows: Vec::new(), hw: input_hw };
    let c1 = spec.conv1;
    {
        let out = output_extent(input_hw, c1.kernel, c1.stride, c1.kernel / 2)
            .ok_or_else(|| Error::invalid("count_flops", format!("input {input_hw} too small for conv1")))?;
        let params = (INPUT_CHANNELS * c1.out_channels * c1.kernel * c1.kernel) as u64;
        w.hw = out;
        w.push("conv1".into(), LayerKind::Conv { kernel: c1.kernel, groups: 1 }, [c1.out_channels, out, out], params, params * (out * out) as u64);
        w.push("conv1.bn".into(), LayerKind::BatchNorm, [c1.out_channels, out, out], 2 * c1.out_channels as u64, 0);
    }
    if let Some(p) = spec.stem_pool {
        w.hw = output_extent(w.hw, p.kernel, p.stride, p.kernel / 2)
            .ok_or_else(|| Error::invalid("count_flops", "feature map too small at stempool"))?;
        w.push("stempool".into(), LayerKind::MaxPool, [c1.out_channels, w.hw, w.hw], 0, 0);
    }

    // Joint width entering the next stage, split into residual and dense parts.
    let (mut res, mut dense) = (c1.out_channels, 0usize);
    for (i, st) in spec.stages.iter().enumerate() {
        let s = i + 1;
        let (r, k, g, b) = (st.residual_width, st.dense_increment, st.groups, st.bottleneck);
        let joint = res + dense;
        match st.family {
            Family::Dense => {
                let mut width = joint;
                if st.stride != 1 || joint != r {
                    w.unit(&format!("stage{s}.transition"), joint, r, 1, 1, 1)?;
                    if st.stride > 1 {
                        w.hw /= st.stride;
                        if w.hw == 0 {
                            return Err(Error::invalid("count_flops", format!("feature map too small at stage {s}")));
                        }
                        w.push(format!("stage{s}.pool"), LayerKind::AvgPool, [r, w.hw, w.hw], 0, 0);
                    }
                    width = r;
                }
                for j in 1..=st.blocks {
                    let name = format!("stage{s}.block{j}");
                    w.unit(&format!("{name}.a"), width, b, 1, 1, 1)?;
                    w.unit(&format!("{name}.b"), b, k, 3, 1, g)?;
                    width += k;
                }
                (res, dense) = (0, width);
            }
            Family::Residual | Family::DualPath => {
                let init = if st.family == Family::DualPath { spec.dense_init * k } else { 0 };
                let entry_hw = w.hw;
                let projected = !(st.stride == 1 && dense == 0 && res == r && init == 0);
                if projected {
                    w.unit(&format!("stage{s}.proj"), joint, r + init, 1, st.stride, 1)?;
                    // The block's own first layers still run at the entry resolution.
                    w.hw = entry_hw;
                }
                let mut width = init;
                for j in 1..=st.blocks {
                    let name = format!("stage{s}.block{j}");
                    let cin = if j == 1 { joint } else { r + width };
                    w.unit(&format!("{name}.a"), cin, b, 1, 1, 1)?;
                    w.unit(&format!("{name}.b"), b, b, 3, if j == 1 { st.stride } else { 1 }, g)?;
                    w.unit(&format!("{name}.c"), b, r + k, 1, 1, 1)?;
                    width += k;
                }
                (res, dense) = (r, width);
            }
        }
    }

    let c = res + dense;
    w.bn("head", c);
    w.push("pool".into(), LayerKind::GlobalPool, [c, 1, 1], 0, 0);
    let classes = spec.classifier.classes;
    w.push("fc".into(), LayerKind::Linear, [classes, 1, 1], (classes * c + classes) as u64, (classes * c) as u64);

    let total_params = w.rows.iter().map(|r| r.params).sum();
    let total_madds = w.rows.iter().map(|r| r.madds).sum();
    Ok(ComplexityReport { arch: spec.name.clone(), input_hw, rows: w.rows, total_params, total_madds, convention: CONVENTION })
}

/// Parameter count; independent of the input size.
pub fn count_params(spec: &ArchSpec) -> Result<ComplexityReport> {
    analyze(spec, DEFAULT_INPUT_HW)
}

pub fn count_flops(spec: &ArchSpec, input_hw: usize) -> Result<ComplexityReport> {
    analyze(spec, input_hw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub value: f64,
    pub reference: f64,
    /// `(value − reference) / reference`.
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub note: Option<String>,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.4e} vs {:.4e} ({:+.2}%, tol {:.1}%) {}",
            self.value,
            self.reference,
            100.0 * self.deviation,
            100.0 * self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        if let Some(note) = &self.note {
            write!(f, " [{note}]")?;
        }
        Ok(())
    }
}

pub fn compare_to_reference(value: f64, reference: f64, tolerance: f64) -> Result<Verdict> {
    if !(reference > 0.0) {
        return Err(Error::invalid("compare_to_reference", format!("reference must be positive, got {reference}")));
    }
    let deviation = (value - reference) / reference;
    let empty = value == 0.0;
    Ok(Verdict {
        value,
        reference,
        deviation,
        tolerance,
        passed: !empty && deviation.abs() <= tolerance,
        note: empty.then(|| "empty model".to_string()),
    })
}

pub const PARAM_TOLERANCE: f64 = 0.02;
pub const MADD_TOLERANCE: f64 = 0.03;

/// Parameter and multiply-add verdicts of one architecture against its published figures.
pub fn compare_report(report: &ComplexityReport, reference: Reference) -> Result<(Verdict, Verdict)> {
    Ok((
        compare_to_reference(report.total_params as f64, reference.params, PARAM_TOLERANCE)?,
        compare_to_reference(report.total_madds as f64, reference.madds, MADD_TOLERANCE)?,
    ))
}

/// Total parameters for each candidate initial dense width multiplier, with
/// the relative deviation from `reference_params`.
pub fn dense_init_sweep(spec: &ArchSpec, candidates: &[usize], reference_params: f64) -> Result<Vec<(usize, u64, f64)>> {
    candidates
        .iter()
        .map(|&m| {
            let mut s = spec.clone();
            s.dense_init = m;
            let p = count_params(&s)?.total_params;
            Ok((m, p, (p as f64 - reference_params) / reference_params))
        })
        .collect()
}

/// Published "fewer parameters / fewer FLOPs" claims, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SavingClaim {
    pub model: &'static str,
    pub baseline: &'static str,
    pub madds: bool,
    pub percent: f64,
}

pub const SAVING_CLAIMS: [SavingClaim; 4] = [
    SavingClaim { model: "dpn98", baseline: "resnext101-64x4d", madds: false, percent: 26.0 },
    SavingClaim { model: "dpn98", baseline: "resnext101-64x4d", madds: true, percent: 25.0 },
    SavingClaim { model: "dpn92", baseline: "resnext101-32x4d", madds: false, percent: 15.0 },
    SavingClaim { model: "dpn92", baseline: "resnext101-32x4d", madds: true, percent: 19.0 },
];

/// Allowed gap between measured and claimed savings, in percentage points.
pub const SAVING_TOLERANCE_PP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SavingCheck {
    pub claim: SavingClaim,
    pub measured: f64,
    pub passed: bool,
}

impl std::fmt::Display for SavingCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} vs {}: {:.2}% fewer {} (claimed {:.0}%, tol {:.0}pp) {}",
            self.claim.model,
            self.claim.baseline,
            self.measured,
            if self.claim.madds { "madds" } else { "params" },
            self.claim.percent,
            SAVING_TOLERANCE_PP,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Measured savings for every claim, counting at `input_hw`.
pub fn check_savings(input_hw: usize) -> Result<Vec<SavingCheck>> {
    let totals = |name: &str| -> Result<(f64, f64)> {
        let r = analyze(&preset(name)?, input_hw)?;
        Ok((r.total_params as f64, r.total_madds as f64))
    };
    SAVING_CLAIMS
        .iter()
        .map(|&claim| {
            let (m, b) = (totals(claim.model)?, totals(claim.baseline)?);
            let (a, z) = if claim.madds { (m.1, b.1) } else { (m.0, b.0) };
            let measured = 100.0 * (1.0 - a / z);
            Ok(SavingCheck { claim, measured, passed: (measured - claim.percent).abs() <= SAVING_TOLERANCE_PP })
        })
        .collect()
}

fn shape_text(s: &[usize; 3]) -> String {
    format!("{}x{}x{}", s[0], s[1], s[2])
}

impl ComplexityReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "type", "out_shape", "params", "madds"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.layer.clone(), r.kind.to_string(), shape_text(&r.out_shape), r.params.to_string(), r.madds.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.layer.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:<12}  {:<14}  {:>12}  {:>16}\n", "layer", "type", "out_shape", "params", "madds");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<12}  {:<14}  {:>12}  {:>16}",
                r.layer,
                r.kind.to_string(),
                shape_text(&r.out_shape),
                r.params,
                r.madds
            );
        }
        let _ = writeln!(s, "{}", self.totals_line());
        s
    }

    pub fn totals_line(&self) -> String {
        format!(
            "total {}: params {} ({:.1}e6) madds {} ({:.1}e9) at {}x{}",
            self.arch,
            self.total_params,
            self.total_params as f64 / 1e6,
            self.total_madds,
            self.total_madds as f64 / 1e9,
            self.input_hw,
            self.input_hw
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{parse_spec, preset};

    #[test]
    fn stem_conv_params() {
        let report = count_params(&preset("resnext101-32x4d").unwrap()).unwrap();
        assert_eq!(report.rows[0].params, 9408);
        assert_eq!(report.rows[0].out_shape, [64, 112, 112]);
    }

    #[test]
    fn totals_are_row_sums() {
        let r = count_flops(&preset("dpn92").unwrap(), 224).unwrap();
        assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(r.total_madds, r.rows.iter().map(|x| x.madds).sum::<u64>());
    }

    #[test]
    fn three_by_three_madds() {
        let spec = parse_spec("name t\nconv1 1 64 1\nstage 1 64 1 64 0 1 residual\nclassifier 10 avg\n").unwrap();
        let r = count_flops(&spec, 56).unwrap();
        let row = r.rows.iter().find(|r| r.layer == "stage1.block1.b.conv").unwrap();
        assert_eq!(row.madds, 115_605_504);
    }

    #[test]
    fn verdicts() {
        assert!(compare_to_reference(37.81e6, 37.8e6, 0.02).unwrap().passed);
        let empty = compare_to_reference(0.0, 37.8e6, 0.02).unwrap();
        assert!(!empty.passed && empty.note.as_deref() == Some("empty model"));
        assert!(compare_to_reference(1.0, 0.0, 0.02).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let r = count_params(&preset("dpn-toy").unwrap()).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("layer,type,out_shape,params,madds"));
        assert_eq!(lines.count(), r.rows.len());
    }

    #[test]
    fn too_small_input_is_an_error() {
        assert!(count_flops(&preset("dpn92").unwrap(), 8).is_ok());
        assert!(count_flops(&preset("densenet161").unwrap(), 8).is_err());
    }
}
