//! Embedded architecture presets and their published complexity figures.

use super::spec::{parse_spec, ArchSpec};
use crate::error::{Error, Result};

const DENSENET161: &str = "\
name densenet161
conv1 7 96 2
stempool 3 2
stage 6 192 1 96 48 1 dense
stage 12 192 1 192 48 2 dense
stage 36 192 1 384 48 2 dense
stage 24 192 1 1056 48 2 dense
classifier 1000 avg
";

const RESNEXT101_32X4D: &str = "\
name resnext101-32x4d
conv1 7 64 2
stempool 3 2
stage 3 128 32 256 0 1 residual
stage 4 256 32 512 0 2 residual
stage 23 512 32 1024 0 2 residual
stage 3 1024 32 2048 0 2 residual
classifier 1000 avg
";

const RESNEXT101_64X4D: &str = "\
name resnext101-64x4d
conv1 7 64 2
stempool 3 2
stage 3 256 64 256 0 1 residual
stage 4 512 64 512 0 2 residual
stage 23 1024 64 1024 0 2 residual
stage 3 2048 64 2048 0 2 residual
classifier 1000 avg
";

const DPN92: &str = "\
name dpn92
conv1 7 64 2
stempool 3 2
stage 3 96 32 256 16 1 dualpath
stage 4 192 32 512 32 2 dualpath
stage 20 384 32 1024 24 2 dualpath
stage 3 768 32 2048 128 2 dualpath
classifier 1000 avg
";

const DPN98: &str = "\
name dpn98
conv1 7 96 2
stempool 3 2
stage 3 160 40 256 16 1 dualpath
stage 6 320 40 512 32 2 dualpath
stage 20 640 40 1024 32 2 dualpath
stage 3 1280 40 2048 128 2 dualpath
classifier 1000 avg
";

const DPN131: &str = "\
name dpn131
conv1 7 128 2
stempool 3 2
stage 4 160 40 256 16 1 dualpath
stage 8 320 40 512 32 2 dualpath
stage 28 640 40 1024 32 2 dualpath
stage 3 1280 40 2048 128 2 dualpath
classifier 1000 avg
";

/// Desk-scale dual path network for 32×32 inputs.
const DPN_TOY: &str = "\
name dpn-toy
conv1 3 16 1
stempool 3 2
stage 2 16 4 16 4 1 dualpath
stage 2 32 4 32 4 2 dualpath
classifier 4 avg
";

pub const PRESET_NAMES: [&str; 7] =
    ["densenet161", "resnext101-32x4d", "resnext101-64x4d", "dpn92", "dpn98", "dpn131", "dpn-toy"];

/// The six published architectures, without the toy preset.
pub const PUBLISHED: [&str; 6] = ["densenet161", "resnext101-32x4d", "resnext101-64x4d", "dpn92", "dpn98", "dpn131"];

pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "densenet161" => DENSENET161,
        "resnext101-32x4d" => RESNEXT101_32X4D,
        "resnext101-64x4d" => RESNEXT101_64X4D,
        "dpn92" => DPN92,
        "dpn98" => DPN98,
        "dpn131" => DPN131,
        "dpn-toy" => DPN_TOY,
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<ArchSpec> {
    let text = preset_text(name).ok_or_else(|| {
        Error::invalid("preset", format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", ")))
    })?;
    parse_spec(text)
}

/// Published parameter count and multiply-adds at 224×224.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub params: f64,
    pub madds: f64,
}

pub fn reference(name: &str) -> Option<Reference> {
    let (params, madds) = match name {
        "densenet161" => (28.9e6, 7.7e9),
        "resnext101-32x4d" => (44.3e6, 8.0e9),
        "resnext101-64x4d" => (83.7e6, 15.5e9),
        "dpn92" => (37.8e6, 6.5e9),
        "dpn98" => (61.7e6, 11.7e9),
        "dpn131" => (79.5e6, 16.0e9),
        _ => return None,
    };
    Some(Reference { params, madds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Family;

    #[test]
    fn every_preset_parses() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            assert_eq!(spec.name, name);
        }
        assert!(preset("vgg16").is_err());
    }

    #[test]
    fn dpn92_fields() {
        let spec = preset("dpn92").unwrap();
        let blocks: Vec<_> = spec.stages.iter().map(|s| s.blocks).collect();
        let ks: Vec<_> = spec.stages.iter().map(|s| s.dense_increment).collect();
        assert_eq!(blocks, [3, 4, 20, 3]);
        assert_eq!(ks, [16, 32, 24, 128]);
        assert!(spec.stages.iter().all(|s| s.groups == 32 && s.family == Family::DualPath));
    }

    #[test]
    fn dpn131_fields() {
        let spec = preset("dpn131").unwrap();
        assert_eq!(spec.conv1.out_channels, 128);
        let blocks: Vec<_> = spec.stages.iter().map(|s| s.blocks).collect();
        assert_eq!(blocks, [4, 8, 28, 3]);
    }

    #[test]
    fn published_extents() {
        for name in PUBLISHED {
            assert_eq!(preset(name).unwrap().stage_extents(224).unwrap(), [56, 28, 14, 7], "{name}");
        }
    }
}
