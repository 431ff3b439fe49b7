//! Ablation variant names.

use std::fmt;

use mmcl::decoupling::CompareMode;
use mmcl::model::{Ablation, MmclConfig, ModalityMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoCsd,
    NoCce,
    NoCsm,
    FvsMajor,
    FvsMean,
    CommonOnly,
    SpecificOnly,
    Modality(ModalityMask),
}

/// Names accepted on the command line, `modality` takes a mask argument.
pub const NAMES: &[&str] = &[
    "full",
    "no-csd",
    "no-cce",
    "no-csm",
    "fvs-major",
    "fvs-mean",
    "common-only",
    "specific-only",
    "modality MASK",
];

const FIXED: [Variant; 8] = [
    Variant::Full,
    Variant::NoCsd,
    Variant::NoCce,
    Variant::NoCsm,
    Variant::FvsMajor,
    Variant::FvsMean,
    Variant::CommonOnly,
    Variant::SpecificOnly,
];

impl Variant {
    pub fn apply(self, base: &MmclConfig) -> MmclConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => cfg.ablation = Ablation::full(),
            Variant::NoCsd => cfg.ablation = Ablation::no_csd(),
            Variant::NoCce => cfg.ablation = Ablation::no_cce(),
            Variant::NoCsm => cfg.ablation = Ablation::no_csm(),
            Variant::FvsMajor => cfg.compare_mode = CompareMode::Major,
            Variant::FvsMean => cfg.compare_mode = CompareMode::Mean,
            Variant::CommonOnly => cfg.ablation = Ablation::common_only(),
            Variant::SpecificOnly => cfg.ablation = Ablation::specific_only(),
            Variant::Modality(mask) => cfg.modalities = mask,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Modality(mask) => write!(f, "modality-{mask}"),
            other => {
                let i = FIXED
                    .iter()
                    .position(|v| v == other)
                    .expect("fixed variant");
                f.write_str(NAMES[i])
            }
        }
    }
}

/// Parses `--variant` tokens. `all` expands to every fixed variant and
/// `modality` consumes the following token as a mask such as `VT`.
pub fn parse_variants(tokens: &[String]) -> Result<Vec<Variant>, String> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        match tok.as_str() {
            "all" => out.extend(FIXED),
            "modality" => {
                let mask = it
                    .next()
                    .ok_or("variant 'modality' needs a mask such as VT")?;
                out.push(Variant::Modality(mask.parse()?));
            }
            name => match NAMES[..FIXED.len()].iter().position(|n| *n == name) {
                Some(i) => out.push(FIXED[i]),
                None => {
                    return Err(format!(
                        "unknown variant '{name}'; valid variants: {}, all",
                        NAMES.join(", ")
                    ))
                }
            },
        }
    }
    if out.is_empty() {
        return Err(format!(
            "no variant given; valid variants: {}, all",
            NAMES.join(", ")
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_names_masks_and_all() {
        let v = parse_variants(&toks("no-csd modality VT fvs-mean")).unwrap();
        assert_eq!(v[0], Variant::NoCsd);
        assert_eq!(v[1].to_string(), "modality-VT");
        assert_eq!(v[2], Variant::FvsMean);
        assert_eq!(parse_variants(&toks("all")).unwrap().len(), 8);
    }

    #[test]
    fn unknown_names_list_the_valid_ones() {
        let e = parse_variants(&toks("no-xyz")).unwrap_err();
        assert!(e.contains("no-csd") && e.contains("specific-only"));
        assert!(parse_variants(&toks("modality")).is_err());
        assert!(parse_variants(&toks("modality Q")).is_err());
    }

    #[test]
    fn display_round_trips() {
        for v in FIXED {
            assert_eq!(parse_variants(&[v.to_string()]).unwrap(), vec![v]);
        }
    }

    #[test]
    fn apply_changes_the_right_field() {
        let base = MmclConfig::default();
        assert_eq!(
            Variant::FvsMajor.apply(&base).compare_mode,
            CompareMode::Major
        );
        assert!(!Variant::NoCsm.apply(&base).ablation.uses_csm());
        assert_eq!(Variant::Full.apply(&base), base);
    }
}
