use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LstmHumanfi,
    CnnBilstmTemporalAttn,
    CnnBilstmDualAttn,
    CustomResnet1d,
    CustomEcaResnet1d,
    OptResnet1dJaril,
    OptEcaResnet1dJaril,
    Tcn,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::LstmHumanfi,
        Family::CnnBilstmTemporalAttn,
        Family::CnnBilstmDualAttn,
        Family::CustomResnet1d,
        Family::CustomEcaResnet1d,
        Family::OptResnet1dJaril,
        Family::OptEcaResnet1dJaril,
        Family::Tcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::LstmHumanfi => "lstm_humanfi",
            Family::CnnBilstmTemporalAttn => "cnn_bilstm_temporal_attn",
            Family::CnnBilstmDualAttn => "cnn_bilstm_dual_attn",
            Family::CustomResnet1d => "custom_resnet1d",
            Family::CustomEcaResnet1d => "custom_eca_resnet1d",
            Family::OptResnet1dJaril => "opt_resnet1d_jaril",
            Family::OptEcaResnet1dJaril => "opt_eca_resnet1d_jaril",
            Family::Tcn => "tcn",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Family::LstmHumanfi => "LSTM-HumanFi",
            Family::CnnBilstmTemporalAttn => "CNN-BiLSTM (temporal attention)",
            Family::CnnBilstmDualAttn => "CNN-BiLSTM (dual attention)",
            Family::CustomResnet1d => "CustomResNet1D",
            Family::CustomEcaResnet1d => "CustomECAResNet1D",
            Family::OptResnet1dJaril => "OptResNet1D-JARIL",
            Family::OptEcaResnet1dJaril => "OptECAResNet1D-JARIL",
            Family::Tcn => "TemporalConvNet",
        }
    }

    pub fn is_lstm(self) -> bool {
        matches!(
            self,
            Family::LstmHumanfi | Family::CnnBilstmTemporalAttn | Family::CnnBilstmDualAttn
        )
    }

    pub fn is_resnet(self) -> bool {
        matches!(
            self,
            Family::CustomResnet1d | Family::CustomEcaResnet1d | Family::OptResnet1dJaril | Family::OptEcaResnet1dJaril
        )
    }

    pub fn has_eca(self) -> bool {
        matches!(self, Family::CustomEcaResnet1d | Family::OptEcaResnet1dJaril)
    }

    pub fn strided_stages(self) -> bool {
        matches!(self, Family::OptResnet1dJaril | Family::OptEcaResnet1dJaril)
    }

    pub fn default_base_width(self) -> usize {
        match self {
            Family::OptResnet1dJaril => 128,
            // closest width to the published 3.64M at C=52, K=20
            Family::OptEcaResnet1dJaril => 92,
            _ => 64,
        }
    }
}

/// Declarative model description; unset family parameters take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub input_channels: usize,
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default, alias = "lstm_units", skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bidirectional: Option<bool>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default)]
    pub mixup: bool,
    #[serde(default)]
    pub smoothing: bool,
}

impl ModelConfig {
    pub fn new(family: Family, input_channels: usize, num_classes: usize) -> Self {
        Self {
            family,
            input_channels,
            num_classes,
            hidden_dim: None,
            num_layers: None,
            bidirectional: None,
            dropout: 0.0,
            layers: None,
            base_width: None,
            channels: None,
            kernel_size: None,
            mixup: false,
            smoothing: false,
        }
    }

    pub fn tcn(channels: &[usize], kernel_size: usize, c: usize, k: usize) -> Self {
        Self {
            channels: Some(channels.to_vec()),
            kernel_size: Some(kernel_size),
            ..Self::new(Family::Tcn, c, k)
        }
    }

    /// Smallest sensible instance of a family (every width at most 8).
    pub fn toy(family: Family, c: usize, k: usize) -> Self {
        let mut cfg = Self::new(family, c, k);
        match family {
            Family::LstmHumanfi | Family::CnnBilstmTemporalAttn | Family::CnnBilstmDualAttn => cfg.hidden_dim = Some(4),
            Family::Tcn => {
                cfg.channels = Some(vec![4, 8]);
                cfg.kernel_size = Some(2);
            }
            _ => cfg.base_width = Some(1),
        }
        cfg
    }

    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(64)
    }

    pub fn lstm_layers(&self) -> usize {
        self.num_layers.unwrap_or(1)
    }

    /// The CNN-BiLSTM families are always bidirectional.
    pub fn is_bidirectional(&self) -> bool {
        match self.family {
            Family::LstmHumanfi => self.bidirectional.unwrap_or(true),
            _ => true,
        }
    }

    pub fn residual_layers(&self) -> Vec<usize> {
        self.layers.clone().unwrap_or_else(|| vec![1, 1, 1, 1])
    }

    pub fn width(&self) -> usize {
        self.base_width.unwrap_or_else(|| self.family.default_base_width())
    }

    pub fn tcn_channels(&self) -> Vec<usize> {
        self.channels.clone().unwrap_or_else(|| vec![64, 128])
    }

    pub fn tcn_kernel(&self) -> usize {
        self.kernel_size.unwrap_or(2)
    }

    /// Shortest window the conv stem accepts.
    pub fn min_window_len(&self) -> usize {
        match self.family {
            Family::CnnBilstmTemporalAttn | Family::CnnBilstmDualAttn => 3,
            f if f.is_resnet() => 7,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("{}: {m}", self.family.as_str())));
        if self.input_channels == 0 || self.num_classes < 2 {
            return fail(format!(
                "input_channels {} / num_classes {} must be positive (num_classes >= 2)",
                self.input_channels, self.num_classes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.family {
            Family::LstmHumanfi | Family::CnnBilstmTemporalAttn | Family::CnnBilstmDualAttn => {
                if self.hidden() == 0 || self.lstm_layers() == 0 {
                    return fail("hidden_dim and num_layers must be positive".into());
                }
                if self.family != Family::LstmHumanfi && self.bidirectional == Some(false) {
                    return fail("CNN-BiLSTM families are bidirectional".into());
                }
            }
            Family::Tcn => {
                let ch = self.tcn_channels();
                if ch.is_empty() || ch.contains(&0) || self.tcn_kernel() == 0 {
                    return fail("channel list and kernel_size must be non-empty and positive".into());
                }
            }
            _ => {
                let layers = self.residual_layers();
                if layers.len() != 4 {
                    return fail(format!("residual layer list has {} entries, expected 4", layers.len()));
                }
                if layers.contains(&0) || self.width() == 0 {
                    return fail("residual layer counts and base_width must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn check_window(&self, len: usize) -> Result<()> {
        if len < self.min_window_len() {
            return Err(Error::Config(format!(
                "{}: stem kernel {} is wider than the {len}-step window",
                self.family.as_str(),
                self.min_window_len()
            )));
        }
        Ok(())
    }

    /// Compact configuration string for report tables.
    pub fn describe(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        match self.family {
            Family::LstmHumanfi | Family::CnnBilstmTemporalAttn | Family::CnnBilstmDualAttn => {
                parts.push(format!("hidden={}", self.hidden()));
                parts.push(format!("layers={}", self.lstm_layers()));
                if self.family == Family::LstmHumanfi {
                    parts.push(String::from(if self.is_bidirectional() { "bi" } else { "uni" }));
                }
            }
            Family::Tcn => {
                let ch: Vec<String> = self.tcn_channels().iter().map(|c| format!("{c}")).collect();
                parts.push(format!("[{}]", ch.join(",")));
                parts.push(format!("kernel_size={}", self.tcn_kernel()));
            }
            _ => {
                let l: Vec<String> = self.residual_layers().iter().map(|c| format!("{c}")).collect();
                parts.push(format!("[{}]", l.join(",")));
                parts.push(format!("width={}", self.width()));
            }
        }
        if self.dropout > 0.0 {
            parts.push(format!("DR={}", self.dropout));
        }
        if self.mixup {
            parts.push("M".into());
        }
        if self.smoothing {
            parts.push("S".into());
        }
        parts.join(", ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::parse(f.as_str()).unwrap(), f);
        }
        assert!(matches!(Family::parse("vit"), Err(Error::Config(_))));
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::tcn(&[64, 128], 2, 52, 20).validate().is_ok());
        let mut c = ModelConfig::new(Family::CustomResnet1d, 52, 20);
        c.layers = Some(vec![1, 1, 1]);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Family::Tcn, 52, 20);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::new(Family::Tcn, 0, 20).validate().is_err());
        let c = ModelConfig::new(Family::CustomResnet1d, 52, 20);
        assert!(c.check_window(6).is_err());
        assert!(c.check_window(50).is_ok());
    }

    #[test]
    fn describe_matches_table_style() {
        let mut c = ModelConfig::tcn(&[64, 128], 2, 52, 20);
        c.dropout = 0.5;
        c.mixup = true;
        assert_eq!(c.describe(), "[64,128], kernel_size=2, DR=0.5, M");
    }
}
