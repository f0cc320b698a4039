use std::fmt::Write as _;

use crate::{Error, Result};

/// Largest window extent a schedule may use.
pub const MAX_WINDOW: usize = 64;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub layers_per_block: usize,
    pub channels: usize,
    pub heads: usize,
    pub base_window: usize,
    /// Square window extent for each layer of a block.
    pub window_schedule: Vec<usize>,
    pub upscale: usize,
    pub ffn_expansion: usize,
    /// Bottleneck divisor of the channel gate (`C → C/r → C`).
    pub gate_reduction: usize,
    /// Odd layers use channel self-correlation instead of spatial.
    pub alternate: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_blocks: 4,
            layers_per_block: 6,
            channels: 60,
            heads: 6,
            base_window: 8,
            window_schedule: vec![8, 8, 16, 16, 32, 32],
            upscale: 2,
            ffn_expansion: 2,
            gate_reduction: 4,
            alternate: true,
        }
    }
}

/// Keys accepted by [`ModelConfig::apply`].
pub const CONFIG_KEYS: [&str; 10] = [
    "num_blocks",
    "layers_per_block",
    "channels",
    "heads",
    "base_window",
    "window_schedule",
    "upscale",
    "ffn_expansion",
    "gate_reduction",
    "alternate",
];

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {value:?}")))
}

impl ModelConfig {
    /// One block of two layers over 8 channels; every layer runs wavelet
    /// attention so both the undecimated and the one-level paths are used.
    pub fn tiny() -> Self {
        ModelConfig {
            num_blocks: 1,
            layers_per_block: 2,
            channels: 8,
            heads: 2,
            base_window: 4,
            window_schedule: vec![4, 8],
            upscale: 2,
            ffn_expansion: 2,
            gate_reduction: 4,
            alternate: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / 2 / self.heads
    }

    pub fn gate_hidden(&self) -> usize {
        (self.channels / self.gate_reduction).max(1)
    }

    /// Whether layer `i` uses channel self-correlation.
    pub fn is_channel_layer(&self, i: usize) -> bool {
        self.alternate && i % 2 == 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("num_blocks", self.num_blocks),
            ("layers_per_block", self.layers_per_block),
            ("channels", self.channels),
            ("heads", self.heads),
            ("base_window", self.base_window),
            ("ffn_expansion", self.ffn_expansion),
            ("gate_reduction", self.gate_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.channels % 2 != 0 {
            return bad(format!("channels ({}) must be even", self.channels));
        }
        if (self.channels / 2) % self.heads != 0 {
            return bad(format!(
                "half the channels ({}) must divide into {} heads",
                self.channels / 2,
                self.heads
            ));
        }
        if !(2..=4).contains(&self.upscale) {
            return bad(format!("upscale must be 2, 3 or 4, got {}", self.upscale));
        }
        if self.window_schedule.len() != self.layers_per_block {
            return bad(format!(
                "window schedule has {} entries for {} layers",
                self.window_schedule.len(),
                self.layers_per_block
            ));
        }
        for (i, &w) in self.window_schedule.iter().enumerate() {
            if w > MAX_WINDOW {
                return bad(format!("window {w} exceeds the {MAX_WINDOW} cap"));
            }
            crate::windowing::WindowLayout::new(i, (w, w), (self.base_window, self.base_window))?;
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "num_blocks" => self.num_blocks = parse_usize(key, value)?,
            "layers_per_block" => self.layers_per_block = parse_usize(key, value)?,
            "channels" => self.channels = parse_usize(key, value)?,
            "heads" => self.heads = parse_usize(key, value)?,
            "base_window" => self.base_window = parse_usize(key, value)?,
            "upscale" => self.upscale = parse_usize(key, value)?,
            "ffn_expansion" => self.ffn_expansion = parse_usize(key, value)?,
            "gate_reduction" => self.gate_reduction = parse_usize(key, value)?,
            "window_schedule" => {
                self.window_schedule = value
                    .split(',')
                    .map(|s| parse_usize(key, s))
                    .collect::<Result<_>>()?
            }
            "alternate" => {
                self.alternate = match value.trim() {
                    "true" | "1" | "on" => true,
                    "false" | "0" | "off" => false,
                    other => return Err(Error::Config(format!("alternate: expected true/false, got {other:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// The config as `key=value` lines accepted by [`ModelConfig::apply`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sched: Vec<String> = self.window_schedule.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "num_blocks={}", self.num_blocks);
        let _ = writeln!(s, "layers_per_block={}", self.layers_per_block);
        let _ = writeln!(s, "channels={}", self.channels);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "base_window={}", self.base_window);
        let _ = writeln!(s, "window_schedule={}", sched.join(","));
        let _ = writeln!(s, "upscale={}", self.upscale);
        let _ = writeln!(s, "ffn_expansion={}", self.ffn_expansion);
        let _ = writeln!(s, "gate_reduction={}", self.gate_reduction);
        let _ = writeln!(s, "alternate={}", self.alternate);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::default().head_dim(), 5);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::default();
        c.channels = 61;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.heads = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.window_schedule.pop();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.window_schedule[5] = 128;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.window_schedule[5] = 24;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.upscale = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::tiny();
        c.apply(&ModelConfig::default().to_text()).unwrap();
        assert_eq!(c, ModelConfig::default());
        assert!(c.apply("bogus=1").is_err());
        assert!(c.apply("channels").is_err());
        c.apply("# note\n\nwindow_schedule = 8, 16 \nalternate=off").unwrap();
        assert_eq!(c.window_schedule, vec![8, 16]);
        assert!(!c.alternate);
    }
}
