//! Tapped-delay-line channel profiles.
//!
//! Built-in profiles are stored as normalized templates (delays in units of
//! RMS delay spread) and instantiated for a requested delay spread, so the
//! same profile serves both its nominal spread and wider zero-shot variants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Seconds.
    pub delay: f64,
    /// Linear power; the powers of a profile sum to one.
    pub power: f64,
    /// Linear Rician K factor; only the first tap may be non-zero.
    pub rician_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub name: String,
    pub taps: Vec<Tap>,
    /// Seconds.
    pub delay_spread: f64,
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<()> {
        let path = format!("profile `{}`", self.name);
        if self.taps.is_empty() {
            return Err(Error::config(path, "tap list is empty"));
        }
        let total: f64 = self.taps.iter().map(|t| t.power).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(path, format!("tap powers sum to {total}, not 1")));
        }
        for (i, t) in self.taps.iter().enumerate() {
            if !(t.delay >= 0.0) || !(t.power >= 0.0) || !(t.rician_k >= 0.0) {
                return Err(Error::config(&path, format!("tap {i} has a negative or NaN field")));
            }
            if i > 0 && t.rician_k > 0.0 {
                return Err(Error::config(
                    &path,
                    format!("tap {i}: only the first tap may be Rician"),
                ));
            }
            if i > 0 && t.delay <= self.taps[i - 1].delay {
                return Err(Error::config(&path, "tap delays must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// Power-weighted RMS delay spread of the taps.
    pub fn rms_delay_spread(&self) -> f64 {
        rms(self.taps.iter().map(|t| (t.delay, t.power)))
    }
}

fn rms(taps: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let p: f64 = taps.clone().map(|(_, p)| p).sum();
    let mean = taps.clone().map(|(d, p)| d * p).sum::<f64>() / p;
    let var = taps.map(|(d, p)| p * (d - mean).powi(2)).sum::<f64>() / p;
    var.sqrt()
}

/// A profile shape independent of its delay spread.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTemplate {
    pub name: String,
    /// Seconds.
    pub nominal_delay_spread: f64,
    /// `(relative delay, power dB, rician K dB or None)`.
    pub taps: Vec<(f64, f64, Option<f64>)>,
}

impl ProfileTemplate {
    /// Scales delays so the RMS delay spread equals `delay_spread` and
    /// normalizes tap powers to unit total.
    pub fn instantiate(&self, delay_spread: f64) -> Result<ProfileSpec> {
        if !(delay_spread >= 0.0) || !delay_spread.is_finite() {
            return Err(Error::config(
                format!("profile `{}`", self.name),
                format!("delay spread must be finite and non-negative, got {delay_spread}"),
            ));
        }
        let lin: Vec<f64> = self.taps.iter().map(|t| 10f64.powf(t.1 / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        let unit_rms = rms(self.taps.iter().map(|t| t.0).zip(lin.iter().copied()));
        let scale = if unit_rms > 0.0 { delay_spread / unit_rms } else { 0.0 };
        let taps = self
            .taps
            .iter()
            .zip(&lin)
            .map(|(&(d, _, k), &p)| Tap {
                delay: d * scale,
                power: p / total,
                rician_k: k.map_or(0.0, |db| 10f64.powf(db / 10.0)),
            })
            .collect();
        let spec = ProfileSpec {
            name: self.name.clone(),
            taps,
            delay_spread,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn exponential(name: &str, nominal_ns: f64, delays: &[f64], decay: f64) -> ProfileTemplate {
    ProfileTemplate {
        name: name.into(),
        nominal_delay_spread: nominal_ns * 1e-9,
        taps: delays
            .iter()
            .map(|&d| (d, -10.0 * std::f64::consts::LOG10_E * d / decay, None))
            .collect(),
    }
}

/// Named profile templates.
#[derive(Clone, Debug)]
pub struct ProfileRegistry {
    templates: BTreeMap<String, ProfileTemplate>,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ProfileRegistry {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    /// `umi-like`, `uma-like`, `cdlb-like`, `cdld-like` and the single-tap `flat-los`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(exponential("umi-like", 300.0, &[0.0, 0.35, 0.8, 1.35, 2.0, 2.9], 1.0));
        reg.register(exponential(
            "uma-like",
            300.0,
            &[0.0, 0.2, 0.45, 0.7, 1.0, 1.4, 1.9, 2.5, 3.2],
            1.3,
        ));
        reg.register(exponential(
            "cdlb-like",
            600.0,
            &[0.0, 0.1, 0.25, 0.4, 0.6, 0.85, 1.1, 1.4, 1.8, 2.3, 2.9, 3.6],
            1.6,
        ));
        reg.register(ProfileTemplate {
            name: "cdld-like".into(),
            nominal_delay_spread: 10e-9,
            taps: vec![
                (0.0, 0.0, Some(10.0)),
                (0.4, -6.0, None),
                (1.2, -10.0, None),
                (2.4, -15.0, None),
            ],
        });
        reg.register(ProfileTemplate {
            name: "flat-los".into(),
            nominal_delay_spread: 0.0,
            taps: vec![(0.0, 0.0, Some(10.0))],
        });
        reg
    }

    pub fn register(&mut self, template: ProfileTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.templates.contains_key(name)
    }

    pub fn template(&self, name: &str) -> Option<&ProfileTemplate> {
        self.templates.get(name)
    }

    /// Instantiates `name`, at its nominal delay spread unless one is given.
    pub fn build(&self, name: &str, delay_spread: Option<f64>) -> Result<ProfileSpec> {
        let t = self.templates.get(name).ok_or_else(|| {
            Error::config(
                "profile",
                format!(
                    "unknown profile `{name}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        t.instantiate(delay_spread.unwrap_or(t.nominal_delay_spread))
    }
}
