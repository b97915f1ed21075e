//! Electrode layouts: unit-sphere positions, scalp region labels and
//! mastoid flags.
//!
//! File format (comma separated, one record per channel, with header):
//!
//! ```text
//! label,x,y,z,region,is_mastoid
//! Fp1,-0.309017,0.951057,0.000000,frontal,false
//! ```
//!
//! Coordinates: x towards the right ear, y towards the nose, z up. Positions
//! are rescaled to unit radius on load.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BIOSEMI64: &str = include_str!("../../montages/biosemi64.csv");
const BIOSEMI128: &str = include_str!("../../montages/biosemi128.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Frontal,
    Central,
    Parietal,
    Temporal,
    Occipital,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Frontal,
        Region::Central,
        Region::Parietal,
        Region::Temporal,
        Region::Occipital,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Frontal => "frontal",
            Region::Central => "central",
            Region::Parietal => "parietal",
            Region::Temporal => "temporal",
            Region::Occipital => "occipital",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown region {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub region: Region,
    pub is_mastoid: bool,
}

impl Electrode {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Bundled layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// 64-channel 10-10 cap, no mastoids (data assumed pre-referenced).
    Biosemi64,
    /// 128-channel cap (approximate positions) with regions taken from the
    /// nearest 10-20 landmark and two mastoid electrodes.
    Biosemi128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    electrodes: Vec<Electrode>,
}

impl Montage {
    pub fn new(mut electrodes: Vec<Electrode>) -> Result<Self> {
        if electrodes.is_empty() {
            return Err(Error::Config("montage has no channels".into()));
        }
        for e in &mut electrodes {
            let r = (e.x * e.x + e.y * e.y + e.z * e.z).sqrt();
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!(
                    "electrode {} has no usable position",
                    e.label
                )));
            }
            e.x /= r;
            e.y /= r;
            e.z /= r;
        }
        let mut labels: Vec<&str> = electrodes.iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate electrode label".into()));
        }
        Ok(Self { electrodes })
    }

    pub fn builtin(layout: Layout) -> Montage {
        let text = match layout {
            Layout::Biosemi64 => BIOSEMI64,
            Layout::Biosemi128 => BIOSEMI128,
        };
        Montage::from_reader(text.as_bytes()).expect("bundled montage parses")
    }

    /// Bundled layout for 64 or 128 channels, otherwise a generated cap.
    pub fn for_channels(n: usize) -> Result<Montage> {
        match n {
            64 => Ok(Montage::builtin(Layout::Biosemi64)),
            128 => Ok(Montage::builtin(Layout::Biosemi128)),
            _ => Montage::generated(n, "E"),
        }
    }

    /// `n` electrodes on a golden-angle spiral covering the scalp down to
    /// 22.5° below the equator. Each gets the region of the nearest 64-cap
    /// landmark; for `n ≥ 8` the electrodes closest to the two mastoid
    /// sites are flagged as mastoids.
    pub fn generated(n: usize, prefix: &str) -> Result<Montage> {
        if n == 0 {
            return Err(Error::Config("montage needs at least one channel".into()));
        }
        let landmarks = Montage::builtin(Layout::Biosemi64);
        let z_min = (112.5f64).to_radians().cos();
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut electrodes: Vec<Electrode> = (0..n)
            .map(|i| {
                let z = 1.0 - (1.0 - z_min) * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let (x, y) = (r * phi.cos(), r * phi.sin());
                let region = landmarks.nearest(&[x, y, z]).region;
                Electrode {
                    label: format!("{prefix}{}", i + 1),
                    x,
                    y,
                    z,
                    region,
                    is_mastoid: false,
                }
            })
            .collect();
        if let Some(labels) = layout_labels(prefix, n) {
            for (e, l) in electrodes.iter_mut().zip(labels) {
                e.label = l;
            }
        }
        if n >= 8 {
            let (th, az) = (115f64.to_radians(), 110f64.to_radians());
            for side in [-1.0, 1.0] {
                let target = [side * th.sin() * az.sin(), th.sin() * az.cos(), th.cos()];
                let best = (0..n)
                    .min_by(|&a, &b| {
                        dist2(&electrodes[a].position(), &target)
                            .total_cmp(&dist2(&electrodes[b].position(), &target))
                    })
                    .unwrap();
                electrodes[best].is_mastoid = true;
            }
        }
        Montage::new(electrodes)
    }

    fn nearest(&self, p: &[f64; 3]) -> &Electrode {
        self.electrodes
            .iter()
            .min_by(|a, b| dist2(&a.position(), p).total_cmp(&dist2(&b.position(), p)))
            .unwrap()
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Montage> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let electrodes = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<Electrode>, _>>()?;
        Montage::new(electrodes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Montage> {
        let file = std::fs::File::open(path.as_ref())?;
        Montage::from_reader(std::io::BufReader::new(file))
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.electrodes {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn labels(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.label.clone()).collect()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.electrodes.iter().map(Electrode::position).collect()
    }

    pub fn mastoids(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.electrodes[i].is_mastoid)
            .collect()
    }

    /// Channel indices labelled with `region`, in montage order.
    pub fn channels_in(&self, region: Region) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.electrodes[i].region == region)
            .collect()
    }

    /// The montage restricted to `channels`, in the given order.
    pub fn subset(&self, channels: &[usize]) -> Result<Montage> {
        let electrodes = channels
            .iter()
            .map(|&c| {
                self.electrodes.get(c).cloned().ok_or_else(|| {
                    Error::InvalidInput(format!("channel {c} not in montage"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Montage::new(electrodes)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// BioSemi-style `A1..D32` labels for the 128-channel cap.
fn layout_labels(prefix: &str, n: usize) -> Option<Vec<String>> {
    (prefix == "biosemi" && n == 128).then(|| {
        ['A', 'B', 'C', 'D']
            .iter()
            .flat_map(|bank| (1..=32).map(move |i| format!("{bank}{i}")))
            .collect()
    })
}
