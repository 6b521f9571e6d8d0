//! Benchmark scenario builders and their configuration.
//!
//! A configuration is a flat `key = value` text file; `#` starts a comment.
//! Every key can also be overridden programmatically or from the CLI.
//!
//! | key            | meaning                                                         |
//! |----------------|-----------------------------------------------------------------|
//! | `scenario`     | `sparse`, `dense` or `large` (`bidisperse` is an alias of large)|
//! | `grid`         | rank grid, e.g. `2x2x2`                                         |
//! | `ranks`        | rank count; used to pick a grid when `grid` is absent           |
//! | `block`        | per-rank block extent (sparse, dense) or building block edge (large) |
//! | `blocks`       | building blocks per axis (large)                                |
//! | `domain`       | total extent, overrides `block` (sparse, large)                 |
//! | `lattice`      | `sc` or `hcp`                                                   |
//! | `spacing`      | lattice spacing                                                 |
//! | `radius`       | small sphere radius                                             |
//! | `radius_large` | central sphere radius (large)                                   |
//! | `fill`         | medium around the large sphere: `sparse` (sc) or `dense` (hcp)  |
//! | `vmax`         | random velocity components are uniform in `[-vmax, vmax]`       |
//! | `velocity`     | constant initial velocity added to every small sphere           |
//! | `dt`, `steps`, `seed`                                                            |
//! | `sync`         | `nn` or `so`                                                    |
//! | `transport`    | `seq` or `threads`                                              |
//! | `periodic`     | axes that wrap, e.g. `xy`, `xyz` or `none`                      |
//! | `gravity`, `stiffness`, `damping`, `density`                                     |
//! | `snapshot_every` | snapshot interval in steps, 0 disables                        |
//!
//! Random velocities come from ChaCha8 seeded with `seed`; one draw per
//! lattice site in lattice order (z slowest, x fastest), three components
//! each, mapped to `[-vmax, vmax]` as `vmax * (2u - 1)` with
//! `u = (next_u64 >> 11) * 2^-53`. Sites are drawn even when the site is
//! later dropped, so velocities do not depend on the large sphere radius.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{ContactParams, Wall};
use crate::geometry::{Aabb, DomainBox, Vec3};
use crate::particle::{ParticleId, ParticleState};
use crate::partition::Partition;
use crate::sync::SyncStrategy;
use crate::world::{ExecMode, World};
use crate::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
}

fn invalid(key: &str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Sparse,
    Dense,
    Large,
}

impl FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "dense" => Ok(Self::Dense),
            "large" | "bidisperse" => Ok(Self::Large),
            o => Err(format!("unknown scenario `{o}`")),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sparse => "sparse",
            Self::Dense => "dense",
            Self::Large => "large",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lattice {
    SimpleCubic,
    Hcp,
}

impl FromStr for Lattice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sc" => Ok(Self::SimpleCubic),
            "hcp" => Ok(Self::Hcp),
            o => Err(format!("unknown lattice `{o}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fill {
    Sparse,
    Dense,
}

impl FromStr for Fill {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "dense" => Ok(Self::Dense),
            o => Err(format!("unknown fill `{o}`")),
        }
    }
}

/// Fully resolved scenario description. Use [`ScenarioConfig::defaults`]
/// and then override fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub grid: [usize; 3],
    pub block: Vec3,
    pub blocks: [usize; 3],
    pub domain: Option<Vec3>,
    pub lattice: Lattice,
    pub spacing: f64,
    pub radius: f64,
    pub radius_large: Option<f64>,
    pub fill: Fill,
    pub vmax: f64,
    pub velocity: Vec3,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
    pub sync: SyncStrategy,
    pub transport: ExecMode,
    pub periodic: [bool; 3],
    pub gravity: Vec3,
    pub stiffness: f64,
    pub damping: f64,
    pub density: f64,
    pub snapshot_every: u64,
}

/// Row spacing factor of a close-packed layer.
const ROW: f64 = 0.866_025_403_784_438_6; // sqrt(3) / 2

/// Layer spacing factor of hcp stacking.
fn layer_factor() -> f64 {
    (2.0f64 / 3.0).sqrt()
}

impl ScenarioConfig {
    /// Reference parameters of each scenario on a single rank.
    pub fn defaults(kind: ScenarioKind) -> ScenarioConfig {
        let base = ScenarioConfig {
            kind,
            grid: [1, 1, 1],
            block: Vec3::splat(20.0),
            blocks: [1, 1, 1],
            domain: None,
            lattice: Lattice::SimpleCubic,
            spacing: 1.0,
            radius: 0.4,
            radius_large: None,
            fill: Fill::Sparse,
            vmax: 0.1,
            velocity: Vec3::ZERO,
            dt: 1.0,
            steps: 100,
            seed: 1,
            sync: SyncStrategy::ShadowOwner,
            transport: ExecMode::Sequential,
            periodic: [false; 3],
            gravity: Vec3::ZERO,
            stiffness: 0.2,
            damping: 0.02,
            density: 1.0,
            snapshot_every: 0,
        };
        match kind {
            ScenarioKind::Sparse => base,
            ScenarioKind::Dense => {
                let tilt = 30f64.to_radians();
                ScenarioConfig {
                    block: Vec3::new(20.0, 20.0 * ROW, 1.0 + 9.0 * layer_factor()),
                    lattice: Lattice::Hcp,
                    radius: 0.5,
                    vmax: 0.0,
                    velocity: Vec3::new(0.1, 0.0, 0.0),
                    dt: 0.01,
                    periodic: [true, true, false],
                    gravity: Vec3::new(tilt.sin(), 0.0, -tilt.cos()),
                    stiffness: 1000.0,
                    damping: 5.0,
                    ..base
                }
            }
            ScenarioKind::Large => ScenarioConfig {
                grid: [4, 4, 4],
                block: Vec3::splat(80.0),
                radius_large: Some(30.0),
                dt: 0.1,
                periodic: [true; 3],
                stiffness: 5.0,
                damping: 0.05,
                ..base
            },
        }
    }

    pub fn rank_count(&self) -> usize {
        self.grid.iter().product()
    }

    /// Total domain extent.
    pub fn domain_extent(&self) -> Vec3 {
        if let Some(d) = self.domain {
            return d;
        }
        match self.kind {
            ScenarioKind::Sparse => Vec3::new(
                self.block.x * self.grid[0] as f64,
                self.block.y * self.grid[1] as f64,
                self.block.z * self.grid[2] as f64,
            ),
            ScenarioKind::Dense => Vec3::new(
                self.block.x * self.grid[0] as f64,
                self.block.y * self.grid[1] as f64,
                self.block.z,
            ),
            ScenarioKind::Large => Vec3::new(
                self.block.x * self.blocks[0] as f64,
                self.block.y * self.blocks[1] as f64,
                self.block.z * self.blocks[2] as f64,
            ),
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let v = value.trim();
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ScenarioError>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| invalid(key, e.to_string()))
        }
        match key.trim() {
            "scenario" => {
                // resets everything else to that scenario's defaults
                let kind: ScenarioKind = v.parse().map_err(|e: String| invalid(key, e))?;
                *self = ScenarioConfig::defaults(kind);
            }
            "grid" => self.grid = parse_triple(key, v)?,
            "ranks" => {
                let n: usize = num(key, v)?;
                self.grid = choose_grid(n, self.kind == ScenarioKind::Dense).ok_or_else(|| invalid(key, "must be positive"))?;
            }
            "block" => self.block = parse_vec(key, v)?,
            "blocks" => self.blocks = parse_triple(key, v)?,
            "domain" => self.domain = Some(parse_vec(key, v)?),
            "lattice" => self.lattice = v.parse().map_err(|e: String| invalid(key, e))?,
            "spacing" => self.spacing = num(key, v)?,
            "radius" => self.radius = num(key, v)?,
            "radius_large" | "radius-large" => {
                self.radius_large = if v == "none" { None } else { Some(num(key, v)?) };
            }
            "fill" => {
                self.fill = v.parse().map_err(|e: String| invalid(key, e))?;
                let (lattice, radius) = match self.fill {
                    Fill::Sparse => (Lattice::SimpleCubic, 0.4),
                    Fill::Dense => (Lattice::Hcp, 0.4),
                };
                self.lattice = lattice;
                self.radius = radius;
                self.spacing = 1.0;
            }
            "vmax" => self.vmax = num(key, v)?,
            "velocity" => self.velocity = parse_vec(key, v)?,
            "dt" => self.dt = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "sync" => self.sync = v.parse().map_err(|e: String| invalid(key, e))?,
            "transport" => self.transport = v.parse().map_err(|e: String| invalid(key, e))?,
            "periodic" => {
                let mut p = [false; 3];
                if v != "none" {
                    for c in v.chars() {
                        match c {
                            'x' => p[0] = true,
                            'y' => p[1] = true,
                            'z' => p[2] = true,
                            _ => return Err(invalid(key, "expected a subset of `xyz` or `none`")),
                        }
                    }
                }
                self.periodic = p;
            }
            "gravity" => self.gravity = parse_vec(key, v)?,
            "stiffness" => self.stiffness = num(key, v)?,
            "damping" => self.damping = num(key, v)?,
            "density" => self.density = num(key, v)?,
            "snapshot_every" | "snapshot-every" => self.snapshot_every = num(key, v)?,
            other => return Err(ScenarioError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parse configuration text. A `scenario` key, if present, must come
    /// first since it resets every other field to that scenario's defaults.
    pub fn parse(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ScenarioError::Parse {
                line: n + 1,
                msg: "expected `key = value`".into(),
            })?;
            pairs.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let kind = match pairs.iter().find(|p| p.1 == "scenario") {
            Some((line, _, v)) => v.parse().map_err(|msg| ScenarioError::Parse { line: *line, msg })?,
            None => ScenarioKind::Sparse,
        };
        let mut cfg = ScenarioConfig::defaults(kind);
        for (_, k, v) in pairs.iter().filter(|p| p.1 != "scenario") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Render as configuration text that [`ScenarioConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let triple = |t: [usize; 3]| format!("{}x{}x{}", t[0], t[1], t[2]);
        let vec = |v: Vec3| format!("{:?},{:?},{:?}", v.x, v.y, v.z);
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("grid", triple(self.grid));
        kv.insert("block", vec(self.block));
        kv.insert("blocks", triple(self.blocks));
        if let Some(d) = self.domain {
            kv.insert("domain", vec(d));
        }
        kv.insert(
            "lattice",
            match self.lattice {
                Lattice::SimpleCubic => "sc",
                Lattice::Hcp => "hcp",
            }
            .into(),
        );
        kv.insert("spacing", format!("{:?}", self.spacing));
        // `fill` sorts before `lattice`, `radius` and `spacing`, which then
        // override the values it implies
        kv.insert(
            "fill",
            match self.fill {
                Fill::Sparse => "sparse",
                Fill::Dense => "dense",
            }
            .into(),
        );
        kv.insert("radius", format!("{:?}", self.radius));
        kv.insert(
            "radius_large",
            self.radius_large.map_or("none".to_string(), |r| format!("{r:?}")),
        );
        kv.insert("vmax", format!("{:?}", self.vmax));
        kv.insert("velocity", vec(self.velocity));
        kv.insert("dt", format!("{:?}", self.dt));
        kv.insert("steps", self.steps.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("sync", self.sync.short_name().into());
        kv.insert(
            "transport",
            match self.transport {
                ExecMode::Sequential => "seq",
                ExecMode::Threads => "threads",
            }
            .into(),
        );
        let axes: String = ['x', 'y', 'z'].iter().zip(self.periodic).filter(|(_, p)| *p).map(|(c, _)| *c).collect();
        kv.insert("periodic", if axes.is_empty() { "none".into() } else { axes });
        kv.insert("gravity", vec(self.gravity));
        kv.insert("stiffness", format!("{:?}", self.stiffness));
        kv.insert("damping", format!("{:?}", self.damping));
        kv.insert("density", format!("{:?}", self.density));
        kv.insert("snapshot_every", self.snapshot_every.to_string());
        let mut out = format!("scenario = {}\n", self.kind);
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.grid.contains(&0) {
            return Err(invalid("grid", "dimensions must be positive"));
        }
        if self.blocks.contains(&0) {
            return Err(invalid("blocks", "counts must be positive"));
        }
        for (key, v) in [
            ("spacing", self.spacing),
            ("radius", self.radius),
            ("dt", self.dt),
            ("stiffness", self.stiffness),
            ("density", self.density),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if !(self.damping >= 0.0) {
            return Err(invalid("damping", "must be non-negative"));
        }
        if !(self.vmax >= 0.0) {
            return Err(invalid("vmax", "must be non-negative"));
        }
        if let Some(r) = self.radius_large {
            if !(r > 0.0) {
                return Err(invalid("radius_large", "must be positive"));
            }
        }
        let ext = self.domain_extent();
        if !(ext.min_component() > 0.0) {
            return Err(invalid("domain", "extent must be positive"));
        }
        match self.kind {
            ScenarioKind::Sparse => {
                if self.lattice != Lattice::SimpleCubic {
                    return Err(ScenarioError::Mismatch("sparse scenario uses the sc lattice".into()));
                }
            }
            ScenarioKind::Dense => {
                if self.lattice != Lattice::Hcp {
                    return Err(ScenarioError::Mismatch("dense scenario uses the hcp lattice".into()));
                }
                if self.grid[2] != 1 {
                    return Err(ScenarioError::Mismatch("dense scenario is partitioned in x and y only".into()));
                }
                if self.periodic[2] {
                    return Err(ScenarioError::Mismatch("dense scenario has walls in z".into()));
                }
                hcp_counts(ext, self.spacing, self.periodic)?;
            }
            ScenarioKind::Large => {}
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<Partition, Error> {
        let ext = self.domain_extent();
        let domain = DomainBox::new(Aabb::new(Vec3::ZERO, ext), self.periodic)
            .ok_or_else(|| ScenarioError::from(invalid("domain", "extent must be positive")))?;
        Ok(Partition::new(domain, self.grid)?)
    }

    pub fn contact_params(&self) -> ContactParams {
        ContactParams {
            stiffness: self.stiffness,
            damping: self.damping,
            gravity: self.gravity,
        }
    }

    /// Initial particle states in id order.
    pub fn particles(&self) -> Result<Vec<ParticleState>, ScenarioError> {
        self.validate()?;
        match self.kind {
            ScenarioKind::Sparse => Ok(self.sc_particles(&[])),
            ScenarioKind::Dense => {
                hcp_counts(self.domain_extent(), self.spacing, self.periodic)?;
                Ok(self.hcp_particles(&[], 0))
            }
            ScenarioKind::Large => Ok(self.large_particles()),
        }
    }

    /// Build a world with every particle inserted. Startup syncs are left to
    /// the caller.
    pub fn build(&self) -> Result<World, Error> {
        let part = self.partition()?;
        let walls = Wall::enclosing(part.domain());
        let mut world = World::new(part, self.sync, self.contact_params(), walls);
        world.set_mode(self.transport);
        for p in self.particles()? {
            world.insert(p)?;
        }
        Ok(world)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn draw_velocity(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let vmax = self.vmax;
        let mut c = || vmax * (2.0 * unit(rng) - 1.0);
        let (x, y, z) = (c(), c(), c());
        Vec3::new(x, y, z) + self.velocity
    }

    fn sphere(&self, counter: u32, pos: Vec3, vel: Vec3, radius: f64) -> ParticleState {
        ParticleState::sphere(ParticleId::setup(counter), pos, vel, radius, self.density)
    }

    /// Simple cubic lattice at `spacing/2 + i*spacing`, skipping sites
    /// whose sphere would touch one of `exclude` (center, radius).
    fn sc_particles(&self, exclude: &[(Vec3, f64)]) -> Vec<ParticleState> {
        let ext = self.domain_extent();
        let s = self.spacing;
        let n = ext.to_array().map(|e| ((e / s) + 1e-9).floor() as usize);
        let domain = DomainBox::new(Aabb::new(Vec3::ZERO, ext), self.periodic).expect("validated");
        let mut rng = self.rng();
        let mut out = Vec::with_capacity(n.iter().product());
        let mut counter = exclude.len() as u32;
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let pos = Vec3::new((i as f64 + 0.5) * s, (j as f64 + 0.5) * s, (k as f64 + 0.5) * s);
                    let vel = self.draw_velocity(&mut rng);
                    if !blocked(&domain, pos, self.radius, exclude) {
                        out.push(self.sphere(counter, pos, vel, self.radius));
                        counter += 1;
                    }
                }
            }
        }
        out
    }

    /// Hexagonal close packing: close-packed rows along x, rows stacked in
    /// y, layers alternating A/B in z. The dense scenario starts the first
    /// layer on the floor; the large scenario clips the packing to its
    /// periodic block, leaving a wider gap at each seam.
    fn hcp_particles(&self, exclude: &[(Vec3, f64)], first_counter: u32) -> Vec<ParticleState> {
        let ext = self.domain_extent();
        let s = self.spacing;
        let row = ROW * s;
        let layer = layer_factor() * s;
        let (n, z0) = match self.kind {
            ScenarioKind::Dense => (hcp_counts(ext, s, self.periodic).expect("validated"), self.radius),
            _ => (
                [
                    ((ext.x / s) + 1e-9).floor() as usize,
                    ((ext.y / row) + 1e-9).floor() as usize,
                    ((ext.z / layer) + 1e-9).floor() as usize,
                ],
                0.5 * layer,
            ),
        };
        let [nx, ny, nz] = n;
        let domain = DomainBox::new(Aabb::new(Vec3::ZERO, ext), self.periodic).expect("validated");
        let mut rng = self.rng();
        let mut out = Vec::with_capacity(nx * ny * nz);
        let mut counter = first_counter;
        for k in 0..nz {
            let b = k % 2;
            for j in 0..ny {
                for i in 0..nx {
                    let shift = ((j + b) % 2) as f64 * 0.5;
                    let pos = Vec3::new(
                        (0.25 + i as f64 + shift) * s,
                        row * (j as f64 + 0.5) + b as f64 * row / 3.0,
                        z0 + k as f64 * layer,
                    );
                    let vel = self.draw_velocity(&mut rng);
                    if !blocked(&domain, pos, self.radius, exclude) {
                        out.push(self.sphere(counter, pos, vel, self.radius));
                        counter += 1;
                    }
                }
            }
        }
        out
    }

    /// Central spheres first (one per building block, at rest), then the
    /// surrounding medium.
    fn large_particles(&self) -> Vec<ParticleState> {
        let mut bigs = Vec::new();
        if let Some(r) = self.radius_large {
            let mut counter = 0u32;
            for k in 0..self.blocks[2] {
                for j in 0..self.blocks[1] {
                    for i in 0..self.blocks[0] {
                        let c = Vec3::new(
                            (i as f64 + 0.5) * self.block.x,
                            (j as f64 + 0.5) * self.block.y,
                            (k as f64 + 0.5) * self.block.z,
                        );
                        bigs.push(self.sphere(counter, c, Vec3::ZERO, r));
                        counter += 1;
                    }
                }
            }
        }
        let exclude: Vec<(Vec3, f64)> = bigs.iter().map(|b| (b.position, b.radius)).collect();
        let first = bigs.len() as u32;
        let mut out = bigs;
        match self.lattice {
            Lattice::SimpleCubic => out.extend(self.sc_particles(&exclude)),
            Lattice::Hcp => out.extend(self.hcp_particles(&exclude, first)),
        }
        out
    }
}

/// Whether a sphere at `pos` would touch one of `exclude` (center, radius).
fn blocked(domain: &DomainBox, pos: Vec3, radius: f64, exclude: &[(Vec3, f64)]) -> bool {
    exclude.iter().any(|&(c, r)| {
        let reach = r + radius;
        domain.min_image(pos - c).norm_squared() < reach * reach
    })
}

/// Site counts of the hcp packing for a domain extent; x and y must hold a
/// whole number of lattice periods when periodic.
fn hcp_counts(ext: Vec3, s: f64, periodic: [bool; 3]) -> Result<[usize; 3], ScenarioError> {
    let nx = ((ext.x / s) + 1e-9).floor() as usize;
    let ny = ((ext.y / (ROW * s)) + 1e-9).floor() as usize;
    let nz = (((ext.z - s) / (layer_factor() * s)) + 1e-9).floor() as usize + 1;
    if periodic[0] && ((nx as f64) * s - ext.x).abs() > 1e-9 * ext.x {
        return Err(ScenarioError::Mismatch(format!("x extent {} is not a multiple of the spacing", ext.x)));
    }
    if periodic[1] && (ny % 2 != 0 || ((ny as f64) * ROW * s - ext.y).abs() > 1e-9 * ext.y) {
        return Err(ScenarioError::Mismatch(format!(
            "y extent {} is not an even number of close-packed rows",
            ext.y
        )));
    }
    if ext.z < s {
        return Err(ScenarioError::Mismatch("z extent smaller than one sphere diameter".into()));
    }
    Ok([nx, ny, nz])
}

/// Uniform in [0, 1) from the top 53 bits.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn parse_triple(key: &str, v: &str) -> Result<[usize; 3], ScenarioError> {
    let parts: Vec<&str> = v.split(['x', 'X', ',']).map(str::trim).collect();
    let vals: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(key, e.to_string()))?;
    match vals.as_slice() {
        [a] => Ok([*a; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(invalid(key, "expected N or AxBxC")),
    }
}

fn parse_vec(key: &str, v: &str) -> Result<Vec3, ScenarioError> {
    let vals: Vec<f64> = v
        .split([',', 'x', ' '])
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(key, e.to_string()))?;
    match vals.as_slice() {
        [a] => Ok(Vec3::splat(*a)),
        [a, b, c] => Ok(Vec3::new(*a, *b, *c)),
        _ => Err(invalid(key, "expected one or three numbers")),
    }
}

/// Most cubic factorization of `n` ranks; planar (z = 1) when requested.
pub fn choose_grid(n: usize, planar: bool) -> Option<[usize; 3]> {
    if n == 0 {
        return None;
    }
    let mut best: Option<([usize; 3], usize)> = None;
    for a in 1..=n {
        if n % a != 0 {
            continue;
        }
        for b in 1..=n / a {
            if (n / a) % b != 0 {
                continue;
            }
            let c = n / a / b;
            if planar && c != 1 {
                continue;
            }
            let g = [a, b, c];
            let spread = g.iter().max().unwrap() - g.iter().min().unwrap();
            if best.is_none_or(|(_, s)| spread < s) {
                best = Some((g, spread));
            }
        }
    }
    best.map(|(g, _)| g)
}
