//! Analytical device cost model.
//!
//! Node time on a device is `init + flops / (flops_per_cycle · clock) +
//! (bytes_in + bytes_out) / bandwidth`. The fixed per-node initialization term
//! is what makes a high-clock, high-init device lose on small layers and win on
//! large ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputeGraph, ComputeNode, NodeId};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;
pub const COST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("device {device} does not support {precision}")]
    UnsupportedPrecision { device: Device, precision: Precision },
    #[error("no profile for device {0}")]
    MissingDevice(Device),
    #[error("no link profile for {src} -> {dst}")]
    MissingLink { src: Device, dst: Device },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("cost table has no entry for node {node} on {device}")]
    MissingEntry { node: NodeId, device: Device },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    #[serde(rename = "PS")]
    Ps,
    #[serde(rename = "PL")]
    Pl,
    #[serde(rename = "AIE")]
    Aie,
}

impl Device {
    /// The two partition targets, in tie-break order.
    pub const CANDIDATES: [Device; 2] = [Device::Pl, Device::Aie];

    /// Precisions the device executes natively.
    pub fn native_precisions(self) -> &'static [Precision] {
        match self {
            Device::Ps => &[Precision::Fp32],
            Device::Pl => &[Precision::Fp16, Precision::Fp32],
            Device::Aie => &[Precision::Bf16],
        }
    }

    /// Compute precision a node runs at when mapped to this device.
    pub fn compute_precision(self) -> Precision {
        match self {
            Device::Ps => Precision::Fp32,
            Device::Pl => Precision::Fp16,
            Device::Aie => Precision::Bf16,
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Device::Ps => "PS",
            Device::Pl => "PL",
            Device::Aie => "AIE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "BF16")]
    Bf16,
}

impl Precision {
    pub fn bytes_per_param(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 | Precision::Bf16 => 2,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Fp32 => "FP32",
            Precision::Fp16 => "FP16",
            Precision::Bf16 => "BF16",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: Device,
    pub clock_hz: f64,
    pub flops_per_cycle: BTreeMap<Precision, f64>,
    /// Per-node launch overhead.
    pub init_time_s: f64,
    pub mem_bandwidth_bytes_per_s: f64,
    /// Resource budget `A_j`, in bytes of resident weights.
    pub resource_capacity: f64,
    pub supported_precisions: BTreeSet<Precision>,
}

impl DeviceProfile {
    pub fn default_ps() -> Self {
        Self {
            id: Device::Ps,
            clock_hz: 1.2e9,
            flops_per_cycle: BTreeMap::from([(Precision::Fp32, 8.0)]),
            init_time_s: 0.0,
            mem_bandwidth_bytes_per_s: 10e9,
            resource_capacity: 0.0,
            supported_precisions: BTreeSet::from([Precision::Fp32]),
        }
    }

    pub fn default_pl() -> Self {
        Self {
            id: Device::Pl,
            clock_hz: 245e6,
            flops_per_cycle: BTreeMap::from([(Precision::Fp16, 160.0), (Precision::Fp32, 64.0)]),
            init_time_s: 1e-6,
            mem_bandwidth_bytes_per_s: 64e9,
            // 113.4 Mb of on-chip fabric memory
            resource_capacity: 113.4e6 / 8.0,
            supported_precisions: BTreeSet::from([Precision::Fp16, Precision::Fp32]),
        }
    }

    pub fn default_aie() -> Self {
        Self {
            id: Device::Aie,
            clock_hz: 1e9,
            flops_per_cycle: BTreeMap::from([(Precision::Bf16, 512.0)]),
            init_time_s: 50e-6,
            mem_bandwidth_bytes_per_s: 128e9,
            // 304 tiles × 64 KiB data memory
            resource_capacity: 304.0 * 65536.0,
            supported_precisions: BTreeSet::from([Precision::Bf16]),
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |msg: String| Err(CostError::InvalidProfile(format!("{}: {msg}", self.id)));
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return bad("clock_hz must be positive".into());
        }
        if !(self.init_time_s >= 0.0 && self.init_time_s.is_finite()) {
            return bad("init_time_s must be non-negative".into());
        }
        if !(self.mem_bandwidth_bytes_per_s > 0.0) {
            return bad("mem_bandwidth_bytes_per_s must be positive".into());
        }
        if !(self.resource_capacity >= 0.0) {
            return bad("resource_capacity must be non-negative".into());
        }
        if self.supported_precisions.is_empty() {
            return bad("supported_precisions is empty".into());
        }
        for p in &self.supported_precisions {
            if !self.id.native_precisions().contains(p) {
                return bad(format!("{p} is not a native precision of this device"));
            }
            match self.flops_per_cycle.get(p) {
                Some(&f) if f > 0.0 && f.is_finite() => {}
                _ => return bad(format!("flops_per_cycle for {p} must be positive")),
            }
        }
        Ok(())
    }

    fn flops_per_second(&self, precision: Precision) -> Result<f64, CostError> {
        if !self.supported_precisions.contains(&precision) {
            return Err(CostError::UnsupportedPrecision {
                device: self.id,
                precision,
            });
        }
        let fpc = self
            .flops_per_cycle
            .get(&precision)
            .copied()
            .ok_or(CostError::UnsupportedPrecision {
                device: self.id,
                precision,
            })?;
        Ok(fpc * self.clock_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub src: Device,
    pub dst: Device,
    pub bandwidth_bytes_per_s: f64,
    pub latency_s: f64,
}

impl LinkProfile {
    fn new(src: Device, dst: Device, bandwidth_bytes_per_s: f64, latency_s: f64) -> Self {
        Self {
            src,
            dst,
            bandwidth_bytes_per_s,
            latency_s,
        }
    }
}

/// Device and link profiles, as ingested from a profile document.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    devices: BTreeMap<Device, DeviceProfile>,
    links: Vec<LinkProfile>,
}

impl Default for Profiles {
    fn default() -> Self {
        let mut links = Vec::new();
        for (a, b, bw, lat) in [
            (Device::Pl, Device::Aie, 16e9, 0.1e-6),
            (Device::Ps, Device::Pl, 8e9, 1e-6),
            (Device::Ps, Device::Aie, 4e9, 2e-6),
        ] {
            links.push(LinkProfile::new(a, b, bw, lat));
            links.push(LinkProfile::new(b, a, bw, lat));
        }
        Self::new(
            vec![
                DeviceProfile::default_ps(),
                DeviceProfile::default_pl(),
                DeviceProfile::default_aie(),
            ],
            links,
        )
        .expect("default profiles are valid")
    }
}

impl Profiles {
    pub fn new(devices: Vec<DeviceProfile>, links: Vec<LinkProfile>) -> Result<Self, CostError> {
        let mut map = BTreeMap::new();
        for d in devices {
            d.validate()?;
            let id = d.id;
            if map.insert(id, d).is_some() {
                return Err(CostError::InvalidProfile(format!("duplicate device {id}")));
            }
        }
        for l in &links {
            if !(l.bandwidth_bytes_per_s > 0.0) || !(l.latency_s >= 0.0) {
                return Err(CostError::InvalidProfile(format!(
                    "link {} -> {}: bandwidth must be positive and latency non-negative",
                    l.src, l.dst
                )));
            }
        }
        Ok(Self {
            devices: map,
            links,
        })
    }

    pub fn device(&self, id: Device) -> Result<&DeviceProfile, CostError> {
        self.devices.get(&id).ok_or(CostError::MissingDevice(id))
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceProfile> {
        self.devices.values()
    }

    pub fn links(&self) -> &[LinkProfile] {
        &self.links
    }

    pub fn link(&self, src: Device, dst: Device) -> Option<&LinkProfile> {
        self.links.iter().find(|l| l.src == src && l.dst == dst)
    }

    pub fn without_device(&self, id: Device) -> Profiles {
        let mut p = self.clone();
        p.devices.remove(&id);
        p
    }

    pub fn with_device(&self, profile: DeviceProfile) -> Result<Profiles, CostError> {
        profile.validate()?;
        let mut p = self.clone();
        p.devices.insert(profile.id, profile);
        Ok(p)
    }

    pub fn with_links(&self, links: Vec<LinkProfile>) -> Profiles {
        Profiles {
            devices: self.devices.clone(),
            links,
        }
    }

    /// `A_j` for each device in the profile set.
    pub fn capacities(&self) -> Capacities {
        Capacities(
            self.devices
                .values()
                .map(|d| (d.id, d.resource_capacity))
                .collect(),
        )
    }

    pub fn to_document(&self) -> ProfileDocument {
        ProfileDocument {
            schema_version: PROFILE_SCHEMA_VERSION,
            devices: self.devices.values().cloned().collect(),
            links: self.links.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDocument {
    #[serde(default = "profile_schema")]
    pub schema_version: u32,
    pub devices: Vec<DeviceProfile>,
    #[serde(default)]
    pub links: Vec<LinkProfile>,
}

fn profile_schema() -> u32 {
    PROFILE_SCHEMA_VERSION
}

impl ProfileDocument {
    pub fn into_profiles(self) -> Result<Profiles, CostError> {
        if self.schema_version != PROFILE_SCHEMA_VERSION {
            return Err(CostError::InvalidProfile(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        Profiles::new(self.devices, self.links)
    }
}

/// Per-device resource budgets. Devices absent from the map are unbounded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Capacities(pub BTreeMap<Device, f64>);

impl Capacities {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn of(pairs: &[(Device, f64)]) -> Self {
        Self(pairs.iter().copied().collect())
    }

    pub fn get(&self, device: Device) -> f64 {
        self.0.get(&device).copied().unwrap_or(f64::INFINITY)
    }
}

/// `init + compute + memory` time of `node` on `dev` at `precision`.
pub fn estimate_node_time(
    node: &ComputeNode,
    dev: &DeviceProfile,
    precision: Precision,
) -> Result<f64, CostError> {
    let rate = dev.flops_per_second(precision)?;
    let bytes = (node.bytes_in + node.bytes_out) as f64;
    Ok(dev.init_time_s + node.flops as f64 / rate + bytes / dev.mem_bandwidth_bytes_per_s)
}

/// Transfer time of `bytes` from `src` to `dst`; zero on the same device.
pub fn estimate_comm(
    bytes: u64,
    src: Device,
    dst: Device,
    links: &[LinkProfile],
) -> Result<f64, CostError> {
    if src == dst {
        return Ok(0.0);
    }
    let link = links
        .iter()
        .find(|l| l.src == src && l.dst == dst)
        .ok_or(CostError::MissingLink { src, dst })?;
    Ok(link.latency_s + bytes as f64 / link.bandwidth_bytes_per_s)
}

/// Time to refresh a node's low-precision weight copy from the host-side
/// master weights over the `PS -> dev` link.
pub fn master_sync_time(
    node: &ComputeNode,
    dev: Device,
    links: &[LinkProfile],
) -> Result<f64, CostError> {
    if node.param_count == 0 || dev == Device::Ps {
        return Ok(0.0);
    }
    let bytes = node.param_count * dev.compute_precision().bytes_per_param();
    estimate_comm(bytes, Device::Ps, dev, links)
}

/// FLOPs at which `b` starts beating `a` for a node moving `bytes` bytes, when
/// both times are affine in FLOPs. `None` when the curves never cross at a
/// positive FLOP count.
pub fn crossover_flops(
    a: (&DeviceProfile, Precision),
    b: (&DeviceProfile, Precision),
    bytes: u64,
) -> Result<Option<f64>, CostError> {
    let (ra, rb) = (a.0.flops_per_second(a.1)?, b.0.flops_per_second(b.1)?);
    let bytes = bytes as f64;
    let ia = a.0.init_time_s + bytes / a.0.mem_bandwidth_bytes_per_s;
    let ib = b.0.init_time_s + bytes / b.0.mem_bandwidth_bytes_per_s;
    let (sa, sb) = (1.0 / ra, 1.0 / rb);
    if sa <= sb || ib <= ia {
        return Ok(None);
    }
    Ok(Some((ib - ia) / (sa - sb)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEntry {
    pub precision: Precision,
    pub t_seconds: f64,
    pub a_units: f64,
}

/// `t_ij`, `a_ij` and per-edge communication times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostTable {
    entries: BTreeMap<(NodeId, Device), CostEntry>,
    comm: BTreeMap<(NodeId, NodeId, Device, Device), f64>,
}

impl CostTable {
    pub fn insert(&mut self, node: NodeId, device: Device, entry: CostEntry) {
        self.entries.insert((node, device), entry);
    }

    pub fn insert_comm(&mut self, edge: (NodeId, NodeId), src: Device, dst: Device, seconds: f64) {
        self.comm.insert((edge.0, edge.1, src, dst), seconds);
    }

    pub fn entry(&self, node: NodeId, device: Device) -> Option<&CostEntry> {
        self.entries.get(&(node, device))
    }

    pub fn time(&self, node: NodeId, device: Device) -> Option<f64> {
        self.entry(node, device).map(|e| e.t_seconds)
    }

    pub fn resource(&self, node: NodeId, device: Device) -> Option<f64> {
        self.entry(node, device).map(|e| e.a_units)
    }

    /// Communication time along `edge`; always zero when both ends share a device.
    pub fn comm(&self, edge: (NodeId, NodeId), src: Device, dst: Device) -> Option<f64> {
        if src == dst {
            return Some(0.0);
        }
        self.comm.get(&(edge.0, edge.1, src, dst)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeId, Device, &CostEntry)> {
        self.entries.iter().map(|(&(n, d), e)| (n, d, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_document(&self) -> CostDocument {
        CostDocument {
            schema_version: COST_SCHEMA_VERSION,
            entries: self
                .entries()
                .map(|(node_id, device, e)| CostRow {
                    node_id,
                    device,
                    precision: e.precision,
                    t_seconds: e.t_seconds,
                    a_units: e.a_units,
                })
                .collect(),
            comm: self
                .comm
                .iter()
                .map(|(&(src_node, dst_node, src_device, dst_device), &seconds)| CommRow {
                    src_node,
                    dst_node,
                    src_device,
                    dst_device,
                    seconds,
                })
                .collect(),
        }
    }

    /// `node_id,device,t_seconds,a_units`
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node_id", "device", "t_seconds", "a_units"])?;
        for (node, dev, e) in self.entries() {
            w.write_record([
                node.to_string(),
                dev.to_string(),
                e.t_seconds.to_string(),
                e.a_units.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub node_id: NodeId,
    pub device: Device,
    pub precision: Precision,
    pub t_seconds: f64,
    pub a_units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommRow {
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub src_device: Device,
    pub dst_device: Device,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDocument {
    #[serde(default = "cost_schema")]
    pub schema_version: u32,
    pub entries: Vec<CostRow>,
    #[serde(default)]
    pub comm: Vec<CommRow>,
}

fn cost_schema() -> u32 {
    COST_SCHEMA_VERSION
}

impl CostDocument {
    pub fn into_table(self) -> Result<CostTable, CostError> {
        if self.schema_version != COST_SCHEMA_VERSION {
            return Err(CostError::InvalidProfile(format!(
                "unsupported cost schema_version {}",
                self.schema_version
            )));
        }
        let mut t = CostTable::default();
        for r in self.entries {
            if !(r.t_seconds >= 0.0) || !(r.a_units >= 0.0) {
                return Err(CostError::InvalidProfile(format!(
                    "node {} on {}: costs must be non-negative",
                    r.node_id, r.device
                )));
            }
            t.insert(
                r.node_id,
                r.device,
                CostEntry {
                    precision: r.precision,
                    t_seconds: r.t_seconds,
                    a_units: r.a_units,
                },
            );
        }
        for c in self.comm {
            t.insert_comm((c.src_node, c.dst_node), c.src_device, c.dst_device, c.seconds);
        }
        Ok(t)
    }
}

/// Costs every MM node on PL (FP16) and AIE (BF16) and every NonMM node on PL.
/// `a_ij` is the node's resident weight footprint at the device precision.
/// Communication entries are filled for every edge and every ordered pair of
/// distinct candidate devices when the corresponding link exists.
pub fn build_cost_table(graph: &ComputeGraph, profiles: &Profiles) -> Result<CostTable, CostError> {
    let pl = profiles.device(Device::Pl)?;
    let aie = profiles.device(Device::Aie)?;
    let mut table = CostTable::default();
    for node in graph.nodes() {
        let targets: &[&DeviceProfile] = if node.is_mm() { &[pl, aie] } else { &[pl] };
        for dev in targets {
            let precision = dev.id.compute_precision();
            let t_seconds = estimate_node_time(node, dev, precision)?;
            let a_units = if node.is_mm() {
                (node.param_count * precision.bytes_per_param()) as f64
            } else {
                0.0
            };
            table.insert(
                node.id,
                dev.id,
                CostEntry {
                    precision,
                    t_seconds,
                    a_units,
                },
            );
        }
    }
    for &(u, v) in graph.edges() {
        let bytes = graph.node(u).map_or(0, |n| n.bytes_out);
        for (src, dst) in [(Device::Pl, Device::Aie), (Device::Aie, Device::Pl)] {
            if let Ok(s) = estimate_comm(bytes, src, dst, profiles.links()) {
                table.insert_comm((u, v), src, dst, s);
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_training_graph, Algorithm, LayerSpec, NodeKind, Pass};

    fn gemm_node(flops: u64) -> ComputeNode {
        ComputeNode {
            id: 0,
            kind: NodeKind::Mm,
            pass: Pass::Forward,
            flops,
            bytes_in: 0,
            bytes_out: 0,
            param_count: 0,
            label: String::new(),
            role: None,
        }
    }

    #[test]
    fn degenerate_node_costs_init_only() {
        let pl = DeviceProfile::default_pl();
        let t = estimate_node_time(&gemm_node(0), &pl, Precision::Fp16).unwrap();
        assert_eq!(t, pl.init_time_s);
    }

    #[test]
    fn small_gemm_prefers_pl_large_prefers_aie() {
        let (pl, aie) = (DeviceProfile::default_pl(), DeviceProfile::default_aie());
        let small = gemm_node(2 * 64 * 64 * 64);
        let tp = estimate_node_time(&small, &pl, Precision::Fp16).unwrap();
        let ta = estimate_node_time(&small, &aie, Precision::Bf16).unwrap();
        assert!((tp - 14.375e-6).abs() < 0.05e-6, "{tp}");
        assert!((ta - 51.024e-6).abs() < 0.05e-6, "{ta}");
        assert!(tp < ta);
        let large = gemm_node(2 * 1024 * 1024 * 1024);
        let tp = estimate_node_time(&large, &pl, Precision::Fp16).unwrap();
        let ta = estimate_node_time(&large, &aie, Precision::Bf16).unwrap();
        assert!((tp - 54.78e-3).abs() < 0.01e-3, "{tp}");
        assert!((ta - 4.244e-3).abs() < 0.001e-3, "{ta}");
        assert!(ta < tp);
    }

    #[test]
    fn unsupported_precision_is_a_capability_error() {
        let aie = DeviceProfile::default_aie();
        assert_eq!(
            estimate_node_time(&gemm_node(1), &aie, Precision::Fp16),
            Err(CostError::UnsupportedPrecision {
                device: Device::Aie,
                precision: Precision::Fp16
            })
        );
    }

    #[test]
    fn comm_examples() {
        let p = Profiles::default();
        assert_eq!(estimate_comm(4096, Device::Pl, Device::Pl, p.links()), Ok(0.0));
        let link = [LinkProfile::new(Device::Pl, Device::Aie, 1e9, 1e-6)];
        let t = estimate_comm(4096, Device::Pl, Device::Aie, &link).unwrap();
        assert!((t - 5.096e-6).abs() < 1e-15);
        assert_eq!(
            estimate_comm(1, Device::Pl, Device::Ps, &link),
            Err(CostError::MissingLink {
                src: Device::Pl,
                dst: Device::Ps
            })
        );
    }

    #[test]
    fn clock_doubling_halves_compute_term() {
        let mut pl = DeviceProfile::default_pl();
        pl.init_time_s = 0.0;
        let n = gemm_node(1 << 20);
        let t1 = estimate_node_time(&n, &pl, Precision::Fp16).unwrap();
        pl.clock_hz *= 2.0;
        let t2 = estimate_node_time(&n, &pl, Precision::Fp16).unwrap();
        assert_eq!(t1, 2.0 * t2);
    }

    #[test]
    fn cartpole_cost_table_counts() {
        let net = [
            LayerSpec::dense(4, 64),
            LayerSpec::relu(64),
            LayerSpec::dense(64, 64),
            LayerSpec::relu(64),
            LayerSpec::dense(64, 2),
        ];
        let g = build_training_graph(&net, Algorithm::Dqn, 1).unwrap();
        let t = build_cost_table(&g, &Profiles::default()).unwrap();
        let mm_entries = t
            .entries()
            .filter(|(n, _, _)| g.node(*n).unwrap().is_mm())
            .count();
        assert_eq!(mm_entries, 18);
        let non_mm = g.len() - g.mm_count();
        assert_eq!(t.len(), 18 + non_mm);
        for n in g.nodes().iter().filter(|n| !n.is_mm()) {
            assert!(t.time(n.id, Device::Pl).is_some());
            assert!(t.time(n.id, Device::Aie).is_none());
            assert_eq!(t.resource(n.id, Device::Pl), Some(0.0));
        }
        for &(u, v) in g.edges() {
            assert_eq!(t.comm((u, v), Device::Aie, Device::Aie), Some(0.0));
            assert!(t.comm((u, v), Device::Pl, Device::Aie).unwrap() > 0.0);
        }
    }

    #[test]
    fn empty_graph_and_missing_aie() {
        let g = ComputeGraph::new(vec![], vec![], 1).unwrap();
        assert!(build_cost_table(&g, &Profiles::default()).unwrap().is_empty());
        let p = Profiles::default().without_device(Device::Aie);
        assert_eq!(
            build_cost_table(&g, &p),
            Err(CostError::MissingDevice(Device::Aie))
        );
    }

    #[test]
    fn profile_validation() {
        let mut aie = DeviceProfile::default_aie();
        aie.supported_precisions.insert(Precision::Fp32);
        aie.flops_per_cycle.insert(Precision::Fp32, 1.0);
        assert!(matches!(aie.validate(), Err(CostError::InvalidProfile(_))));
        let mut pl = DeviceProfile::default_pl();
        pl.clock_hz = 0.0;
        assert!(pl.validate().is_err());
        let doc = Profiles::default().to_document();
        let json = serde_json::to_string(&doc).unwrap();
        let back: ProfileDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_profiles().unwrap(), Profiles::default());
    }

    #[test]
    fn cost_csv_header() {
        let mut t = CostTable::default();
        t.insert(
            3,
            Device::Aie,
            CostEntry {
                precision: Precision::Bf16,
                t_seconds: 0.5,
                a_units: 8.0,
            },
        );
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "node_id,device,t_seconds,a_units\n3,AIE,0.5,8\n"
        );
    }
}
