//! Floorplans and layered stack descriptions for the four core-memory
//! configurations (external 2D DRAM, external 3D memory, 2.5D interposer,
//! and core-over-memory 3D stacking).
//!
//! All geometry is in meters. Blocks within a floorplan keep their insertion
//! order; that order is the canonical column order for trace files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Area tolerance (m^2) below which overlaps and tiling mismatches are
/// treated as zero.
pub const AREA_EPS: f64 = 1e-12;

/// One rectangular block on a die.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    /// Left edge, meters.
    pub x: f64,
    /// Bottom edge, meters.
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Block {
    pub fn new(name: impl Into<String>, x: f64, y: f64, width: f64, height: f64) -> Self {
        Block {
            name: name.into(),
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Area of the intersection with another block.
    pub fn overlap_area(&self, other: &Block) -> f64 {
        let w = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let h = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// An ordered set of non-overlapping blocks inside a bounding rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Floorplan {
    blocks: Vec<Block>,
    pub bounding_width: f64,
    pub bounding_height: f64,
}

impl Floorplan {
    /// Builds a floorplan and checks its invariants: positive dimensions,
    /// unique names, containment in the bounding box, and pairwise
    /// non-overlap.
    pub fn new(blocks: Vec<Block>, bounding_width: f64, bounding_height: f64) -> Result<Self> {
        if bounding_width <= 0.0 || bounding_height <= 0.0 {
            return Err(Error::invalid("floorplan bounding box must be positive"));
        }
        for b in &blocks {
            if b.width <= 0.0 || b.height <= 0.0 {
                return Err(Error::invalid(format!(
                    "block {} has non-positive dimensions",
                    b.name
                )));
            }
            if b.x < 0.0 || b.y < 0.0 {
                return Err(Error::invalid(format!(
                    "block {} has negative position",
                    b.name
                )));
            }
            if b.x + b.width > bounding_width + AREA_EPS
                || b.y + b.height > bounding_height + AREA_EPS
            {
                return Err(Error::validation(format!(
                    "block {} extends outside the bounding rectangle",
                    b.name
                )));
            }
        }
        for (i, a) in blocks.iter().enumerate() {
            for b in &blocks[i + 1..] {
                if a.name == b.name {
                    return Err(Error::validation(format!("duplicate block name {}", a.name)));
                }
                if a.overlap_area(b) > AREA_EPS {
                    return Err(Error::validation(format!(
                        "blocks {} and {} overlap",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(Floorplan {
            blocks,
            bounding_width,
            bounding_height,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn total_block_area(&self) -> f64 {
        self.blocks.iter().map(Block::area).sum()
    }
}

/// Generates a rows x cols grid of identical cells named `<prefix>_<index>`
/// in row-major order. Row 0 sits at y = 0.
pub fn generate_grid_floorplan(
    rows: usize,
    cols: usize,
    cell_w: f64,
    cell_h: f64,
    prefix: &str,
) -> Result<Floorplan> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid floorplan needs at least one row and column"));
    }
    if cell_w <= 0.0 || cell_h <= 0.0 {
        return Err(Error::invalid("grid cell dimensions must be positive"));
    }
    let mut blocks = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let r = i / cols;
        let c = i % cols;
        blocks.push(Block::new(
            format!("{prefix}_{i}"),
            c as f64 * cell_w,
            r as f64 * cell_h,
            cell_w,
            cell_h,
        ));
    }
    Floorplan::new(blocks, cols as f64 * cell_w, rows as f64 * cell_h)
}

/// Tiles a per-core template floorplan into a rows x cols array. Sub-block
/// names are suffixed with the (row-major) core index.
pub fn replicate_core_template(template: &Floorplan, rows: usize, cols: usize) -> Result<Floorplan> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("replication grid needs at least one row and column"));
    }
    if template.blocks.is_empty() {
        return Err(Error::invalid("core template has no blocks"));
    }
    let bw = template.bounding_width;
    let bh = template.bounding_height;
    let mut blocks = Vec::with_capacity(rows * cols * template.blocks.len());
    for i in 0..rows * cols {
        let r = i / cols;
        let c = i % cols;
        for b in &template.blocks {
            blocks.push(Block::new(
                format!("{}_{i}", b.name),
                b.x + c as f64 * bw,
                b.y + r as f64 * bh,
                b.width,
                b.height,
            ));
        }
    }
    Floorplan::new(blocks, cols as f64 * bw, rows as f64 * bh)
}

/// Splits a core count into a near-square (rows, cols) grid. Picks the
/// largest divisor not exceeding sqrt(n) so the grid tiles exactly.
pub fn grid_dims(n: usize) -> (usize, usize) {
    assert!(n > 0);
    let mut rows = 1;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            rows = d;
        }
        d += 1;
    }
    (rows, n / rows)
}

/// Thermal role of one layer in a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ActiveCore,
    ActiveMemory,
    LogicCoreLayer,
    Tim,
    Interposer,
    Spreader,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::ActiveCore => "ACTIVE_CORE",
            LayerKind::ActiveMemory => "ACTIVE_MEMORY",
            LayerKind::LogicCoreLayer => "LOGIC_CORE_LAYER",
            LayerKind::Tim => "TIM",
            LayerKind::Interposer => "INTERPOSER",
            LayerKind::Spreader => "SPREADER",
        }
    }

    pub fn parse(s: &str) -> Option<LayerKind> {
        Some(match s {
            "ACTIVE_CORE" => LayerKind::ActiveCore,
            "ACTIVE_MEMORY" => LayerKind::ActiveMemory,
            "LOGIC_CORE_LAYER" => LayerKind::LogicCoreLayer,
            "TIM" => LayerKind::Tim,
            "INTERPOSER" => LayerKind::Interposer,
            "SPREADER" => LayerKind::Spreader,
            _ => return None,
        })
    }

    pub fn may_dissipate(&self) -> bool {
        matches!(
            self,
            LayerKind::ActiveCore | LayerKind::ActiveMemory | LayerKind::LogicCoreLayer
        )
    }
}

/// One layer of a thermal stack. Index 0 is the layer farthest from the heat
/// sink; higher indices are closer to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    /// Meters.
    pub thickness: f64,
    /// W/(m K).
    pub conductivity: f64,
    /// J/(m^3 K).
    pub volumetric_heat_capacity: f64,
    /// None means the layer is thermally uniform and carries no blocks.
    pub floorplan: Option<Floorplan>,
    pub dissipates_power: bool,
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        if self.thickness <= 0.0 || self.conductivity <= 0.0 || self.volumetric_heat_capacity <= 0.0
        {
            return Err(Error::validation(format!(
                "layer {} must have positive thickness, conductivity, and heat capacity",
                self.index
            )));
        }
        if self.dissipates_power && !self.kind.may_dissipate() {
            return Err(Error::validation(format!(
                "layer {} of kind {} cannot dissipate power",
                self.index,
                self.kind.as_str()
            )));
        }
        Ok(())
    }
}

/// How a stack sheds heat on its sink side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cooling {
    HeatSink,
    /// Passive cooling: the sink-to-ambient resistance is multiplied by the
    /// configured air-cooled convection factor.
    AirCooled,
}

/// A named, ordered layer stack plus its cooling mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub id: String,
    pub layers: Vec<LayerSpec>,
    pub cooling: Cooling,
}

impl Stack {
    pub fn new(id: impl Into<String>, layers: Vec<LayerSpec>, cooling: Cooling) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.index != i {
                return Err(Error::validation(format!(
                    "layer indices must be consecutive from 0 (found {} at position {i})",
                    l.index
                )));
            }
            l.validate()?;
        }
        Ok(Stack {
            id: id.into(),
            layers,
            cooling,
        })
    }

    /// Blocks of every layer in canonical (layer, then floorplan) order.
    pub fn block_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(|l| l.floorplan.as_ref())
            .flat_map(|fp| fp.blocks().iter().map(|b| b.name.clone()))
            .collect()
    }

    /// Bounding extent shared by all layers of this stack.
    pub fn extent(&self) -> (f64, f64) {
        let mut w: f64 = 0.0;
        let mut h: f64 = 0.0;
        for l in &self.layers {
            if let Some(fp) = &l.floorplan {
                w = w.max(fp.bounding_width);
                h = h.max(fp.bounding_height);
            }
        }
        (w, h)
    }
}

/// Default material constants used by the stack builder. Conductivities and
/// capacities are bulk values; the memory-die value is an effective vertical
/// conductivity for a thinned die plus its bond layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialParams {
    pub silicon_conductivity: f64,
    pub silicon_heat_capacity: f64,
    /// Effective conductivity of a memory die including inter-die bonding.
    pub memory_conductivity: f64,
    pub memory_heat_capacity: f64,
    pub die_thickness: f64,
    pub tim_conductivity: f64,
    pub tim_heat_capacity: f64,
    pub tim_thickness: f64,
    pub interposer_thickness: f64,
    pub spreader_conductivity: f64,
    pub spreader_heat_capacity: f64,
    pub spreader_thickness: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            silicon_conductivity: 120.0,
            silicon_heat_capacity: 1.75e6,
            memory_conductivity: 4.0,
            memory_heat_capacity: 1.75e6,
            die_thickness: 0.1e-3,
            tim_conductivity: 4.0,
            tim_heat_capacity: 2.0e6,
            tim_thickness: 20e-6,
            interposer_thickness: 0.2e-3,
            spreader_conductivity: 400.0,
            spreader_heat_capacity: 3.45e6,
            spreader_thickness: 1.0e-3,
        }
    }
}

/// Core-memory integration style.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    /// Off-package 2D DRAM; core has a heat sink, memory is air-cooled.
    Ext2d,
    /// Off-package 3D memory cube with its own heat sink and logic layer.
    Ext3d,
    /// Core die and 3D memory side by side on a silicon interposer.
    Interposed25d,
    /// Core layers stacked directly over memory layers, cores nearest the sink.
    Stacked3d,
}

impl StackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StackKind::Ext2d => "2d-ext",
            StackKind::Ext3d => "3d-ext",
            StackKind::Interposed25d => "2.5d",
            StackKind::Stacked3d => "3d-stacked",
        }
    }

    pub fn parse(s: &str) -> Option<StackKind> {
        Some(match s {
            "2d-ext" => StackKind::Ext2d,
            "3d-ext" => StackKind::Ext3d,
            "2.5d" => StackKind::Interposed25d,
            "3d-stacked" => StackKind::Stacked3d,
            _ => return None,
        })
    }
}

/// Everything needed to synthesize the floorplans and layer stacks of one
/// core-memory configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub kind: StackKind,
    /// Cores per core layer.
    pub cores: usize,
    pub core_width: f64,
    pub core_height: f64,
    pub core_layers: usize,
    /// Memory bank grid per layer; for 3D memory each grid position is one
    /// channel with one bank per layer.
    pub mem_banks_x: usize,
    pub mem_banks_y: usize,
    pub mem_layers: usize,
    pub bank_width: f64,
    pub bank_height: f64,
    /// Lateral spacing between the core and memory regions on an interposer.
    pub gap_2_5d: f64,
    /// Optional per-core floorplan replicated for each core.
    pub core_template: Option<Floorplan>,
    pub materials: MaterialParams,
}

impl StackConfig {
    pub fn new(kind: StackKind) -> Self {
        StackConfig {
            kind,
            cores: 4,
            core_width: 4e-3,
            core_height: 4e-3,
            core_layers: 1,
            mem_banks_x: 4,
            mem_banks_y: 4,
            mem_layers: if kind == StackKind::Ext2d { 1 } else { 8 },
            bank_width: 2e-3,
            bank_height: 2e-3,
            gap_2_5d: 1e-3,
            core_template: None,
            materials: MaterialParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cores == 0 || self.mem_banks_x == 0 || self.mem_banks_y == 0 || self.mem_layers == 0
        {
            return Err(Error::invalid("stack config counts must be at least 1"));
        }
        if self.core_width <= 0.0
            || self.core_height <= 0.0
            || self.bank_width <= 0.0
            || self.bank_height <= 0.0
        {
            return Err(Error::invalid("stack config dimensions must be positive"));
        }
        if self.core_layers == 0 {
            return Err(Error::invalid("at least one core layer is required"));
        }
        if self.kind == StackKind::Ext2d && self.core_layers > 1 {
            return Err(Error::invalid(
                "2d-ext supports a single core layer; use 3d-stacked for stacked cores",
            ));
        }
        if self.kind == StackKind::Ext2d && self.mem_layers > 1 {
            return Err(Error::invalid("2d-ext memory is a single-layer DRAM die"));
        }
        Ok(())
    }
}

/// Floorplan of one core layer. Core indices start at `base` so that
/// vertically stacked core layers get consecutive numbering.
fn core_layer_floorplan(cfg: &StackConfig, base: usize) -> Result<Floorplan> {
    let (rows, cols) = grid_dims(cfg.cores);
    match &cfg.core_template {
        None => {
            let mut blocks = Vec::with_capacity(cfg.cores);
            for i in 0..cfg.cores {
                let r = i / cols;
                let c = i % cols;
                blocks.push(Block::new(
                    format!("C_{}", base + i),
                    c as f64 * cfg.core_width,
                    r as f64 * cfg.core_height,
                    cfg.core_width,
                    cfg.core_height,
                ));
            }
            Floorplan::new(blocks, cols as f64 * cfg.core_width, rows as f64 * cfg.core_height)
        }
        Some(template) => {
            let mut blocks = Vec::new();
            let bw = template.bounding_width;
            let bh = template.bounding_height;
            for i in 0..cfg.cores {
                let r = i / cols;
                let c = i % cols;
                for b in template.blocks() {
                    blocks.push(Block::new(
                        format!("{}_{}", b.name, base + i),
                        b.x + c as f64 * bw,
                        b.y + r as f64 * bh,
                        b.width,
                        b.height,
                    ));
                }
            }
            Floorplan::new(blocks, cols as f64 * bw, rows as f64 * bh)
        }
    }
}

/// Floorplan of memory layer `layer`: a mem_banks_y x mem_banks_x grid with
/// bank `B<layer>_<i>` at grid position i (row-major). Grid position i is
/// channel i for 3D cubes.
fn memory_layer_floorplan(cfg: &StackConfig, layer: usize) -> Result<Floorplan> {
    generate_grid_floorplan(
        cfg.mem_banks_y,
        cfg.mem_banks_x,
        cfg.bank_width,
        cfg.bank_height,
        &format!("B{layer}"),
    )
}

fn uniform_layer(index: usize, kind: LayerKind, m: &MaterialParams) -> LayerSpec {
    let (t, k, cap) = match kind {
        LayerKind::Tim => (m.tim_thickness, m.tim_conductivity, m.tim_heat_capacity),
        LayerKind::Spreader => (
            m.spreader_thickness,
            m.spreader_conductivity,
            m.spreader_heat_capacity,
        ),
        LayerKind::Interposer => (
            m.interposer_thickness,
            m.silicon_conductivity,
            m.silicon_heat_capacity,
        ),
        _ => (m.die_thickness, m.silicon_conductivity, m.silicon_heat_capacity),
    };
    LayerSpec {
        index,
        kind,
        thickness: t,
        conductivity: k,
        volumetric_heat_capacity: cap,
        floorplan: None,
        dissipates_power: false,
    }
}

fn active_layer(
    index: usize,
    kind: LayerKind,
    fp: Floorplan,
    m: &MaterialParams,
) -> LayerSpec {
    let (k, cap) = match kind {
        LayerKind::ActiveMemory => (m.memory_conductivity, m.memory_heat_capacity),
        _ => (m.silicon_conductivity, m.silicon_heat_capacity),
    };
    LayerSpec {
        index,
        kind,
        thickness: m.die_thickness,
        conductivity: k,
        volumetric_heat_capacity: cap,
        floorplan: Some(fp),
        dissipates_power: true,
    }
}

/// Core die topped by TIM and an integrated heat spreader, as soldered under
/// a finned sink.
fn core_chip_stack(cfg: &StackConfig, id: &str) -> Result<Stack> {
    let m = &cfg.materials;
    let mut layers = vec![active_layer(
        0,
        LayerKind::ActiveCore,
        core_layer_floorplan(cfg, 0)?,
        m,
    )];
    layers.push(uniform_layer(1, LayerKind::Tim, m));
    layers.push(uniform_layer(2, LayerKind::Spreader, m));
    Stack::new(id, layers, Cooling::HeatSink)
}

/// Synthesizes the thermal stack(s) for a core-memory configuration.
///
/// 2d-ext and 3d-ext return two independent stacks (`core`, `mem`); 2.5d and
/// 3d-stacked return a single combined stack. Layer index 0 is always the
/// layer farthest from the heat sink.
pub fn build_stack(cfg: &StackConfig) -> Result<Vec<Stack>> {
    cfg.validate()?;
    let m = &cfg.materials;
    match cfg.kind {
        StackKind::Ext2d => {
            let core = core_chip_stack(cfg, "core")?;
            let mem = Stack::new(
                "mem",
                vec![active_layer(
                    0,
                    LayerKind::ActiveMemory,
                    memory_layer_floorplan(cfg, 0)?,
                    m,
                )],
                Cooling::AirCooled,
            )?;
            Ok(vec![core, mem])
        }
        StackKind::Ext3d => {
            let core = if cfg.core_layers == 1 {
                core_chip_stack(cfg, "core")?
            } else {
                // Stacked core die without memory: core layers then TIM+spreader.
                let mut layers = Vec::new();
                for l in 0..cfg.core_layers {
                    layers.push(active_layer(
                        l,
                        LayerKind::ActiveCore,
                        core_layer_floorplan(cfg, l * cfg.cores)?,
                        m,
                    ));
                }
                let n = layers.len();
                layers.push(uniform_layer(n, LayerKind::Tim, m));
                layers.push(uniform_layer(n + 1, LayerKind::Spreader, m));
                Stack::new("core", layers, Cooling::HeatSink)?
            };
            let mut layers = vec![LayerSpec {
                floorplan: Some(logic_floorplan(cfg)?),
                dissipates_power: true,
                ..uniform_layer(0, LayerKind::LogicCoreLayer, m)
            }];
            for l in 0..cfg.mem_layers {
                layers.push(active_layer(
                    l + 1,
                    LayerKind::ActiveMemory,
                    memory_layer_floorplan(cfg, l)?,
                    m,
                ));
            }
            let mem = Stack::new("mem", layers, Cooling::HeatSink)?;
            Ok(vec![core, mem])
        }
        StackKind::Interposed25d => build_25d(cfg),
        StackKind::Stacked3d => {
            let mut layers = Vec::new();
            for l in 0..cfg.mem_layers {
                layers.push(active_layer(
                    l,
                    LayerKind::ActiveMemory,
                    memory_layer_floorplan(cfg, l)?,
                    m,
                ));
            }
            for cl in 0..cfg.core_layers {
                layers.push(active_layer(
                    cfg.mem_layers + cl,
                    LayerKind::ActiveCore,
                    core_layer_floorplan(cfg, cl * cfg.cores)?,
                    m,
                ));
            }
            Ok(vec![Stack::new("stack", layers, Cooling::HeatSink)?])
        }
    }
}

fn logic_floorplan(cfg: &StackConfig) -> Result<Floorplan> {
    let w = cfg.mem_banks_x as f64 * cfg.bank_width;
    let h = cfg.mem_banks_y as f64 * cfg.bank_height;
    Floorplan::new(vec![Block::new("LOGIC", 0.0, 0.0, w, h)], w, h)
}

/// 2.5D: one interposer-bearing stack. The core die and the memory cube's
/// logic layer share the first level above the interposer; memory layers
/// continue upward on the memory side only.
fn build_25d(cfg: &StackConfig) -> Result<Vec<Stack>> {
    let m = &cfg.materials;
    let core_fp = core_layer_floorplan(cfg, 0)?;
    let mem_w = cfg.mem_banks_x as f64 * cfg.bank_width;
    let mem_h = cfg.mem_banks_y as f64 * cfg.bank_height;
    let mem_x0 = core_fp.bounding_width + cfg.gap_2_5d;
    let total_w = mem_x0 + mem_w;
    let total_h = core_fp.bounding_height.max(mem_h);

    let mut layers = vec![uniform_layer(0, LayerKind::Interposer, m)];

    let levels = cfg.core_layers.max(cfg.mem_layers + 1);
    for level in 0..levels {
        let mut blocks = Vec::new();
        let mut has_core = false;
        if level < cfg.core_layers {
            has_core = true;
            blocks.extend(
                core_layer_floorplan(cfg, level * cfg.cores)?
                    .blocks()
                    .iter()
                    .cloned(),
            );
        }
        if level == 0 {
            blocks.push(Block::new("LOGIC", mem_x0, 0.0, mem_w, mem_h));
        } else if level <= cfg.mem_layers {
            let mem_fp = memory_layer_floorplan(cfg, level - 1)?;
            blocks.extend(mem_fp.blocks().iter().map(|b| {
                Block::new(b.name.clone(), b.x + mem_x0, b.y, b.width, b.height)
            }));
        }
        let fp = Floorplan::new(blocks, total_w, total_h)?;
        let kind = if has_core {
            LayerKind::ActiveCore
        } else {
            LayerKind::ActiveMemory
        };
        layers.push(active_layer(level + 1, kind, fp, m));
    }
    Ok(vec![Stack::new("assembly", layers, Cooling::HeatSink)?])
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Serializes a floorplan in the tab-separated block format:
/// `name width height x y`, meters.
pub fn serialize_floorplan(fp: &Floorplan) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# bounding {:?} {:?}",
        fp.bounding_width, fp.bounding_height
    );
    for b in fp.blocks() {
        let _ = writeln!(
            out,
            "{}\t{:?}\t{:?}\t{:?}\t{:?}",
            b.name, b.width, b.height, b.x, b.y
        );
    }
    out
}

/// Parses the tab-separated floorplan format. `source` names the input in
/// errors. Comments (`#`) and blank lines are ignored. A `# bounding w h`
/// comment pins the bounding box; otherwise it is the tight block extent.
pub fn parse_floorplan(text: &str, source: &str) -> Result<Floorplan> {
    let mut blocks = Vec::new();
    let mut bounding: Option<(f64, f64)> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(dims) = rest.strip_prefix("bounding ") {
                let parts: Vec<&str> = dims.split_whitespace().collect();
                if parts.len() == 2 {
                    let w = parse_num(parts[0], source, lineno + 1)?;
                    let h = parse_num(parts[1], source, lineno + 1)?;
                    bounding = Some((w, h));
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                file: source.to_string(),
                line: lineno + 1,
                message: format!("expected 5 fields (name width height x y), found {}", fields.len()),
            });
        }
        let width = parse_num(fields[1], source, lineno + 1)?;
        let height = parse_num(fields[2], source, lineno + 1)?;
        let x = parse_num(fields[3], source, lineno + 1)?;
        let y = parse_num(fields[4], source, lineno + 1)?;
        blocks.push(Block::new(fields[0], x, y, width, height));
    }
    let (bw, bh) = bounding.unwrap_or_else(|| {
        blocks.iter().fold((0.0f64, 0.0f64), |(w, h), b| {
            (w.max(b.x + b.width), h.max(b.y + b.height))
        })
    });
    Floorplan::new(blocks, bw, bh)
}

fn parse_num(s: &str, source: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        file: source.to_string(),
        line,
        message: format!("invalid number `{s}`"),
    })
}

/// Serializes a layer stack as a layer config file. Floorplans are written
/// alongside as `<stem>_layer<i>.flp`; uniform layers reference `uniform`.
pub fn write_layer_file(layers: &[LayerSpec], path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("stack")
        .to_string();
    let mut out = String::new();
    for l in layers {
        let fp_ref = match &l.floorplan {
            None => "uniform".to_string(),
            Some(fp) => {
                let name = format!("{stem}_layer{}.flp", l.index);
                std::fs::write(dir.join(&name), serialize_floorplan(fp))?;
                name
            }
        };
        let _ = writeln!(out, "layer {}", l.index);
        let _ = writeln!(out, "kind {}", l.kind.as_str());
        let _ = writeln!(out, "thickness {:?}", l.thickness);
        let _ = writeln!(out, "conductivity {:?}", l.conductivity);
        let _ = writeln!(out, "capacity {:?}", l.volumetric_heat_capacity);
        let _ = writeln!(out, "floorplan {fp_ref}");
        let _ = writeln!(out, "power {}", if l.dissipates_power { "yes" } else { "no" });
        let _ = writeln!(out);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a layer config file; referenced floorplan files are resolved
/// relative to the file's directory.
pub fn read_layer_file(path: &Path) -> Result<Vec<LayerSpec>> {
    let text = std::fs::read_to_string(path)?;
    let source = path.display().to_string();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    struct Partial {
        line: usize,
        index: usize,
        kind: Option<LayerKind>,
        thickness: Option<f64>,
        conductivity: Option<f64>,
        capacity: Option<f64>,
        floorplan: Option<Option<Floorplan>>,
        power: Option<bool>,
    }
    let mut records: Vec<Partial> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(char::is_whitespace).ok_or(Error::Parse {
            file: source.clone(),
            line: lineno + 1,
            message: "expected `key value`".to_string(),
        })?;
        let value = value.trim();
        let perr = |message: String| Error::Parse {
            file: source.clone(),
            line: lineno + 1,
            message,
        };
        if key == "layer" {
            let index = value
                .parse::<usize>()
                .map_err(|_| perr(format!("invalid layer index `{value}`")))?;
            records.push(Partial {
                line: lineno + 1,
                index,
                kind: None,
                thickness: None,
                conductivity: None,
                capacity: None,
                floorplan: None,
                power: None,
            });
            continue;
        }
        let rec = records
            .last_mut()
            .ok_or_else(|| perr(format!("`{key}` before any `layer` record")))?;
        match key {
            "kind" => {
                rec.kind =
                    Some(LayerKind::parse(value).ok_or_else(|| perr(format!("unknown layer kind `{value}`")))?);
            }
            "thickness" => rec.thickness = Some(parse_num(value, &source, lineno + 1)?),
            "conductivity" => rec.conductivity = Some(parse_num(value, &source, lineno + 1)?),
            "capacity" => rec.capacity = Some(parse_num(value, &source, lineno + 1)?),
            "floorplan" => {
                rec.floorplan = Some(if value == "uniform" {
                    None
                } else {
                    let fp_path = dir.join(value);
                    let fp_text = std::fs::read_to_string(&fp_path)?;
                    Some(parse_floorplan(&fp_text, &fp_path.display().to_string())?)
                });
            }
            "power" => {
                rec.power = Some(match value {
                    "yes" => true,
                    "no" => false,
                    _ => return Err(perr(format!("power must be yes or no, found `{value}`"))),
                });
            }
            _ => return Err(perr(format!("unknown key `{key}`"))),
        }
    }

    let mut layers = Vec::with_capacity(records.len());
    for rec in records {
        let missing = |field: &str| Error::Parse {
            file: source.clone(),
            line: rec.line,
            message: format!("layer {} is missing `{field}`", rec.index),
        };
        layers.push(LayerSpec {
            index: rec.index,
            kind: rec.kind.ok_or_else(|| missing("kind"))?,
            thickness: rec.thickness.ok_or_else(|| missing("thickness"))?,
            conductivity: rec.conductivity.ok_or_else(|| missing("conductivity"))?,
            volumetric_heat_capacity: rec.capacity.ok_or_else(|| missing("capacity"))?,
            floorplan: rec.floorplan.ok_or_else(|| missing("floorplan"))?,
            dissipates_power: rec.power.ok_or_else(|| missing("power"))?,
        });
    }
    layers.sort_by_key(|l| l.index);
    for (i, l) in layers.iter().enumerate() {
        if l.index != i {
            return Err(Error::validation(format!(
                "layer indices in {source} are not consecutive from 0"
            )));
        }
        l.validate()?;
    }
    Ok(layers)
}
