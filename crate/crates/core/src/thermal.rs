//! Grid-discretized RC thermal network and its transient / steady-state
//! solvers.
//!
//! Each layer of a stack is discretized into a rows x cols cell grid; cells
//! couple laterally to their 4-neighbors, vertically through half-thickness
//! resistances to the layers above and below, and the top layer couples
//! through a lumped spreader and sink node to ambient. The conductance
//! matrix G is kept in Laplacian form with the ambient coupling on the
//! diagonal, so the node temperature rises over ambient obey
//! `C dθ/dt = -G θ + P(T)`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::floorplan::{Cooling, Stack};
use crate::power::LeakageFit;

/// Convergence threshold for the steady-state fixed point, kelvin.
pub const STEADY_TOLERANCE: f64 = 1e-4;
/// Absolute temperature beyond which the leakage loop is declared divergent.
pub const RUNAWAY_GUARD: f64 = 500.0;
/// Iteration cap for the steady-state fixed point.
pub const MAX_STEADY_ITERATIONS: usize = 100;

/// Heat-sink path constants for the lumped spreader and sink nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PackageParams {
    pub spreader_conductivity: f64,
    pub spreader_heat_capacity: f64,
    pub spreader_thickness: f64,
    /// Fixed resistance between the spreader center and the sink base, K/W.
    pub spreader_to_sink_resistance: f64,
    /// Lumped sink heat capacity, J/K.
    pub sink_heat_capacity: f64,
}

impl Default for PackageParams {
    fn default() -> Self {
        PackageParams {
            spreader_conductivity: 400.0,
            spreader_heat_capacity: 3.45e6,
            spreader_thickness: 1.0e-3,
            spreader_to_sink_resistance: 0.05,
            sink_heat_capacity: 0.3,
        }
    }
}

/// Ambient and sink-side boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientSpec {
    /// Kelvin.
    pub ambient_temperature: f64,
    /// K/W from the sink node to ambient.
    pub sink_to_ambient_resistance: f64,
    /// Multiplier applied to the sink resistance of air-cooled stacks.
    pub convection_multiplier_aircooled: f64,
}

impl AmbientSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sink_to_ambient_resistance <= 0.0 {
            return Err(Error::invalid("sink-to-ambient resistance must be positive"));
        }
        if self.convection_multiplier_aircooled <= 0.0 {
            return Err(Error::invalid("air-cooled convection multiplier must be positive"));
        }
        Ok(())
    }
}

impl Default for AmbientSpec {
    fn default() -> Self {
        AmbientSpec {
            ambient_temperature: 318.15,
            sink_to_ambient_resistance: 0.45,
            convection_multiplier_aircooled: 20.0,
        }
    }
}

/// Node temperatures (kelvin, absolute) at a point in simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalState {
    pub temperatures: DVector<f64>,
    pub time: f64,
}

/// Per-block temperature summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTemp {
    pub max: f64,
    pub mean: f64,
}

/// Average power actually injected per block over one transient step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InjectedPower {
    /// Block -> (dynamic, time-averaged static) watts.
    pub per_block: BTreeMap<String, (f64, f64)>,
}

impl InjectedPower {
    pub fn total(&self) -> f64 {
        self.per_block.values().map(|(d, s)| d + s).sum()
    }
}

/// Immutable RC network plus cached factorizations.
pub struct ThermalNetwork {
    g: DMatrix<f64>,
    c: DVector<f64>,
    /// Block name -> (node, area fraction) cells it covers.
    cell_map: BTreeMap<String, Vec<(usize, f64)>>,
    /// Blocks in canonical (layer, floorplan) order.
    block_order: Vec<String>,
    /// Layer index per node; None for the spreader/sink nodes.
    node_layer: Vec<Option<usize>>,
    node_names: Vec<String>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub layer_count: usize,
    pub ambient: f64,
    steady_factor: Cholesky<f64, Dyn>,
    step_factors: Mutex<HashMap<u64, Arc<Cholesky<f64, Dyn>>>>,
}

impl std::fmt::Debug for ThermalNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ThermalNetwork")
            .field("nodes", &self.node_count())
            .field("layers", &self.layer_count)
            .field("grid", &(self.grid_rows, self.grid_cols))
            .field("blocks", &self.block_order.len())
            .finish()
    }
}

impl ThermalNetwork {
    pub fn node_count(&self) -> usize {
        self.c.len()
    }

    pub fn block_order(&self) -> &[String] {
        &self.block_order
    }

    pub fn has_block(&self, name: &str) -> bool {
        self.cell_map.contains_key(name)
    }

    pub fn conductances(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn capacitances(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn node_name(&self, node: usize) -> &str {
        &self.node_names[node]
    }

    /// Layer index of a node, if it is a grid cell.
    pub fn node_layer(&self, node: usize) -> Option<usize> {
        self.node_layer[node]
    }

    /// Builds a network from explicit components. `g` must be symmetric with
    /// non-positive off-diagonals and non-negative row sums (the row sum is
    /// the ambient coupling of that node); `c` must be strictly positive.
    /// Area fractions per block must sum to 1.
    pub fn from_components(
        g: DMatrix<f64>,
        c: DVector<f64>,
        cell_map: BTreeMap<String, Vec<(usize, f64)>>,
        ambient: f64,
    ) -> Result<Self> {
        let n = c.len();
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::validation("conductance matrix shape mismatch"));
        }
        for i in 0..n {
            if c[i] <= 0.0 {
                return Err(Error::validation(format!(
                    "capacitance of node {i} must be positive"
                )));
            }
            let mut row_sum = 0.0;
            for j in 0..n {
                if (g[(i, j)] - g[(j, i)]).abs() > 1e-9 * g[(i, i)].abs().max(1.0) {
                    return Err(Error::validation("conductance matrix is not symmetric"));
                }
                if i != j && g[(i, j)] > 1e-15 {
                    return Err(Error::validation(format!(
                        "negative conductance between nodes {i} and {j}"
                    )));
                }
                row_sum += g[(i, j)];
            }
            if row_sum < -1e-9 {
                return Err(Error::validation(format!(
                    "node {i} has negative ambient coupling"
                )));
            }
        }
        let block_order: Vec<String> = cell_map.keys().cloned().collect();
        for (name, cells) in &cell_map {
            let frac: f64 = cells.iter().map(|(_, f)| f).sum();
            if cells.is_empty() || (frac - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "block {name} area fractions sum to {frac}, expected 1"
                )));
            }
        }
        let steady_factor = Cholesky::new(g.clone()).ok_or_else(|| {
            Error::validation("conductance matrix is not positive definite (floating network?)")
        })?;
        let node_names = (0..n).map(|i| format!("node{i}")).collect();
        Ok(ThermalNetwork {
            g,
            c,
            cell_map,
            block_order,
            node_layer: vec![None; n],
            node_names,
            grid_rows: 1,
            grid_cols: 1,
            layer_count: 0,
            ambient,
            steady_factor,
            step_factors: Mutex::new(HashMap::new()),
        })
    }

    fn step_factor(&self, h: f64) -> Arc<Cholesky<f64, Dyn>> {
        let key = h.to_bits();
        let mut cache = self.step_factors.lock().unwrap();
        cache
            .entry(key)
            .or_insert_with(|| {
                let n = self.c.len();
                let mut a = self.g.clone();
                for i in 0..n {
                    a[(i, i)] += self.c[i] / h;
                }
                Arc::new(Cholesky::new(a).expect("C/h + G is positive definite"))
            })
            .clone()
    }

    /// Dynamic power vector over nodes from a per-block power assignment.
    fn power_vector(&self, block_powers: &BTreeMap<String, f64>) -> Result<DVector<f64>> {
        let mut p = DVector::zeros(self.c.len());
        for (name, &watts) in block_powers {
            if watts < 0.0 {
                return Err(Error::invalid(format!("negative power for block {name}")));
            }
            let cells = self
                .cell_map
                .get(name)
                .ok_or_else(|| Error::invalid(format!("unknown block {name}")))?;
            for &(node, frac) in cells {
                p[node] += watts * frac;
            }
        }
        Ok(p)
    }

    /// Area-weighted mean temperature of one block.
    fn block_mean(&self, temps: &DVector<f64>, cells: &[(usize, f64)]) -> f64 {
        cells.iter().map(|&(n, f)| temps[n] * f).sum()
    }

    /// Writes G and C in a plain-text triplet format for debugging.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write as _;
        let n = self.c.len();
        let mut out = String::new();
        let _ = writeln!(out, "# nodes {n}");
        let _ = writeln!(out, "# conductances: i j value (W/K, Laplacian form)");
        for i in 0..n {
            for j in i..n {
                let v = self.g[(i, j)];
                if v != 0.0 {
                    let _ = writeln!(out, "G {i} {j} {v:?}");
                }
            }
        }
        let _ = writeln!(out, "# capacitances: i value (J/K)");
        for i in 0..n {
            let _ = writeln!(out, "C {i} {:?}", self.c[i]);
        }
        out
    }
}

/// Builds the RC network for one stack on a rows x cols grid.
pub fn build_network(
    stack: &Stack,
    grid_rows: usize,
    grid_cols: usize,
    ambient: &AmbientSpec,
) -> Result<ThermalNetwork> {
    build_network_with(stack, grid_rows, grid_cols, ambient, &PackageParams::default())
}

pub fn build_network_with(
    stack: &Stack,
    grid_rows: usize,
    grid_cols: usize,
    ambient: &AmbientSpec,
    package: &PackageParams,
) -> Result<ThermalNetwork> {
    ambient.validate()?;
    if grid_rows == 0 || grid_cols == 0 {
        return Err(Error::invalid("grid must be at least 1x1"));
    }
    if stack.layers.is_empty() {
        return Err(Error::invalid("stack has no layers"));
    }
    let (die_w, die_h) = stack.extent();
    if die_w <= 0.0 || die_h <= 0.0 {
        return Err(Error::invalid("stack has no laterally extended layer"));
    }
    let layers = &stack.layers;
    let nl = layers.len();
    let cells_per_layer = grid_rows * grid_cols;
    let n = nl * cells_per_layer + 2;
    let spreader = n - 2;
    let sink = n - 1;

    let cell_w = die_w / grid_cols as f64;
    let cell_h = die_h / grid_rows as f64;
    let cell_area = cell_w * cell_h;
    let die_area = die_w * die_h;

    let node = |layer: usize, r: usize, c: usize| layer * cells_per_layer + r * grid_cols + c;

    let mut g = DMatrix::zeros(n, n);
    let mut add = |i: usize, j: usize, cond: f64| {
        g[(i, j)] -= cond;
        g[(j, i)] -= cond;
        g[(i, i)] += cond;
        g[(j, j)] += cond;
    };

    for (li, layer) in layers.iter().enumerate() {
        let k = layer.conductivity;
        let t = layer.thickness;
        // Lateral coupling between 4-neighbors: two half-cell resistances in
        // series through the cross-section (neighbor span x thickness).
        let gx = k * cell_h * t / cell_w;
        let gy = k * cell_w * t / cell_h;
        for r in 0..grid_rows {
            for c in 0..grid_cols {
                if c + 1 < grid_cols {
                    add(node(li, r, c), node(li, r, c + 1), gx);
                }
                if r + 1 < grid_rows {
                    add(node(li, r, c), node(li, r + 1, c), gy);
                }
            }
        }
        // Vertical coupling to the layer above: half thicknesses in series.
        if li + 1 < nl {
            let above = &layers[li + 1];
            let resistance = t / (2.0 * k * cell_area)
                + above.thickness / (2.0 * above.conductivity * cell_area);
            let gv = 1.0 / resistance;
            for r in 0..grid_rows {
                for c in 0..grid_cols {
                    add(node(li, r, c), node(li + 1, r, c), gv);
                }
            }
        }
    }

    // Top layer -> lumped spreader: top half thickness plus spreader half
    // thickness, through the cell area.
    let top = &layers[nl - 1];
    let r_top_cell = top.thickness / (2.0 * top.conductivity * cell_area)
        + package.spreader_thickness / (2.0 * package.spreader_conductivity * cell_area);
    for r in 0..grid_rows {
        for c in 0..grid_cols {
            add(node(nl - 1, r, c), spreader, 1.0 / r_top_cell);
        }
    }

    // Spreader -> sink -> ambient.
    let r_spr_sink = package.spreader_thickness / (2.0 * package.spreader_conductivity * die_area)
        + package.spreader_to_sink_resistance;
    add(spreader, sink, 1.0 / r_spr_sink);
    let mut r_amb = ambient.sink_to_ambient_resistance;
    if stack.cooling == Cooling::AirCooled {
        r_amb *= ambient.convection_multiplier_aircooled;
    }
    g[(sink, sink)] += 1.0 / r_amb;

    // Capacitances.
    let mut c = DVector::zeros(n);
    for (li, layer) in layers.iter().enumerate() {
        let cap_cell = layer.volumetric_heat_capacity * cell_area * layer.thickness;
        for idx in 0..cells_per_layer {
            c[li * cells_per_layer + idx] = cap_cell;
        }
    }
    c[spreader] = package.spreader_heat_capacity * die_area * package.spreader_thickness;
    c[sink] = package.sink_heat_capacity;

    // Block -> cell mapping: a block's power spreads over exactly the cells
    // its rectangle covers, weighted by overlap area.
    let mut cell_map = BTreeMap::new();
    let mut block_order = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        let Some(fp) = &layer.floorplan else { continue };
        for b in fp.blocks() {
            if b.x + b.width > die_w + 1e-12 || b.y + b.height > die_h + 1e-12 {
                return Err(Error::validation(format!(
                    "block {} extends outside the die bounds of stack {}",
                    b.name, stack.id
                )));
            }
            let area = b.area();
            let c0 = (b.x / cell_w).floor().max(0.0) as usize;
            let r0 = (b.y / cell_h).floor().max(0.0) as usize;
            let c1 = (((b.x + b.width) / cell_w).ceil() as usize).min(grid_cols);
            let r1 = (((b.y + b.height) / cell_h).ceil() as usize).min(grid_rows);
            let mut cells = Vec::new();
            for r in r0..r1 {
                for cc in c0..c1 {
                    let ox = (b.x + b.width).min((cc + 1) as f64 * cell_w) - b.x.max(cc as f64 * cell_w);
                    let oy = (b.y + b.height).min((r + 1) as f64 * cell_h) - b.y.max(r as f64 * cell_h);
                    if ox > 0.0 && oy > 0.0 {
                        cells.push((node(li, r, cc), ox * oy / area));
                    }
                }
            }
            let covered: f64 = cells.iter().map(|(_, f)| f).sum();
            if cells.is_empty() || (covered - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "block {} is not fully covered by the grid (fraction {covered})",
                    b.name
                )));
            }
            cell_map.insert(b.name.clone(), cells);
            block_order.push(b.name.clone());
        }
    }

    let mut node_layer = vec![None; n];
    let mut node_names = vec![String::new(); n];
    for li in 0..nl {
        for r in 0..grid_rows {
            for cc in 0..grid_cols {
                let i = node(li, r, cc);
                node_layer[i] = Some(li);
                node_names[i] = format!("{}:L{li}({r},{cc})", stack.id);
            }
        }
    }
    node_names[spreader] = format!("{}:spreader", stack.id);
    node_names[sink] = format!("{}:sink", stack.id);

    let steady_factor = Cholesky::new(g.clone())
        .ok_or_else(|| Error::Internal("conductance matrix is not positive definite".into()))?;

    Ok(ThermalNetwork {
        g,
        c,
        cell_map,
        block_order,
        node_layer,
        node_names,
        grid_rows,
        grid_cols,
        layer_count: nl,
        ambient: ambient.ambient_temperature,
        steady_factor,
        step_factors: Mutex::new(HashMap::new()),
    })
}

/// A state with every node at ambient, time 0.
pub fn ambient_state(net: &ThermalNetwork) -> ThermalState {
    ThermalState {
        temperatures: DVector::from_element(net.node_count(), net.ambient),
        time: 0.0,
    }
}

/// A state with every node at the given temperature, time 0.
pub fn uniform_state(net: &ThermalNetwork, temperature: f64) -> ThermalState {
    ThermalState {
        temperatures: DVector::from_element(net.node_count(), temperature),
        time: 0.0,
    }
}

/// Advances the state by `dt` using backward Euler over `substeps`
/// increments. Conduction is implicit; leakage is evaluated explicitly per
/// block at the substep-start temperature. Returns the new state and the
/// power actually injected (static averaged over substeps).
pub fn transient_step(
    net: &ThermalNetwork,
    state: &ThermalState,
    block_powers: &BTreeMap<String, f64>,
    leakage_fits: &BTreeMap<String, LeakageFit>,
    dt: f64,
    substeps: usize,
) -> Result<(ThermalState, InjectedPower)> {
    if dt <= 0.0 {
        return Err(Error::invalid("dt must be positive"));
    }
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    if state.temperatures.len() != net.node_count() {
        return Err(Error::invalid("state does not match network"));
    }
    let p_dyn = net.power_vector(block_powers)?;
    for (name, fit) in leakage_fits {
        if !net.has_block(name) {
            return Err(Error::invalid(format!("unknown block {name} in leakage fits")));
        }
        if fit.p0 < 0.0 || fit.beta < 0.0 {
            return Err(Error::invalid(format!("invalid leakage fit for block {name}")));
        }
    }

    let h = dt / substeps as f64;
    let factor = net.step_factor(h);
    let mut theta: DVector<f64> = state.temperatures.map(|t| t - net.ambient);
    let mut static_acc: BTreeMap<String, f64> = BTreeMap::new();

    for _ in 0..substeps {
        let mut rhs = p_dyn.clone();
        for (name, fit) in leakage_fits {
            let cells = &net.cell_map[name];
            let t_block = net.block_mean(&theta, cells) + net.ambient;
            let leak = fit.eval(t_block);
            *static_acc.entry(name.clone()).or_insert(0.0) += leak;
            for &(node, frac) in cells {
                rhs[node] += leak * frac;
            }
        }
        for i in 0..rhs.len() {
            rhs[i] += net.c[i] / h * theta[i];
        }
        theta = factor.solve(&rhs);
        for i in 0..theta.len() {
            if !theta[i].is_finite() {
                return Err(Error::Numerical {
                    node: net.node_name(i).to_string(),
                });
            }
        }
    }

    let mut per_block = BTreeMap::new();
    for (name, &watts) in block_powers {
        per_block.insert(name.clone(), (watts, 0.0));
    }
    for (name, acc) in static_acc {
        per_block.entry(name.clone()).or_insert((0.0, 0.0)).1 = acc / substeps as f64;
    }

    Ok((
        ThermalState {
            temperatures: theta.map(|v| v + net.ambient),
            time: state.time + dt,
        },
        InjectedPower { per_block },
    ))
}

/// Solves the leakage-coupled steady state by fixed-point iteration on
/// `G θ = P(T)`. Fails with a thermal-runaway error when the loop has no
/// fixed point (guard temperature or iteration cap exceeded).
pub fn steady_state(
    net: &ThermalNetwork,
    block_powers: &BTreeMap<String, f64>,
    leakage_fits: &BTreeMap<String, LeakageFit>,
) -> Result<ThermalState> {
    let p_dyn = net.power_vector(block_powers)?;
    for name in leakage_fits.keys() {
        if !net.has_block(name) {
            return Err(Error::invalid(format!("unknown block {name} in leakage fits")));
        }
    }
    let mut temps = DVector::from_element(net.node_count(), net.ambient);
    for iteration in 1..=MAX_STEADY_ITERATIONS {
        let mut rhs = p_dyn.clone();
        for (name, fit) in leakage_fits {
            let cells = &net.cell_map[name];
            let t_block: f64 = cells.iter().map(|&(n, f)| temps[n] * f).sum();
            let leak = fit.eval(t_block);
            if !leak.is_finite() {
                return Err(Error::ThermalRunaway {
                    iterations: iteration,
                    temperature: t_block,
                });
            }
            for &(node, frac) in cells {
                rhs[node] += leak * frac;
            }
        }
        let theta = net.steady_factor.solve(&rhs);
        let next = theta.map(|v| v + net.ambient);
        let max_t = next.max();
        if !max_t.is_finite() || max_t > RUNAWAY_GUARD {
            return Err(Error::ThermalRunaway {
                iterations: iteration,
                temperature: max_t,
            });
        }
        let delta = (&next - &temps).abs().max();
        temps = next;
        if delta < STEADY_TOLERANCE {
            return Ok(ThermalState {
                temperatures: temps,
                time: 0.0,
            });
        }
    }
    let max_t = temps.max();
    Err(Error::ThermalRunaway {
        iterations: MAX_STEADY_ITERATIONS,
        temperature: max_t,
    })
}

/// Max and area-weighted mean temperature of every block.
pub fn block_temperatures(net: &ThermalNetwork, state: &ThermalState) -> BTreeMap<String, BlockTemp> {
    let mut out = BTreeMap::new();
    for (name, cells) in &net.cell_map {
        let mean = net.block_mean(&state.temperatures, cells);
        let max = cells
            .iter()
            .map(|&(n, _)| state.temperatures[n])
            .fold(f64::NEG_INFINITY, f64::max);
        out.insert(name.clone(), BlockTemp { max, mean });
    }
    out
}

/// Temperature summary of one named block.
pub fn block_temperature(net: &ThermalNetwork, state: &ThermalState, name: &str) -> Result<BlockTemp> {
    let cells = net
        .cell_map
        .get(name)
        .ok_or_else(|| Error::invalid(format!("unknown block {name}")))?;
    let mean = net.block_mean(&state.temperatures, cells);
    let max = cells
        .iter()
        .map(|&(n, _)| state.temperatures[n])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BlockTemp { max, mean })
}

/// Peak cell temperature per layer, bottom to top.
pub fn layer_peaks(net: &ThermalNetwork, state: &ThermalState) -> Vec<f64> {
    let mut peaks = vec![f64::NEG_INFINITY; net.layer_count];
    for (i, layer) in net.node_layer.iter().enumerate() {
        if let Some(l) = layer {
            peaks[*l] = peaks[*l].max(state.temperatures[i]);
        }
    }
    peaks
}

/// Heat flow into ambient for a state, W (sum of ambient couplings times
/// temperature rise).
pub fn ambient_heat_flow(net: &ThermalNetwork, state: &ThermalState) -> f64 {
    let n = net.node_count();
    let mut flow = 0.0;
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            row_sum += net.g[(i, j)];
        }
        flow += row_sum * (state.temperatures[i] - net.ambient);
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{build_stack, StackConfig, StackKind};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Single cell coupled to ambient: R kelvin/watt, C joule/kelvin.
    fn one_node(r: f64, c: f64, ambient: f64) -> ThermalNetwork {
        let g = DMatrix::from_element(1, 1, 1.0 / r);
        let cap = DVector::from_element(1, c);
        let mut cell_map = BTreeMap::new();
        cell_map.insert("cell".to_string(), vec![(0usize, 1.0)]);
        ThermalNetwork::from_components(g, cap, cell_map, ambient).unwrap()
    }

    fn watts(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(n, w)| (n.to_string(), *w)).collect()
    }

    fn no_leak() -> BTreeMap<String, LeakageFit> {
        BTreeMap::new()
    }

    #[test]
    fn minimal_stack_yields_three_nodes() {
        let mut cfg = StackConfig::new(StackKind::Ext2d);
        cfg.mem_layers = 1;
        let stacks = build_stack(&cfg).unwrap();
        // The DRAM stack is a single layer: 1 cell + spreader + sink.
        let net = build_network(&stacks[1], 1, 1, &AmbientSpec::default()).unwrap();
        assert_eq!(net.node_count(), 3);
    }

    #[test]
    fn nine_layer_stack_on_8x8_grid_has_578_nodes() {
        let cfg = StackConfig::new(StackKind::Stacked3d);
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[0], 8, 8, &AmbientSpec::default()).unwrap();
        assert_eq!(net.node_count(), 9 * 64 + 2);
    }

    #[test]
    fn ext3d_networks_are_disjoint() {
        let cfg = StackConfig::new(StackKind::Ext3d);
        let stacks = build_stack(&cfg).unwrap();
        let core = build_network(&stacks[0], 4, 4, &AmbientSpec::default()).unwrap();
        let mem = build_network(&stacks[1], 4, 4, &AmbientSpec::default()).unwrap();
        for name in core.block_order() {
            assert!(!mem.has_block(name));
        }
    }

    #[test]
    fn zero_power_stays_at_ambient() {
        let net = one_node(1.0, 1.0, 318.15);
        let state = ambient_state(&net);
        let (next, _) = transient_step(&net, &state, &watts(&[]), &no_leak(), 1e-3, 4).unwrap();
        assert_relative_eq!(next.temperatures[0], 318.15, epsilon = 1e-12);
        let ss = steady_state(&net, &watts(&[]), &no_leak()).unwrap();
        assert_relative_eq!(ss.temperatures[0], 318.15, epsilon = 1e-12);
    }

    #[test]
    fn rc_charging_matches_analytic_solution() {
        let net = one_node(1.0, 1.0, 300.0);
        let mut state = ambient_state(&net);
        let powers = watts(&[("cell", 1.0)]);
        for _ in 0..1000 {
            let (next, _) = transient_step(&net, &state, &powers, &no_leak(), 1e-3, 10).unwrap();
            state = next;
        }
        let exact = 300.0 + (1.0 - (-1.0f64).exp());
        assert!((state.temperatures[0] - exact).abs() / (exact - 300.0) < 0.01);
    }

    #[test]
    fn steady_state_with_leakage_matches_bisection_oracle() {
        let ambient = 318.15;
        let net = one_node(1.0, 1.0, ambient);
        let fit = LeakageFit::new(0.1, 0.05, ambient).unwrap();
        let mut fits = BTreeMap::new();
        fits.insert("cell".to_string(), fit);
        let ss = steady_state(&net, &watts(&[("cell", 1.0)]), &fits).unwrap();

        // Independent oracle: bisection on f(T) = T - amb - R*(P + leak(T)).
        let f = |t: f64| t - ambient - (1.0 + fit.eval(t));
        let (mut lo, mut hi) = (ambient, ambient + 50.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((ss.temperatures[0] - lo).abs() < 1e-3);
    }

    #[test]
    fn runaway_configuration_is_detected() {
        // R*p0*beta*e^{...} >= 1 everywhere: θ = 3 e^θ has no solution.
        let ambient = 318.15;
        let net = one_node(1.0, 1.0, ambient);
        let mut fits = BTreeMap::new();
        fits.insert("cell".to_string(), LeakageFit::new(3.0, 1.0, ambient).unwrap());
        let err = steady_state(&net, &watts(&[]), &fits).unwrap_err();
        assert!(matches!(err, Error::ThermalRunaway { .. }), "{err:?}");
    }

    #[test]
    fn uniform_field_has_equal_max_and_mean() {
        let cfg = StackConfig::new(StackKind::Stacked3d);
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[0], 4, 4, &AmbientSpec::default()).unwrap();
        let state = uniform_state(&net, 350.0);
        for (_, t) in block_temperatures(&net, &state) {
            assert_relative_eq!(t.max, t.mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_cell_block_mean_and_max() {
        // Two equal-area cells coupled to ambient, block spanning both.
        let mut g = DMatrix::zeros(2, 2);
        g[(0, 0)] = 1.0;
        g[(1, 1)] = 1.0;
        let c = DVector::from_element(2, 1.0);
        let mut cell_map = BTreeMap::new();
        cell_map.insert("blk".to_string(), vec![(0usize, 0.5), (1usize, 0.5)]);
        let net = ThermalNetwork::from_components(g, c, cell_map, 300.0).unwrap();
        let state = ThermalState {
            temperatures: DVector::from_vec(vec![350.0, 352.0]),
            time: 0.0,
        };
        let t = block_temperature(&net, &state, "blk").unwrap();
        assert_relative_eq!(t.mean, 351.0, epsilon = 1e-12);
        assert_relative_eq!(t.max, 352.0, epsilon = 1e-12);
        assert!(block_temperature(&net, &state, "nope").is_err());
    }

    #[test]
    fn lowest_memory_layer_is_hottest_in_3d_ext() {
        let cfg = StackConfig::new(StackKind::Ext3d);
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[1], 4, 4, &AmbientSpec::default()).unwrap();
        let mut powers = BTreeMap::new();
        powers.insert("LOGIC".to_string(), 1.0);
        for l in 0..8 {
            for i in 0..16 {
                powers.insert(format!("B{l}_{i}"), 0.1);
            }
        }
        let ss = steady_state(&net, &powers, &no_leak()).unwrap();
        let peaks = layer_peaks(&net, &ss);
        for w in peaks.windows(2) {
            assert!(w[0] > w[1], "layers should cool toward the sink: {peaks:?}");
        }
        // Hottest bank block lives in the lowest memory layer.
        let temps = block_temperatures(&net, &ss);
        let hottest_bank = temps
            .iter()
            .filter(|(n, _)| n.starts_with('B'))
            .max_by(|a, b| a.1.max.total_cmp(&b.1.max))
            .unwrap();
        assert!(hottest_bank.0.starts_with("B0_"));
    }

    #[test]
    fn steady_state_conserves_energy() {
        let cfg = StackConfig::new(StackKind::Stacked3d);
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[0], 8, 8, &AmbientSpec::default()).unwrap();
        let mut powers = BTreeMap::new();
        for name in net.block_order() {
            powers.insert(name.clone(), 0.8);
        }
        let total: f64 = powers.values().sum();
        let ss = steady_state(&net, &powers, &no_leak()).unwrap();
        let flow = ambient_heat_flow(&net, &ss);
        assert_relative_eq!(flow, total, max_relative = 1e-6);
    }

    #[test]
    fn power_increase_never_cools_any_node() {
        // M-matrix monotonicity on randomized small networks.
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.6) {
                        let cond = rng.gen_range(0.1..2.0);
                        g[(i, j)] -= cond;
                        g[(j, i)] -= cond;
                        g[(i, i)] += cond;
                        g[(j, j)] += cond;
                    }
                }
                g[(i, i)] += rng.gen_range(0.05..1.0); // ambient coupling
            }
            let c = DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0));
            let mut cell_map = BTreeMap::new();
            for i in 0..n {
                cell_map.insert(format!("b{i}"), vec![(i, 1.0)]);
            }
            let net = ThermalNetwork::from_components(g, c, cell_map, 300.0).unwrap();
            let mut powers = BTreeMap::new();
            for i in 0..n {
                powers.insert(format!("b{i}"), rng.gen_range(0.0..3.0));
            }
            let base = steady_state(&net, &powers, &no_leak()).unwrap();
            let bump = rng.gen_range(0..n);
            *powers.get_mut(&format!("b{bump}")).unwrap() += 1.0;
            let bumped = steady_state(&net, &powers, &no_leak()).unwrap();
            for i in 0..n {
                assert!(
                    bumped.temperatures[i] >= base.temperatures[i] - 1e-9,
                    "node {i} cooled when power increased"
                );
            }
        }
    }

    #[test]
    fn substep_refinement_converges() {
        let cfg = StackConfig::new(StackKind::Stacked3d);
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[0], 4, 4, &AmbientSpec::default()).unwrap();
        let mut powers = BTreeMap::new();
        for name in net.block_order() {
            powers.insert(name.clone(), 1.0);
        }
        let state = ambient_state(&net);
        let run = |substeps: usize| {
            let mut s = state.clone();
            for _ in 0..20 {
                let (next, _) = transient_step(&net, &s, &powers, &no_leak(), 1e-3, substeps).unwrap();
                s = next;
            }
            s
        };
        let coarse = run(1);
        let s32 = run(32);
        let s64 = run(64);
        let d_coarse = (&coarse.temperatures - &s64.temperatures).abs().max();
        let d_fine = (&s32.temperatures - &s64.temperatures).abs().max();
        assert!(d_fine < d_coarse);
        assert!(d_fine < 0.01, "32 vs 64 substeps differ by {d_fine} K");
    }

    #[test]
    fn transient_approaches_steady_state() {
        let mut cfg = StackConfig::new(StackKind::Stacked3d);
        cfg.mem_layers = 2;
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[0], 2, 2, &AmbientSpec::default()).unwrap();
        let mut powers = BTreeMap::new();
        for name in net.block_order() {
            powers.insert(name.clone(), 2.0);
        }
        let mut fits = BTreeMap::new();
        for name in net.block_order() {
            fits.insert(name.clone(), LeakageFit::new(0.05, 0.02, 318.15).unwrap());
        }
        let ss = steady_state(&net, &powers, &fits).unwrap();
        let mut state = ambient_state(&net);
        for _ in 0..20_000 {
            let (next, _) = transient_step(&net, &state, &powers, &fits, 1e-3, 4).unwrap();
            state = next;
        }
        let diff = (&state.temperatures - &ss.temperatures).abs().max();
        assert!(diff < 0.05, "transient is {diff} K from steady state");
    }

    #[test]
    fn grid_refinement_changes_peaks_by_less_than_5_percent() {
        let cfg = StackConfig::new(StackKind::Stacked3d);
        let stacks = build_stack(&cfg).unwrap();
        let mut powers = BTreeMap::new();
        for layer in &stacks[0].layers {
            if let Some(fp) = &layer.floorplan {
                for b in fp.blocks() {
                    powers.insert(b.name.clone(), if b.name.starts_with('C') { 8.0 } else { 0.5 });
                }
            }
        }
        let peak = |rows: usize, cols: usize| {
            let net = build_network(&stacks[0], rows, cols, &AmbientSpec::default()).unwrap();
            let ss = steady_state(&net, &powers, &no_leak()).unwrap();
            block_temperatures(&net, &ss)
                .values()
                .map(|t| t.max)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let p8 = peak(8, 8);
        let p16 = peak(16, 16);
        assert!((p8 - p16).abs() / p16 < 0.05, "8x8 {p8} vs 16x16 {p16}");
    }

    #[test]
    fn uniform_power_layers_cool_toward_the_sink() {
        let cfg = StackConfig::new(StackKind::Stacked3d);
        let stacks = build_stack(&cfg).unwrap();
        let net = build_network(&stacks[0], 4, 4, &AmbientSpec::default()).unwrap();
        let mut powers = BTreeMap::new();
        for name in net.block_order() {
            powers.insert(name.clone(), 1.0);
        }
        let ss = steady_state(&net, &powers, &no_leak()).unwrap();
        let peaks = layer_peaks(&net, &ss);
        for w in peaks.windows(2) {
            assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn negative_conductance_is_rejected() {
        let mut g = DMatrix::zeros(2, 2);
        g[(0, 0)] = 1.0;
        g[(1, 1)] = 1.0;
        g[(0, 1)] = 0.5; // positive off-diagonal = negative conductance
        g[(1, 0)] = 0.5;
        let c = DVector::from_element(2, 1.0);
        let err = ThermalNetwork::from_components(g, c, BTreeMap::new(), 300.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn layers_of_different_extents_share_the_union_grid() {
        use crate::floorplan::{Block, Cooling, Floorplan, LayerKind, LayerSpec, Stack};
        let narrow = Floorplan::new(vec![Block::new("A", 0.0, 0.0, 2e-3, 2e-3)], 2e-3, 2e-3).unwrap();
        let wide = Floorplan::new(vec![Block::new("W", 0.0, 0.0, 4e-3, 2e-3)], 4e-3, 2e-3).unwrap();
        let die = |index, fp| LayerSpec {
            index,
            kind: LayerKind::ActiveCore,
            thickness: 1e-4,
            conductivity: 120.0,
            volumetric_heat_capacity: 1.75e6,
            floorplan: Some(fp),
            dissipates_power: true,
        };
        let stack = Stack::new(
            "s",
            vec![die(0, wide), die(1, narrow)],
            Cooling::HeatSink,
        )
        .unwrap();
        // Union extent is 4mm x 2mm; the narrow block covers half of its layer.
        let net = build_network(&stack, 2, 2, &AmbientSpec::default()).unwrap();
        assert_eq!(net.node_count(), 2 * 4 + 2);
        assert!(net.has_block("A") && net.has_block("W"));
    }
}
