//! Configuration, the simulation engine and the run driver: pre-run ramp,
//! heartbeat cycles, boundary/kernel sequencing, checkpoints and output.

use crate::boundary::{
    extrapolation_outlet, zou_he_apply, InflowWaveform, InletProfile, OutletScheme, RampShape,
};
use crate::domain::{PatchKind, SimulationDomain};
use crate::error::{Error, Result};
use crate::geometry::{
    classify_cells, porosity_by_convolution, region_cells, voxelize_coil, CoilWire, SimMode,
    VoxelMask,
};
use crate::kernel::{
    collide_stream, initialize_rest, CyLattice, KernelParams, MacroCell, RheologyMode,
};
use crate::lattice::{CS2, ORDERING_TAG, Q};
use crate::observables::{
    estimate_normals, export_fields, max_speed, pairwise_sum, region_average, total_mass,
    wall_shear_stress, NormalField, SeriesWriter,
};
use crate::porous::PorousClosure;
use crate::rheology::{omega_from_mu_unclamped, CarreauYasudaParams, OmegaClamp};
use crate::units::UnitScales;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Viscosity model selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RheologyConfig {
    #[serde(flatten)]
    pub carreau_yasuda: CarreauYasudaParams,
    /// When set, run Newtonian with this constant viscosity instead of the
    /// Carreau–Yasuda law.
    #[serde(default)]
    pub newtonian_mu_pa_s: Option<f64>,
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
}

fn default_omega_min() -> f64 {
    0.2
}
fn default_omega_max() -> f64 {
    1.95
}

impl Default for RheologyConfig {
    fn default() -> Self {
        RheologyConfig {
            carreau_yasuda: CarreauYasudaParams::default(),
            newtonian_mu_pa_s: None,
            omega_min: default_omega_min(),
            omega_max: default_omega_max(),
        }
    }
}

impl RheologyConfig {
    pub fn clamp(&self) -> OmegaClamp {
        OmegaClamp { omega_min: self.omega_min, omega_max: self.omega_max }
    }

    /// Viscosity used for the porous drag: the zero-shear value.
    pub fn drag_mu_pa_s(&self) -> f64 {
        self.newtonian_mu_pa_s.unwrap_or(self.carreau_yasuda.mu0_pa_s)
    }

    pub fn validate(&self) -> Result<()> {
        OmegaClamp { omega_min: self.omega_min, omega_max: self.omega_max }.validate()?;
        match self.newtonian_mu_pa_s {
            Some(mu) if !(mu > 0.0) => {
                Err(Error::Config(format!("newtonian viscosity must be positive, got {mu}")))
            }
            Some(_) => Ok(()),
            None => self.carreau_yasuda.validate(),
        }
    }
}

/// Inflow configuration: either a waveform CSV or a constant velocity.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct InflowConfig {
    #[serde(default)]
    pub waveform_csv: Option<PathBuf>,
    /// Constant mean inflow velocity; alternative to a CSV.
    #[serde(default)]
    pub constant_m_s: Option<f64>,
    /// Period used with `constant_m_s` (defines the heartbeat length).
    #[serde(default = "default_period")]
    pub period_s: f64,
    #[serde(default = "default_ramp_steps")]
    pub ramp_steps: u64,
    #[serde(default)]
    pub ramp_shape: RampShape,
}

fn default_period() -> f64 {
    1.0
}
fn default_ramp_steps() -> u64 {
    1500
}

/// Geometry inputs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct GeometryConfig {
    pub mask: PathBuf,
    #[serde(default)]
    pub coil_csv: Option<PathBuf>,
    #[serde(default = "default_wire_diameter")]
    pub wire_diameter_m: f64,
    /// Averaging window for the porosity convolution; defaults to three wire
    /// diameters.
    #[serde(default)]
    pub porosity_window_m: Option<f64>,
    #[serde(default)]
    pub region_mask: Option<PathBuf>,
}

fn default_wire_diameter() -> f64 {
    0.2e-3
}

/// Run schedule and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_heartbeats")]
    pub heartbeats: u64,
    /// Redundant with heartbeats × period; warned about when inconsistent.
    #[serde(default)]
    pub final_time_s: Option<f64>,
    #[serde(default = "default_output_every")]
    pub output_every: u64,
    /// VTK field snapshots cadence; 0 writes only the final snapshot.
    #[serde(default)]
    pub fields_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub body_accel_m_s2: [f64; 3],
}

fn default_heartbeats() -> u64 {
    2
}
fn default_output_every() -> u64 {
    100
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            heartbeats: default_heartbeats(),
            final_time_s: None,
            output_every: default_output_every(),
            fields_every: 0,
            checkpoint_every: 0,
            output_dir: default_output_dir(),
            body_accel_m_s2: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OutletConfig {
    #[serde(default)]
    pub scheme: OutletScheme,
}

/// Full simulation configuration (TOML). Paths are resolved relative to the
/// config file location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_mode")]
    pub mode: SimMode,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub scales: UnitScales,
    #[serde(default)]
    pub rheology: RheologyConfig,
    #[serde(default)]
    pub porous: PorousClosure,
    #[serde(default)]
    pub inflow: InflowConfig,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub outlet: OutletConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_mode() -> SimMode {
    SimMode::VolumeAveraged
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: SimConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config encode: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.geometry.mask);
        if let Some(p) = self.geometry.coil_csv.as_mut() {
            fix(p);
        }
        if let Some(p) = self.geometry.region_mask.as_mut() {
            fix(p);
        }
        if let Some(p) = self.inflow.waveform_csv.as_mut() {
            fix(p);
        }
        fix(&mut self.run.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.scales.validate()?;
        self.rheology.validate()?;
        self.porous.validate()?;
        if self.inflow.waveform_csv.is_none() && self.inflow.constant_m_s.is_none() {
            return Err(Error::Config(
                "inflow needs either waveform_csv or constant_m_s".into(),
            ));
        }
        if !(self.inflow.period_s > 0.0) {
            return Err(Error::Config("inflow period must be positive".into()));
        }
        if !(self.geometry.wire_diameter_m > 0.0) {
            return Err(Error::Config("wire diameter must be positive".into()));
        }
        if self.run.heartbeats == 0 {
            return Err(Error::Config("heartbeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_waveform(&self) -> Result<InflowWaveform> {
        match (&self.inflow.waveform_csv, self.inflow.constant_m_s) {
            (Some(path), _) => {
                InflowWaveform::read_csv(path, self.inflow.ramp_steps, self.inflow.ramp_shape)
            }
            (None, Some(v)) => {
                Ok(InflowWaveform::constant(v, self.inflow.period_s, self.inflow.ramp_steps))
            }
            (None, None) => unreachable!("validated"),
        }
    }
}

/// Builder assembling a simulation from parts; the file-based path goes
/// through [`Simulation::from_config`], tests construct domains directly.
pub struct SimulationBuilder {
    pub domain: SimulationDomain,
    pub scales: UnitScales,
    pub rheology: RheologyConfig,
    pub porous: PorousClosure,
    pub body_accel_m_s2: [f64; 3],
    pub waveform: Option<InflowWaveform>,
    pub outlet_scheme: OutletScheme,
    pub threads: usize,
    pub region: Option<Vec<u32>>,
}

impl SimulationBuilder {
    pub fn new(domain: SimulationDomain, scales: UnitScales) -> SimulationBuilder {
        SimulationBuilder {
            domain,
            scales,
            rheology: RheologyConfig::default(),
            porous: PorousClosure::default(),
            body_accel_m_s2: [0.0; 3],
            waveform: None,
            outlet_scheme: OutletScheme::default(),
            threads: 0,
            region: None,
        }
    }

    pub fn build(mut self) -> Result<Simulation> {
        self.rheology.validate()?;
        self.porous.validate()?;
        self.scales.validate()?;
        if self.domain.stream_target.is_empty() {
            self.domain.build_tables();
        }
        let d_p_lat = self.scales.length_to_lattice(self.porous.d_p_m);
        let nu_drag_lat = self
            .scales
            .kinematic_viscosity_to_lattice(self.rheology.drag_mu_pa_s() / self.scales.rho0_kg_m3)?;
        self.domain.build_drag(&self.porous, d_p_lat, nu_drag_lat);

        let cy = &self.rheology.carreau_yasuda;
        let (mode, mu_init_lat) = match self.rheology.newtonian_mu_pa_s {
            Some(mu) => {
                let mu_lat = self.scales.dynamic_viscosity_to_lattice(mu);
                (RheologyMode::Newtonian { mu_lat }, mu_lat)
            }
            None => {
                let mu_inf_lat = self.scales.dynamic_viscosity_to_lattice(cy.mu_inf_pa_s);
                let mu0_lat = self.scales.dynamic_viscosity_to_lattice(cy.mu0_pa_s);
                (
                    RheologyMode::CarreauYasuda(CyLattice {
                        mu_inf_lat,
                        mu_delta_lat: mu0_lat - mu_inf_lat,
                        lambda_steps: cy.lambda_s / self.scales.dt_s,
                        exponent: (cy.power_index_n - 1.0) / cy.transition_a,
                        a: cy.transition_a,
                    }),
                    mu0_lat,
                )
            }
        };
        let params = KernelParams {
            gravity: [
                self.scales.acceleration_to_lattice(self.body_accel_m_s2[0]),
                self.scales.acceleration_to_lattice(self.body_accel_m_s2[1]),
                self.scales.acceleration_to_lattice(self.body_accel_m_s2[2]),
            ],
            rheology: mode,
            omega_clamp: self.rheology.clamp(),
        };

        // Zou-He rejects target velocities at or above the speed of sound;
        // the profile peaks at twice the waveform mean.
        if let Some(w) = &self.waveform {
            let peak_lat = self.scales.velocity_to_lattice(2.0 * w.peak());
            if peak_lat >= CS2.sqrt() {
                return Err(Error::Config(format!(
                    "peak inlet lattice velocity {peak_lat:.3} reaches the speed of sound; \
                     reduce the inflow or the time step"
                )));
            }
        }
        let has_inlet = self.domain.patches.iter().any(|p| p.kind == PatchKind::Inlet);
        if has_inlet && self.waveform.is_none() {
            return Err(Error::Config("domain has inlet patches but no waveform was provided".into()));
        }

        let inlet_profiles: Vec<(usize, InletProfile)> = self
            .domain
            .patches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == PatchKind::Inlet)
            .map(|(i, p)| (i, InletProfile::build(&self.domain, p)))
            .collect();

        let n = self.domain.n_cells();
        let mut f = vec![0.0; n * Q];
        initialize_rest(&mut f, &self.domain);
        let omega_init = params.omega_clamp.apply(omega_from_mu_unclamped(mu_init_lat, 1.0));
        let macros =
            vec![MacroCell { rho: 1.0, u: [0.0; 3], mu: mu_init_lat, omega: omega_init }; n];
        let sigma = vec![[0.0; 6]; n];

        let pool = if self.threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(self.threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        let normals = estimate_normals(&self.domain);
        let region_walls: Vec<usize> = match &self.region {
            Some(region) => {
                let set: std::collections::HashSet<u32> = region.iter().copied().collect();
                normals
                    .cells
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| set.contains(c))
                    .map(|(i, _)| i)
                    .collect()
            }
            None => (0..normals.cells.len()).collect(),
        };

        let ramp_steps = self.waveform.as_ref().map(|w| w.ramp_steps).unwrap_or(0);
        Ok(Simulation {
            domain: self.domain,
            scales: self.scales,
            params,
            track_sigma_always: self.rheology.newtonian_mu_pa_s.is_none(),
            f,
            f_next: vec![0.0; n * Q],
            macros,
            sigma,
            waveform: self.waveform,
            inlet_profiles,
            outlet_scheme: self.outlet_scheme,
            step_index: 0,
            ramp_steps,
            pool,
            region: self.region,
            normals,
            region_walls,
        })
    }
}

/// The assembled solver state.
pub struct Simulation {
    pub domain: SimulationDomain,
    pub scales: UnitScales,
    params: KernelParams,
    track_sigma_always: bool,
    f: Vec<f64>,
    f_next: Vec<f64>,
    macros: Vec<MacroCell>,
    sigma: Vec<[f64; 6]>,
    waveform: Option<InflowWaveform>,
    inlet_profiles: Vec<(usize, InletProfile)>,
    outlet_scheme: OutletScheme,
    /// Steps executed so far, counted from the start of the pre-run ramp.
    step_index: u64,
    ramp_steps: u64,
    pool: Option<rayon::ThreadPool>,
    region: Option<Vec<u32>>,
    normals: NormalField,
    /// Indices into `normals` restricted to the region (all walls otherwise).
    region_walls: Vec<usize>,
}

impl Simulation {
    /// Builds the simulation from a validated configuration, loading mask,
    /// coil and waveform files.
    pub fn from_config(config: &SimConfig) -> Result<Simulation> {
        config.validate()?;
        let mut mask = VoxelMask::read(&config.geometry.mask)?;
        let mut porosity = None;
        if let Some(coil_path) = &config.geometry.coil_csv {
            let wire = CoilWire::read_csv(coil_path, config.geometry.wire_diameter_m)?;
            let outcome = voxelize_coil(&wire, &mask)?;
            mask = outcome.mask;
            if config.mode == SimMode::VolumeAveraged {
                let window = config
                    .geometry
                    .porosity_window_m
                    .unwrap_or(3.0 * config.geometry.wire_diameter_m);
                porosity = Some(porosity_by_convolution(&mask, window, config.porous.phi_min)?);
            }
        }
        let domain = classify_cells(&mask, porosity.as_ref(), config.mode, &config.porous)?;
        let region = match &config.geometry.region_mask {
            Some(path) => {
                let region_mask = VoxelMask::read(path)?;
                Some(region_cells(&domain, &region_mask)?)
            }
            None => None,
        };
        let waveform = config.load_waveform()?;
        if (config.scales.dx_m - mask.spacing_m).abs() > 1e-12 * mask.spacing_m {
            log::warn!(
                "config dx ({}) differs from mask spacing ({}); using config dx for unit scales",
                config.scales.dx_m,
                mask.spacing_m
            );
        }
        let mut builder = SimulationBuilder::new(domain, config.scales);
        builder.rheology = config.rheology.clone();
        builder.porous = config.porous;
        builder.body_accel_m_s2 = config.run.body_accel_m_s2;
        builder.waveform = Some(waveform);
        builder.outlet_scheme = config.outlet.scheme;
        builder.threads = config.threads;
        builder.region = region;
        builder.build()
    }

    pub fn populations(&self) -> &[f64] {
        &self.f
    }

    pub fn macros(&self) -> &[MacroCell] {
        &self.macros
    }

    pub fn sigma(&self) -> &[[f64; 6]] {
        &self.sigma
    }

    pub fn normals(&self) -> &NormalField {
        &self.normals
    }

    pub fn region(&self) -> Option<&[u32]> {
        self.region.as_deref()
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn set_ramp_steps(&mut self, ramp: u64) {
        self.ramp_steps = ramp;
    }

    /// Physical time of the current populations; negative during the ramp.
    pub fn time_s(&self) -> f64 {
        (self.step_index as f64 - self.ramp_steps as f64) * self.scales.dt_s
    }

    /// Overwrites populations; for test scenarios.
    pub fn set_populations(&mut self, f: Vec<f64>) {
        assert_eq!(f.len(), self.f.len());
        self.f = f;
    }

    /// Advances one time step. `want_sigma` requests the deviatoric stress
    /// for this step's state (always computed under Carreau–Yasuda).
    ///
    /// After the call, `macros`/`sigma` describe the state the step consumed;
    /// `populations` hold the next step's state.
    pub fn step(&mut self, want_sigma: bool) -> Result<()> {
        let track = want_sigma || self.track_sigma_always;
        let Simulation { domain, params, f, f_next, macros, sigma, .. } = self;
        let blow_up = match &self.pool {
            Some(pool) => {
                pool.install(|| collide_stream(f, f_next, macros, sigma, domain, params, track))
            }
            None => collide_stream(f, f_next, macros, sigma, domain, params, track),
        };
        if let Some(b) = blow_up {
            let (x, y, z) = self.domain.coords(b.cell);
            return Err(Error::BlowUp { step: self.step_index, x, y, z, what: b.what });
        }
        std::mem::swap(&mut self.f, &mut self.f_next);

        // boundary reconstruction at the post-stream time level
        let t_next =
            (self.step_index as f64 + 1.0 - self.ramp_steps as f64) * self.scales.dt_s;
        let ramp_duration = self.ramp_steps as f64 * self.scales.dt_s;
        if let Some(waveform) = &self.waveform {
            let v_mean_lat =
                self.scales.velocity_to_lattice(waveform.sample(t_next, ramp_duration));
            for (patch_idx, profile) in &self.inlet_profiles {
                let patch = &self.domain.patches[*patch_idx];
                let targets: Vec<[f64; 3]> = profile
                    .factors
                    .iter()
                    .map(|&factor| {
                        let speed = factor * v_mean_lat;
                        [
                            profile.inward[0] * speed,
                            profile.inward[1] * speed,
                            profile.inward[2] * speed,
                        ]
                    })
                    .collect();
                zou_he_apply(&mut self.f, patch, &targets);
            }
        }
        for patch in self.domain.patches.iter().filter(|p| p.kind == PatchKind::Outlet) {
            extrapolation_outlet(&mut self.f, &self.domain, patch, self.outlet_scheme);
        }
        self.step_index += 1;
        Ok(())
    }

    /// Mean velocity magnitude over the region (m/s); all fluid cells when no
    /// region is configured.
    pub fn region_mean_speed_m_s(&self) -> Result<f64> {
        let mags: Vec<f64> = match &self.region {
            Some(region) => region
                .iter()
                .map(|&c| {
                    let u = self.macros[c as usize].u;
                    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
                })
                .collect(),
            None => (0..self.domain.n_cells())
                .filter(|&i| !self.domain.flags[i].is_solid())
                .map(|i| {
                    let u = self.macros[i].u;
                    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
                })
                .collect(),
        };
        Ok(self.scales.velocity_to_physical(region_average(&mags)?))
    }

    /// Wall shear stress samples on the region walls (Pa). Requires sigma to
    /// be fresh (pass `want_sigma = true` to the producing step).
    pub fn region_wall_samples(&self) -> Vec<crate::observables::WallSample> {
        let all = wall_shear_stress(&self.sigma, &self.normals, &self.scales);
        self.region_walls.iter().map(|&i| all[i]).collect()
    }

    pub fn mean_region_wss_pa(&self) -> f64 {
        let samples = self.region_wall_samples();
        if samples.is_empty() {
            return 0.0;
        }
        let mags: Vec<f64> = samples.iter().map(|s| s.magnitude()).collect();
        pairwise_sum(&mags) / mags.len() as f64
    }

    pub fn total_mass(&self) -> f64 {
        total_mass(&self.f)
    }

    pub fn max_speed_m_s(&self) -> f64 {
        self.scales.velocity_to_physical(max_speed(&self.macros, &self.domain))
    }

    pub fn export_vtk(&self, path: &Path, t_s: f64) -> Result<()> {
        export_fields(path, &self.domain, &self.macros, &self.sigma, &self.scales, t_s)
    }

    /// Writes a bit-exact checkpoint: header, populations (cell-major,
    /// direction-minor little-endian f64), then the per-cell viscosity and
    /// relaxation-rate fields the next step depends on.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = CheckpointHeader {
            dims: self.domain.dims,
            dx_m: self.scales.dx_m,
            dt_s: self.scales.dt_s,
            step_index: self.step_index,
            ordering: ORDERING_TAG.to_string(),
            arrays: vec!["f".into(), "mu".into(), "omega".into()],
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::format(path, format!("header encode: {e}")))?;
        (|| -> std::io::Result<()> {
            w.write_all(CKP_MAGIC)?;
            w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
            w.write_all(&header_bytes)?;
            for v in &self.f {
                w.write_all(&v.to_le_bytes())?;
            }
            for m in &self.macros {
                w.write_all(&m.mu.to_le_bytes())?;
            }
            for m in &self.macros {
                w.write_all(&m.omega.to_le_bytes())?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    /// Restores populations, viscosity and relaxation-rate fields plus the
    /// step counter. The geometry/config must match the checkpoint.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != CKP_MAGIC {
            return Err(Error::format(path, "not a coilflow checkpoint"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::format(path, format!("header decode: {e}")))?;
        if header.dims != self.domain.dims {
            return Err(Error::format(
                path,
                format!("checkpoint dims {:?} do not match domain {:?}", header.dims, self.domain.dims),
            ));
        }
        if header.ordering != ORDERING_TAG {
            return Err(Error::format(
                path,
                format!("direction ordering {:?} incompatible with {ORDERING_TAG:?}", header.ordering),
            ));
        }
        let n = self.domain.n_cells();
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        self.f = read_f64s(n * Q)?;
        let mu = read_f64s(n)?;
        let omega = read_f64s(n)?;
        for i in 0..n {
            self.macros[i].mu = mu[i];
            self.macros[i].omega = omega[i];
        }
        self.step_index = header.step_index;
        Ok(())
    }
}

const CKP_MAGIC: &[u8; 8] = b"COILCKP1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    dims: [usize; 3],
    dx_m: f64,
    dt_s: f64,
    step_index: u64,
    ordering: String,
    arrays: Vec<String>,
}

/// Summary of a completed run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub steps_executed: u64,
    pub wall_clock_s: f64,
    pub peak_speed_m_s: f64,
    pub omega_min_seen: f64,
    pub omega_max_seen: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
    pub series_path: PathBuf,
    pub final_fields_path: PathBuf,
}

impl RunReport {
    pub fn mass_drift_rel(&self) -> f64 {
        (self.mass_final - self.mass_initial) / self.mass_initial
    }
}

/// CLI-level overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub checkpoint_every: Option<u64>,
    pub resume: Option<PathBuf>,
}

/// Runs the configured schedule: pre-run ramp, then `heartbeats` periods of
/// the waveform, emitting the time series, field snapshots and checkpoints.
pub fn run(config: &SimConfig, opts: &RunOptions) -> Result<RunReport> {
    let t0 = std::time::Instant::now();
    let mut config = config.clone();
    if let Some(dir) = &opts.output_dir {
        config.run.output_dir = dir.clone();
    }
    if let Some(threads) = opts.threads {
        config.threads = threads;
    }
    if let Some(every) = opts.checkpoint_every {
        config.run.checkpoint_every = every;
    }

    let mut sim = Simulation::from_config(&config)?;
    let waveform = config.load_waveform()?;
    let steps_per_period = (waveform.period_s / config.scales.dt_s).round() as u64;
    let period_error =
        (steps_per_period as f64 * config.scales.dt_s - waveform.period_s).abs() / waveform.period_s;
    if period_error > 1e-9 {
        log::warn!("waveform period is not an integer number of steps (rel. error {period_error:.2e})");
    }
    if let Some(final_t) = config.run.final_time_s {
        let derived = config.run.heartbeats as f64 * waveform.period_s;
        if (final_t - derived).abs() > 1e-9 * derived.max(1.0) {
            log::warn!(
                "final_time_s = {final_t} disagrees with heartbeats × period = {derived}; heartbeats wins"
            );
        }
    }
    let total_steps = waveform.ramp_steps + config.run.heartbeats * steps_per_period;

    std::fs::create_dir_all(&config.run.output_dir)
        .map_err(|e| Error::io(&config.run.output_dir, e))?;
    let series_path = config.run.output_dir.join("series.csv");
    let mut series = SeriesWriter::create(&series_path)?;

    if let Some(ckpt) = &opts.resume {
        sim.load_checkpoint(ckpt)?;
        log::info!("resumed from {} at step {}", ckpt.display(), sim.step_index());
    }

    let mass_initial = sim.total_mass();
    let mut peak_speed = 0.0f64;
    let mut omega_min_seen = f64::INFINITY;
    let mut omega_max_seen = f64::NEG_INFINITY;

    while sim.step_index() < total_steps {
        let step = sim.step_index();
        let want_obs = config.run.output_every > 0 && step % config.run.output_every == 0;
        let want_fields = config.run.fields_every > 0 && step % config.run.fields_every == 0;
        let t_now = sim.time_s();
        sim.step(want_obs || want_fields)?;

        if want_obs {
            let mean_speed = sim.region_mean_speed_m_s()?;
            let mean_wss = sim.mean_region_wss_pa();
            let mass = sim.total_mass();
            let vmax = sim.max_speed_m_s();
            series.write_row(t_now, mean_speed, mean_wss, mass, vmax)?;
            peak_speed = peak_speed.max(vmax);
            for idx in 0..sim.domain.n_cells() {
                if !sim.domain.flags[idx].is_solid() {
                    let w = sim.macros()[idx].omega;
                    omega_min_seen = omega_min_seen.min(w);
                    omega_max_seen = omega_max_seen.max(w);
                }
            }
        }
        if want_fields {
            let path = config.run.output_dir.join(format!("fields_{:08}.vtk", step));
            sim.export_vtk(&path, t_now)?;
        }
        if config.run.checkpoint_every > 0 && sim.step_index() % config.run.checkpoint_every == 0 {
            let path = config
                .run
                .output_dir
                .join(format!("checkpoint_{:08}.ckpt", sim.step_index()));
            sim.save_checkpoint(&path)?;
        }
    }
    series.flush()?;

    let final_fields_path = config.run.output_dir.join("fields_final.vtk");
    // refresh sigma for the final snapshot
    sim.step(true)?;
    sim.export_vtk(&final_fields_path, sim.time_s())?;

    Ok(RunReport {
        steps_executed: sim.step_index(),
        wall_clock_s: t0.elapsed().as_secs_f64(),
        peak_speed_m_s: peak_speed,
        omega_min_seen,
        omega_max_seen,
        mass_initial,
        mass_final: sim.total_mass(),
        series_path,
        final_fields_path,
    })
}
