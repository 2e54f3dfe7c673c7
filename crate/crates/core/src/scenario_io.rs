//! Seeded scenario generation, JSON persistence and the results CSV.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{self, Channel, EdgeServer, LlmConfig, ModelError, Scenario, UserDevice, Weights};

pub const SCENARIO_VERSION: u32 = 1;

/// Path-loss intercept and slope, distance in kilometers.
const PATH_LOSS_DB_AT_1KM: f64 = 128.1;
const PATH_LOSS_SLOPE_DB: f64 = 37.6;
const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Inclusive range for sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T> Range<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    #[serde(rename = "N")]
    pub num_users: usize,
    #[serde(rename = "M")]
    pub num_servers: usize,
    /// Side of the square deployment area, meters.
    pub area_size: f64,
    pub seed: u64,
    pub p_max: Range<f64>,
    pub user_f_max: Range<f64>,
    pub server_f_max: Range<f64>,
    pub b_max: f64,
    pub token_len: Range<u64>,
    pub user_cores: Range<u32>,
    pub user_fpc: Range<u32>,
    pub server_cores: Range<u32>,
    pub server_fpc: Range<u32>,
    pub batch: u64,
    pub hidden: u64,
    pub layers: u32,
    pub kappa1: f64,
    pub kappa2: f64,
    pub lipschitz: f64,
    pub dataset_size: Range<u64>,
    pub noise_dbm: f64,
    pub payload_scale: f64,
    pub omega_t: f64,
    pub omega_e: f64,
    pub omega_s: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            num_users: 50,
            num_servers: 10,
            area_size: 1000.0,
            seed: 0,
            p_max: Range::new(1.0, 2.0),
            user_f_max: Range::new(0.5e9, 1.0e9),
            server_f_max: Range::new(1.0e9, 3.0e9),
            b_max: 20e6,
            token_len: Range::new(512, 1024),
            user_cores: Range::new(4, 6),
            user_fpc: Range::new(1, 1),
            server_cores: Range::new(2560, 5120),
            server_fpc: Range::new(1, 2),
            batch: 512,
            hidden: 1024,
            layers: 32,
            kappa1: 1e-27,
            kappa2: 1e-27,
            lipschitz: 1.0,
            dataset_size: Range::new(1000, 5000),
            noise_dbm: -134.0,
            payload_scale: 1.0,
            omega_t: 1.0,
            omega_e: 1.0,
            omega_s: 1.0,
        }
    }
}

impl GenParams {
    pub fn with_size(num_users: usize, num_servers: usize, seed: u64) -> Self {
        Self {
            num_users,
            num_servers,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let fail = |m: &str| Err(IoError::Params(m.to_string()));
        if self.num_users == 0 || self.num_servers == 0 {
            return fail("N and M must be at least 1");
        }
        if !(self.area_size > 0.0 && self.area_size.is_finite()) {
            return fail("area_size must be positive");
        }
        let float_ranges = [("p_max", self.p_max), ("user_f_max", self.user_f_max), ("server_f_max", self.server_f_max)];
        for (name, r) in float_ranges {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return fail(&format!("{name} must be a nonempty positive range"));
            }
        }
        let int_ok = |lo: u64, hi: u64| lo >= 1 && lo <= hi;
        if !int_ok(self.token_len.lo, self.token_len.hi)
            || !int_ok(self.dataset_size.lo, self.dataset_size.hi)
            || !int_ok(self.user_cores.lo.into(), self.user_cores.hi.into())
            || !int_ok(self.user_fpc.lo.into(), self.user_fpc.hi.into())
            || !int_ok(self.server_cores.lo.into(), self.server_cores.hi.into())
            || !int_ok(self.server_fpc.lo.into(), self.server_fpc.hi.into())
        {
            return fail("integer ranges must be nonempty and start at 1 or more");
        }
        if self.layers < 2 || self.batch == 0 || self.hidden == 0 {
            return fail("layers >= 2, batch >= 1 and hidden >= 1 required");
        }
        let nonneg = [self.kappa1, self.kappa2, self.omega_t, self.omega_e, self.omega_s];
        if nonneg.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return fail("kappas and weights must be finite and non-negative");
        }
        if !(self.b_max > 0.0 && self.lipschitz > 0.0 && self.payload_scale > 0.0 && self.noise_dbm.is_finite()) {
            return fail("b_max, lipschitz and payload_scale must be positive");
        }
        Ok(())
    }
}

/// `10^((dBm - 30) / 10)` watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Linear channel gain at `distance_m` meters (clamped to 1 m).
pub fn path_gain(distance_m: f64) -> f64 {
    let km = distance_m.max(MIN_DISTANCE_M) / 1000.0;
    let loss_db = PATH_LOSS_DB_AT_1KM + PATH_LOSS_SLOPE_DB * km.log10();
    10f64.powf(-loss_db / 10.0)
}

/// Draws a scenario. Normalizers are the reference values at the midpoint
/// decision with every user attached to its strongest server.
pub fn generate(gp: &GenParams) -> Result<Scenario, IoError> {
    gp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(gp.seed);
    let point = |rng: &mut ChaCha8Rng| [rng.random_range(0.0..=gp.area_size), rng.random_range(0.0..=gp.area_size)];
    let servers: Vec<EdgeServer> = (0..gp.num_servers)
        .map(|_| EdgeServer {
            cores: rng.random_range(gp.server_cores.lo..=gp.server_cores.hi),
            flops_per_cycle: f64::from(rng.random_range(gp.server_fpc.lo..=gp.server_fpc.hi)),
            f_max: rng.random_range(gp.server_f_max.lo..=gp.server_f_max.hi),
            b_max: gp.b_max,
            kappa2: gp.kappa2,
            position: point(&mut rng),
        })
        .collect();
    let users: Vec<UserDevice> = (0..gp.num_users)
        .map(|_| UserDevice {
            token_len: rng.random_range(gp.token_len.lo..=gp.token_len.hi),
            cores: rng.random_range(gp.user_cores.lo..=gp.user_cores.hi),
            flops_per_cycle: f64::from(rng.random_range(gp.user_fpc.lo..=gp.user_fpc.hi)),
            f_max: rng.random_range(gp.user_f_max.lo..=gp.user_f_max.hi),
            p_max: rng.random_range(gp.p_max.lo..=gp.p_max.hi),
            kappa1: gp.kappa1,
            dataset_size: rng.random_range(gp.dataset_size.lo..=gp.dataset_size.hi),
            position: point(&mut rng),
        })
        .collect();
    let gains = Matrix::from_fn(gp.num_users, gp.num_servers, |n, m| {
        let (a, b) = (users[n].position, servers[m].position);
        path_gain((a[0] - b[0]).hypot(a[1] - b[1]))
    });
    let mut scenario = Scenario {
        llm: LlmConfig {
            total_layers: gp.layers,
            batch_size: gp.batch,
            hidden_dim: gp.hidden,
            lipschitz: gp.lipschitz,
        },
        users,
        servers,
        channel: Channel {
            gains,
            noise_power: dbm_to_watts(gp.noise_dbm),
            payload_scale: gp.payload_scale,
        },
        weights: Weights {
            omega_t: gp.omega_t,
            omega_e: gp.omega_e,
            omega_s: gp.omega_s,
            normalizers: Default::default(),
        },
    };
    scenario.weights.normalizers = model::reference_normalizers(&scenario, &strongest_server(&scenario))?;
    scenario.validate()?;
    Ok(scenario)
}

/// Each user attached to the server with the largest gain.
pub fn strongest_server(scenario: &Scenario) -> Matrix {
    let gains = &scenario.channel.gains;
    let mut assoc = Matrix::zeros(gains.rows(), gains.cols());
    for n in 0..gains.rows() {
        let best = (0..gains.cols())
            .max_by(|&a, &b| gains[(n, a)].total_cmp(&gains[(n, b)]).then(b.cmp(&a)))
            .unwrap_or(0);
        assoc[(n, best)] = 1.0;
    }
    assoc
}

#[derive(Serialize)]
struct VersionedRef<'a, T> {
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct VersionOnly {
    version: u32,
}

/// Serializes `value` with a version tag and writes it atomically.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(&VersionedRef {
        version: SCENARIO_VERSION,
        body: value,
    })
    .map_err(|e| IoError::Parse {
        path: String::new(),
        message: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

/// Parses a versioned JSON document, reporting the field path on failure.
/// The body is read directly (the `version` key is ignored there) so that
/// errors keep their full path.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    match serde_json::from_str::<VersionOnly>(text) {
        Ok(v) if v.version != SCENARIO_VERSION => {
            return Err(IoError::Version {
                found: v.version,
                expected: SCENARIO_VERSION,
            })
        }
        Ok(_) => {}
        // Malformed documents are reported by the full parse below.
        Err(e) if e.is_syntax() || e.is_eof() => {}
        Err(e) => {
            return Err(IoError::Parse {
                path: "version".into(),
                message: e.to_string(),
            })
        }
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| IoError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_json_str(&text)
}

/// Saves a scenario after validating it; non-finite values are refused.
pub fn save_scenario(path: &Path, scenario: &Scenario) -> Result<(), IoError> {
    scenario.validate()?;
    save_json(path, scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    scenario_from_str(&text)
}

pub fn scenario_from_str(text: &str) -> Result<Scenario, IoError> {
    let scenario: Scenario = from_json_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub const RESULT_COLUMNS: [&str; 16] = [
    "seed",
    "method",
    "N",
    "M",
    "omega_t",
    "omega_e",
    "omega_s",
    "energy_J",
    "delay_s",
    "stability_bound",
    "objective",
    "outer_rounds",
    "ao_iters",
    "cccp_iters",
    "kkt_residual",
    "runtime_ms",
];

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub omega_t: f64,
    pub omega_e: f64,
    pub omega_s: f64,
    #[serde(rename = "energy_J")]
    pub energy_j: f64,
    pub delay_s: f64,
    pub stability_bound: f64,
    pub objective: f64,
    pub outer_rounds: usize,
    pub ao_iters: usize,
    pub cccp_iters: usize,
    pub kkt_residual: f64,
    pub runtime_ms: f64,
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| IoError::Io {
        path: PathBuf::from("<results>"),
        source: e,
    })?;
    Ok(())
}

pub fn read_results<R: io::Read>(input: R) -> Result<Vec<ResultRow>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(IoError::Parse {
            path: "header".into(),
            message: format!("expected columns {RESULT_COLUMNS:?}, found {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(IoError::from)).collect()
}
