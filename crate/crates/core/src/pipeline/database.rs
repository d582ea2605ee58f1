use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::shooting::{solve_tpbvp, InitialGuess, OptimalTrajectory, ShootingOptions};
use crate::odeflow::{Control, QuadParams, State, STATE_DIM};

pub const CSV_HEADER: [&str; 7] = ["y", "vy", "z", "vz", "theta", "u1", "u2"];

#[derive(Debug, Error)]
pub enum DatabaseError {
    #[error("malformed sampling bounds: {0}")]
    Bounds(String),
    #[error("invalid database options: {0}")]
    Options(String),
    #[error("trajectory {index}: {failures} consecutive shooting failures")]
    TooManyFailures { index: usize, failures: usize },
    #[error("malformed database: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Box of initial conditions, `lo[i] <= x0[i] <= hi[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: State,
    pub hi: State,
}

impl Default for Bounds {
    /// y, z in ±10 m, vy, vz in ±5 m/s, θ in ±π/4.
    fn default() -> Self {
        let q = std::f64::consts::FRAC_PI_4;
        Bounds {
            lo: [-10.0, -5.0, -10.0, -5.0, -q],
            hi: [10.0, 5.0, 10.0, 5.0, q],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), DatabaseError> {
        for i in 0..STATE_DIM {
            let (lo, hi) = (self.lo[i], self.hi[i]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DatabaseError::Bounds(format!("component {i}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &State) -> bool {
        (0..STATE_DIM).all(|i| self.lo[i] <= x[i] && x[i] <= self.hi[i])
    }

    fn sample(&self, rng: &mut impl Rng) -> State {
        let mut x = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            x[i] = if self.lo[i] == self.hi[i] {
                self.lo[i]
            } else {
                rng.gen_range(self.lo[i]..=self.hi[i])
            };
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatabaseOptions {
    pub n_traj: usize,
    pub samples_per_traj: usize,
    pub seed: u64,
    pub bounds: Bounds,
    /// Resampling budget for a single trajectory slot.
    pub max_consecutive_failures: usize,
    /// Worker threads; `0` picks the available parallelism.
    pub workers: usize,
    pub shooting: ShootingOptions,
}

impl Default for DatabaseOptions {
    fn default() -> Self {
        DatabaseOptions {
            n_traj: 2000,
            samples_per_traj: 59,
            seed: 0,
            bounds: Bounds::default(),
            max_consecutive_failures: 50,
            workers: 0,
            shooting: ShootingOptions::default(),
        }
    }
}

/// Fraction of rows with a control on each face of the box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub u1_at_zero: f64,
    pub u1_at_one: f64,
    pub u2_at_minus_one: f64,
    pub u2_at_one: f64,
}

impl SaturationStats {
    pub fn of(controls: impl Iterator<Item = Control>) -> Self {
        let mut s = SaturationStats::default();
        let mut n = 0usize;
        for u in controls {
            n += 1;
            s.u1_at_zero += f64::from(u[0] <= 0.0);
            s.u1_at_one += f64::from(u[0] >= 1.0);
            s.u2_at_minus_one += f64::from(u[1] <= -1.0);
            s.u2_at_one += f64::from(u[1] >= 1.0);
        }
        if n > 0 {
            let n = n as f64;
            s.u1_at_zero /= n;
            s.u1_at_one /= n;
            s.u2_at_minus_one /= n;
            s.u2_at_one /= n;
        }
        s
    }
}

/// Sidecar metadata stored next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseMeta {
    pub seed: u64,
    pub bounds: Bounds,
    pub trajectories: usize,
    pub samples_per_traj: usize,
    /// Shooting failures that were resampled.
    pub failures: usize,
    pub params: QuadParams,
    pub saturation: SaturationStats,
    /// Mean and largest final time over the solved transfers, s.
    pub mean_tf: f64,
    pub max_tf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub meta: DatabaseMeta,
}

impl Database {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Rows of trajectory `i`.
    pub fn trajectory(&self, i: usize) -> (&[State], &[Control]) {
        let s = self.meta.samples_per_traj;
        (&self.states[i * s..(i + 1) * s], &self.controls[i * s..(i + 1) * s])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DatabaseError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for (x, u) in self.states.iter().zip(&self.controls) {
            out.write_record(x.iter().chain(u).map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads rows written by [`Database::write_csv`]; the metadata comes
    /// from the caller.
    pub fn read_csv<R: Read>(r: R, meta: DatabaseMeta) -> Result<Self, DatabaseError> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(DatabaseError::Malformed(format!("header {header:?}")));
        }
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DatabaseError::Malformed(format!("row {}: {e}", line + 1)))?;
            if vals.len() != 7 || vals.iter().any(|v| !v.is_finite()) {
                return Err(DatabaseError::Malformed(format!("row {}", line + 1)));
            }
            let mut x = [0.0; STATE_DIM];
            x.copy_from_slice(&vals[..STATE_DIM]);
            states.push(x);
            controls.push([vals[5], vals[6]]);
        }
        let expected = meta.trajectories * meta.samples_per_traj;
        if states.len() != expected {
            return Err(DatabaseError::Malformed(format!(
                "{} rows, metadata promises {expected}",
                states.len()
            )));
        }
        Ok(Database { states, controls, meta })
    }

    /// Writes `path` and its `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<(), DatabaseError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        let mut m = BufWriter::new(File::create(meta_path(path))?);
        serde_json::to_writer_pretty(&mut m, &self.meta)?;
        m.write_all(b"\n")?;
        m.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatabaseError> {
        let meta: DatabaseMeta = serde_json::from_reader(BufReader::new(File::open(meta_path(path))?))?;
        Database::read_csv(BufReader::new(File::open(path)?), meta)
    }
}

/// `db.csv` → `db.csv.meta.json`
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

struct Slot {
    traj: OptimalTrajectory,
    failures: usize,
}

// Trajectory slot `index` draws from its own stream, so the result does not
// depend on how slots are distributed over workers.
fn solve_slot(index: usize, p: &QuadParams, opts: &DatabaseOptions) -> Result<Slot, DatabaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let mut shooting = opts.shooting;
    shooting.samples = opts.samples_per_traj;
    for failures in 0..=opts.max_consecutive_failures {
        let x0 = opts.bounds.sample(&mut rng);
        shooting.seed = rng.gen();
        match solve_tpbvp(&x0, p, &InitialGuess::Hover, &shooting) {
            Ok(traj) => return Ok(Slot { traj, failures }),
            Err(e) => log::warn!("trajectory {index}: {e}; resampling"),
        }
    }
    Err(DatabaseError::TooManyFailures {
        index,
        failures: opts.max_consecutive_failures + 1,
    })
}

/// Solves `n_traj` optimal transfers from random initial conditions and
/// stacks their state–control samples. The last sample of every trajectory
/// is replaced by the equilibrium pair `(0, [m g / c1, 0])`.
///
/// The output is a function of `(p, opts)` only; the worker count does not
/// change a single byte.
pub fn build_database(p: &QuadParams, opts: &DatabaseOptions) -> Result<Database, DatabaseError> {
    opts.bounds.validate()?;
    if opts.n_traj == 0 || opts.samples_per_traj < 2 {
        return Err(DatabaseError::Options(
            "need at least one trajectory and two samples per trajectory".into(),
        ));
    }
    let workers = match opts.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(opts.n_traj);

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Slot>>> = Mutex::new((0..opts.n_traj).map(|_| None).collect());
    let first_error: Mutex<Option<DatabaseError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= opts.n_traj {
                    break;
                }
                match solve_slot(i, p, opts) {
                    Ok(slot) => {
                        if (i + 1) % 100 == 0 {
                            log::info!("trajectory {} of {}", i + 1, opts.n_traj);
                        }
                        slots.lock().expect("no poisoned lock")[i] = Some(slot);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        first_error.lock().expect("no poisoned lock").get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("no poisoned lock") {
        return Err(e);
    }

    let slots = slots.into_inner().expect("no poisoned lock");
    let rows = opts.n_traj * opts.samples_per_traj;
    let mut states = Vec::with_capacity(rows);
    let mut controls = Vec::with_capacity(rows);
    let (mut failures, mut tf_sum, mut tf_max) = (0, 0.0, 0.0f64);
    for slot in slots.into_iter().map(|s| s.expect("every slot solved")) {
        failures += slot.failures;
        tf_sum += slot.traj.tf;
        tf_max = tf_max.max(slot.traj.tf);
        let s = slot.traj.states.len();
        states.extend_from_slice(&slot.traj.states[..s - 1]);
        controls.extend_from_slice(&slot.traj.controls[..s - 1]);
        states.push([0.0; STATE_DIM]);
        controls.push(p.hover_control());
    }
    let saturation = SaturationStats::of(controls.iter().copied());
    log::info!(
        "{} trajectories, {failures} resampled; saturation {saturation:?}",
        opts.n_traj
    );
    Ok(Database {
        states,
        controls,
        meta: DatabaseMeta {
            seed: opts.seed,
            bounds: opts.bounds,
            trajectories: opts.n_traj,
            samples_per_traj: opts.samples_per_traj,
            failures,
            params: *p,
            saturation,
            mean_tf: tf_sum / opts.n_traj as f64,
            max_tf: tf_max,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, workers: usize) -> DatabaseOptions {
        DatabaseOptions {
            n_traj: n,
            seed: 5,
            workers,
            ..DatabaseOptions::default()
        }
    }

    #[test]
    fn single_trajectory_ends_at_hover() {
        let p = QuadParams::default();
        let db = build_database(&p, &small(1, 1)).unwrap();
        assert_eq!(db.len(), 59);
        assert_eq!(db.states[58], [0.0; 5]);
        assert!((db.controls[58][0] - 0.41942).abs() < 2e-5);
        assert_eq!(db.controls[58][1], 0.0);
        assert!(Bounds::default().contains(&db.states[0]));
        for u in &db.controls {
            assert!((0.0..=1.0).contains(&u[0]) && (-1.0..=1.0).contains(&u[1]));
        }
    }

    #[test]
    fn bytes_do_not_depend_on_worker_count() {
        let p = QuadParams::default();
        let csv = |w| {
            let mut buf = Vec::new();
            build_database(&p, &small(3, w)).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        let one = csv(1);
        assert_eq!(one, csv(3));
        let text = String::from_utf8(one).unwrap();
        assert_eq!(text.lines().next(), Some("y,vy,z,vz,theta,u1,u2"));
        assert_eq!(text.lines().count(), 1 + 3 * 59);
    }

    #[test]
    fn csv_round_trip() {
        let p = QuadParams::default();
        let db = build_database(&p, &small(1, 1)).unwrap();
        let mut buf = Vec::new();
        db.write_csv(&mut buf).unwrap();
        let back = Database::read_csv(buf.as_slice(), db.meta.clone()).unwrap();
        assert_eq!(back, db);
        let mut wrong = db.meta.clone();
        wrong.trajectories = 2;
        assert!(Database::read_csv(buf.as_slice(), wrong).is_err());
    }

    #[test]
    fn malformed_bounds_are_rejected() {
        let mut opts = small(1, 1);
        opts.bounds.lo[2] = 11.0;
        assert!(matches!(
            build_database(&QuadParams::default(), &opts),
            Err(DatabaseError::Bounds(_))
        ));
    }

    #[test]
    fn exhausted_budget_is_reported() {
        let mut opts = small(1, 1);
        opts.max_consecutive_failures = 1;
        opts.shooting.max_iterations = 0;
        opts.shooting.restarts = 0;
        assert!(matches!(
            build_database(&QuadParams::default(), &opts),
            Err(DatabaseError::TooManyFailures { .. })
        ));
    }
}
