//! Reading and writing dataset bundles and refinement results.
//!
//! A bundle directory holds `imu.csv`, `keyframes.csv`, `tracks.csv`,
//! `calib.txt` and optionally `groundtruth.csv` and `initial.csv`. Lines
//! starting with `#` and blank lines are ignored. Timestamps are integer
//! nanoseconds; floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Vector2, Vector3};

use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::factors::{FeatureTrack, Observation};
use crate::geometry::{CameraIntrinsics, Extrinsics, Quat};
use crate::preintegration::{ImuNoiseModel, ImuSample};
use crate::solver::SolveReport;
use crate::state::KeyframeState;

pub const IMU_FILE: &str = "imu.csv";
pub const KEYFRAMES_FILE: &str = "keyframes.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const CALIB_FILE: &str = "calib.txt";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.csv";
pub const INITIAL_FILE: &str = "initial.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.tum";
pub const STATES_FILE: &str = "states.csv";
pub const REPORT_FILE: &str = "report.json";

const STATE_HEADER: &str =
    "# timestamp_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub imu: Vec<ImuSample>,
    pub keyframes: Vec<i64>,
    /// Observation keyframe indices refer to `keyframes`.
    pub tracks: Vec<FeatureTrack>,
    pub calibration: Calibration,
    pub groundtruth: Option<Vec<KeyframeState>>,
    pub initial: Option<Vec<KeyframeState>>,
}

/// Non-comment lines of a file with their 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.to_string()))
        .collect())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Splits a CSV row into exactly `n` fields.
fn fields<'a>(path: &Path, line: usize, text: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(parse_error(
            path,
            line,
            format!("expected {n} comma-separated fields, found {}", parts.len()),
        ));
    }
    Ok(parts)
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_error(path, line, format!("cannot parse {what} from '{field}'")))
}

fn parse_f64s<const N: usize>(path: &Path, line: usize, parts: &[&str]) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        let v: f64 = parse(path, line, p, "number")?;
        *o = v;
        if !v.is_finite() {
            return Err(parse_error(path, line, format!("non-finite value '{p}'")));
        }
    }
    Ok(out)
}

/// Unit quaternion from file values, renormalizing only when the stored
/// value is off by more than rounding so that written files reload bit-exactly.
fn unit_quaternion(path: &Path, line: usize, q: Quaternion<f64>) -> Result<Quat> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(parse_error(path, line, "quaternion is not unit length"));
    }
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        Ok(Quat::new_unchecked(q))
    } else {
        Ok(Quat::new_normalize(q))
    }
}

fn check_increasing(path: &Path, line: usize, prev: Option<i64>, ts: i64) -> Result<()> {
    match prev {
        Some(p) if ts <= p => Err(Error::NonMonotonicFile {
            path: path.to_path_buf(),
            line,
            timestamp_ns: ts,
        }),
        _ => Ok(()),
    }
}

/// Reads an IMU CSV in EuRoC column order: `timestamp_ns, wx, wy, wz, ax, ay, az`.
pub fn load_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let mut out: Vec<ImuSample> = Vec::new();
    for (line, text) in data_lines(path)? {
        let parts = fields(path, line, &text, 7)?;
        let ts: i64 = parse(path, line, parts[0], "timestamp")?;
        check_increasing(path, line, out.last().map(|s| s.timestamp_ns), ts)?;
        let v = parse_f64s::<6>(path, line, &parts[1..])?;
        out.push(ImuSample::new(
            ts,
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        ));
    }
    if out.is_empty() {
        return Err(Error::Empty { what: "IMU stream" });
    }
    Ok(out)
}

pub fn load_keyframes(path: &Path) -> Result<Vec<i64>> {
    let mut out: Vec<i64> = Vec::new();
    for (line, text) in data_lines(path)? {
        let parts = fields(path, line, &text, 1)?;
        let ts = parse(path, line, parts[0], "timestamp")?;
        check_increasing(path, line, out.last().copied(), ts)?;
        out.push(ts);
    }
    if out.is_empty() {
        return Err(Error::Empty { what: "keyframe list" });
    }
    Ok(out)
}

/// Reads `feature_id, keyframe_timestamp_ns, u_px, v_px` rows and resolves
/// them against the keyframe list. Bearings are recomputed from the pixels.
pub fn load_tracks(path: &Path, keyframes: &[i64], intr: &CameraIntrinsics) -> Result<Vec<FeatureTrack>> {
    let mut grouped: BTreeMap<u64, Vec<(usize, Observation)>> = BTreeMap::new();
    for (line, text) in data_lines(path)? {
        let parts = fields(path, line, &text, 4)?;
        let id: u64 = parse(path, line, parts[0], "feature id")?;
        let ts: i64 = parse(path, line, parts[1], "timestamp")?;
        let keyframe = keyframes.binary_search(&ts).map_err(|_| Error::DanglingTrack {
            path: path.to_path_buf(),
            line,
            timestamp_ns: ts,
        })?;
        let [u, v] = parse_f64s::<2>(path, line, &parts[2..])?;
        let pixel = Vector2::new(u, v);
        let bearing = intr
            .back_project(&pixel)
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        grouped.entry(id).or_default().push((
            line,
            Observation {
                keyframe,
                pixel,
                bearing,
            },
        ));
    }
    grouped
        .into_iter()
        .map(|(id, obs)| {
            let last_line = obs.iter().map(|(l, _)| *l).max().unwrap_or(0);
            FeatureTrack::new(id, obs.into_iter().map(|(_, o)| o).collect())
                .map_err(|e| parse_error(path, last_line, e.to_string()))
        })
        .collect()
}

const CALIB_KEYS: [&str; 22] = [
    "fx",
    "fy",
    "cx",
    "cy",
    "k1",
    "k2",
    "p1",
    "p2",
    "ext_qw",
    "ext_qx",
    "ext_qy",
    "ext_qz",
    "ext_px",
    "ext_py",
    "ext_pz",
    "gravity",
    "gyro_noise_density",
    "accel_noise_density",
    "gyro_random_walk",
    "accel_random_walk",
    "image_width",
    "image_height",
];

/// Reads `key = value` lines. The extrinsic quaternion (`ext_q*`, wxyz) is
/// the camera-to-IMU rotation and `ext_p*` the camera origin in the IMU frame.
pub fn load_calibration(path: &Path) -> Result<Calibration> {
    let mut values: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (line, text) in data_lines(path)? {
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| parse_error(path, line, "expected 'key = value'"))?;
        let key = key.trim();
        if !CALIB_KEYS.contains(&key) {
            return Err(parse_error(path, line, format!("unknown key '{key}'")));
        }
        let v: f64 = parse(path, line, value.trim(), key)?;
        if !v.is_finite() {
            return Err(parse_error(path, line, format!("non-finite value for '{key}'")));
        }
        if values.insert(key.to_string(), (line, v)).is_some() {
            return Err(parse_error(path, line, format!("duplicate key '{key}'")));
        }
    }
    let end = values.values().map(|(l, _)| *l).max().unwrap_or(0);
    let get = |k: &str| -> Result<f64> {
        values
            .get(k)
            .map(|(_, v)| *v)
            .ok_or_else(|| parse_error(path, end, format!("missing key '{k}'")))
    };
    let q = Quaternion::new(get("ext_qw")?, get("ext_qx")?, get("ext_qy")?, get("ext_qz")?);
    let rotation = unit_quaternion(path, end, q)?;
    let dim = |k: &str| -> Result<u32> {
        let v = get(k)?;
        if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as u32)
        } else {
            Err(parse_error(path, values[k].0, format!("'{k}' must be a positive integer")))
        }
    };
    let calib = Calibration {
        intrinsics: CameraIntrinsics {
            fx: get("fx")?,
            fy: get("fy")?,
            cx: get("cx")?,
            cy: get("cy")?,
            k1: get("k1")?,
            k2: get("k2")?,
            p1: get("p1")?,
            p2: get("p2")?,
        },
        extrinsics: Extrinsics::new(
            rotation,
            Vector3::new(get("ext_px")?, get("ext_py")?, get("ext_pz")?),
        ),
        gravity_magnitude: get("gravity")?,
        noise: ImuNoiseModel {
            gyro_noise_density: get("gyro_noise_density")?,
            accel_noise_density: get("accel_noise_density")?,
            gyro_random_walk: get("gyro_random_walk")?,
            accel_random_walk: get("accel_random_walk")?,
        },
        image_width: dim("image_width")?,
        image_height: dim("image_height")?,
    };
    if !(calib.intrinsics.fx > 0.0 && calib.intrinsics.fy > 0.0 && calib.gravity_magnitude > 0.0) {
        return Err(parse_error(path, end, "focal lengths and gravity must be positive"));
    }
    calib.noise.validate()?;
    Ok(calib)
}

/// Reads a 17-column state file (`groundtruth.csv`, `initial.csv`, `states.csv`).
pub fn load_states(path: &Path) -> Result<Vec<KeyframeState>> {
    let mut out: Vec<KeyframeState> = Vec::new();
    for (line, text) in data_lines(path)? {
        let parts = fields(path, line, &text, 17)?;
        let ts: i64 = parse(path, line, parts[0], "timestamp")?;
        check_increasing(path, line, out.last().map(|s| s.timestamp_ns), ts)?;
        let v = parse_f64s::<16>(path, line, &parts[1..])?;
        let orientation = unit_quaternion(path, line, Quaternion::new(v[3], v[4], v[5], v[6]))?;
        out.push(KeyframeState {
            timestamp_ns: ts,
            position: Vector3::new(v[0], v[1], v[2]),
            orientation,
            velocity: Vector3::new(v[7], v[8], v[9]),
            accel_bias: Vector3::new(v[10], v[11], v[12]),
            gyro_bias: Vector3::new(v[13], v[14], v[15]),
        });
    }
    if out.is_empty() {
        return Err(Error::Empty { what: "state list" });
    }
    Ok(out)
}

/// Loads and cross-validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let calibration = load_calibration(&dir.join(CALIB_FILE))?;
    let imu = load_imu(&dir.join(IMU_FILE))?;
    let keyframes = load_keyframes(&dir.join(KEYFRAMES_FILE))?;
    let tracks = load_tracks(&dir.join(TRACKS_FILE), &keyframes, &calibration.intrinsics)?;
    let (first, last) = (keyframes[0], keyframes[keyframes.len() - 1]);
    if imu[0].timestamp_ns > first || imu[imu.len() - 1].timestamp_ns < last {
        return Err(Error::ImuCoverage {
            start_ns: first,
            end_ns: last,
        });
    }
    let optional = |name: &str| -> Result<Option<Vec<KeyframeState>>> {
        let path = dir.join(name);
        path.exists().then(|| load_states(&path)).transpose()
    };
    Ok(DatasetBundle {
        imu,
        keyframes,
        tracks,
        calibration,
        groundtruth: optional(GROUNDTRUTH_FILE)?,
        initial: optional(INITIAL_FILE)?,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn states_csv(states: &[KeyframeState]) -> String {
    let mut s = format!("{STATE_HEADER}\n");
    for st in states {
        let q = st.orientation.quaternion();
        let (p, v, ba, bg) = (st.position, st.velocity, st.accel_bias, st.gyro_bias);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            st.timestamp_ns, p.x, p.y, p.z, q.w, q.i, q.j, q.k, v.x, v.y, v.z, ba.x, ba.y, ba.z, bg.x, bg.y, bg.z
        )
        .expect("writing to a String cannot fail");
    }
    s
}

pub fn save_states(states: &[KeyframeState], path: &Path) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Empty { what: "state list" });
    }
    write(path, &states_csv(states))
}

/// Nanoseconds to decimal seconds without going through floating point.
fn seconds_string(ns: i64) -> String {
    let sign = if ns < 0 { "-" } else { "" };
    let abs = ns.unsigned_abs();
    format!("{sign}{}.{:09}", abs / 1_000_000_000, abs % 1_000_000_000)
}

/// TUM trajectory: `timestamp_s tx ty tz qx qy qz qw`.
pub fn save_tum(states: &[KeyframeState], path: &Path) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Empty { what: "state list" });
    }
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for st in states {
        let q = st.orientation.quaternion();
        let p = st.position;
        writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            seconds_string(st.timestamp_ns),
            p.x,
            p.y,
            p.z,
            q.i,
            q.j,
            q.k,
            q.w
        )
        .expect("writing to a String cannot fail");
    }
    write(path, &s)
}

/// Writes `trajectory.tum`, `states.csv` and `report.json` into `dir`.
pub fn save_results(states: &[KeyframeState], report: &SolveReport, dir: &Path) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Empty { what: "state list" });
    }
    ensure_dir(dir)?;
    save_tum(states, &dir.join(TRAJECTORY_FILE))?;
    save_states(states, &dir.join(STATES_FILE))?;
    let json = serde_json::to_string_pretty(report)?;
    write(&dir.join(REPORT_FILE), &(json + "\n"))
}

fn calibration_txt(c: &Calibration) -> String {
    let q = c.extrinsics.rotation.quaternion();
    let t = c.extrinsics.translation;
    let i = &c.intrinsics;
    let n = &c.noise;
    let values = [
        i.fx,
        i.fy,
        i.cx,
        i.cy,
        i.k1,
        i.k2,
        i.p1,
        i.p2,
        q.w,
        q.i,
        q.j,
        q.k,
        t.x,
        t.y,
        t.z,
        c.gravity_magnitude,
        n.gyro_noise_density,
        n.accel_noise_density,
        n.gyro_random_walk,
        n.accel_random_walk,
        c.image_width as f64,
        c.image_height as f64,
    ];
    let mut s = String::from("# camera intrinsics (pinhole + radtan), camera-to-IMU extrinsics, IMU noise\n");
    for (k, v) in CALIB_KEYS.iter().zip(values) {
        writeln!(s, "{k} = {v}").expect("writing to a String cannot fail");
    }
    s
}

/// Writes every component of the bundle in the layout [`load_bundle`] reads.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let mut imu = String::from("# timestamp_ns,wx,wy,wz,ax,ay,az\n");
    for s in &bundle.imu {
        let (w, a) = (s.gyro, s.accel);
        writeln!(imu, "{},{},{},{},{},{},{}", s.timestamp_ns, w.x, w.y, w.z, a.x, a.y, a.z)
            .expect("writing to a String cannot fail");
    }
    write(&dir.join(IMU_FILE), &imu)?;

    let mut kf = String::from("# timestamp_ns\n");
    for t in &bundle.keyframes {
        writeln!(kf, "{t}").expect("writing to a String cannot fail");
    }
    write(&dir.join(KEYFRAMES_FILE), &kf)?;

    let mut tracks = String::from("# feature_id,keyframe_timestamp_ns,u_px,v_px\n");
    for t in &bundle.tracks {
        for o in &t.observations {
            let ts = bundle.keyframes.get(o.keyframe).ok_or_else(|| {
                Error::InvalidProblem(format!("track {} references keyframe index {}", t.id, o.keyframe))
            })?;
            writeln!(tracks, "{},{},{},{}", t.id, ts, o.pixel.x, o.pixel.y)
                .expect("writing to a String cannot fail");
        }
    }
    write(&dir.join(TRACKS_FILE), &tracks)?;
    write(&dir.join(CALIB_FILE), &calibration_txt(&bundle.calibration))?;

    if let Some(gt) = &bundle.groundtruth {
        save_states(gt, &dir.join(GROUNDTRUTH_FILE))?;
    }
    if let Some(init) = &bundle.initial {
        save_states(init, &dir.join(INITIAL_FILE))?;
    }
    Ok(())
}

/// All files a bundle directory may contain, in write order.
pub fn bundle_files(dir: &Path) -> Vec<PathBuf> {
    [IMU_FILE, KEYFRAMES_FILE, TRACKS_FILE, CALIB_FILE, GROUNDTRUTH_FILE, INITIAL_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}
