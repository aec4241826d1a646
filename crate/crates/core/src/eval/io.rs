//! Result files and replay formats.
//!
//! * trial results: JSON lines, one trial per line;
//! * batch summary: CSV, one row per variant;
//! * step logs: CSV with columns `t,px,py,pz,vx,vy,yaw,beta,T_fused,target_id,d_clear`;
//! * point-cloud replay: an 8-byte magic `APRE\0PC1` followed by records of
//!   `f64` timestamp, `u32` point count and `count * 3` `f32` coordinates,
//!   all little-endian;
//! * detection replay: CSV with columns `t,class,u_min,v_min,u_max,v_max,conf`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{BatchReport, Quadrant, StepLog, TrialResult};
use crate::geometry::{PointCloud, Vec3};
use crate::sensors::Detection2D;
use crate::{Error, Result};

pub const CLOUD_MAGIC: &[u8; 8] = b"APRE\0PC1";

pub fn write_results_jsonl<W: Write>(mut w: W, results: &[TrialResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results_jsonl<R: BufRead>(r: R) -> Result<Vec<TrialResult>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(w: W, reports: &[BatchReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "variant",
        "config_digest",
        "n_total",
        "n_success",
        "asr",
        "asr_ci_lo",
        "asr_ci_hi",
        "d_min_mean",
        "d_min_std",
        "tnl_mean",
        "tnl_std",
        "tnl_n",
        "energy_mean",
        "energy_std",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend(Quadrant::ALL.iter().map(|q| format!("asr_{}", q.as_str())));
    out.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.variant.to_string(),
            r.config_digest.clone(),
            r.n_total.to_string(),
            r.n_success.to_string(),
            format!("{}", r.asr),
            format!("{}", r.asr_ci.0),
            format!("{}", r.asr_ci.1),
            opt(r.d_min.mean),
            opt(r.d_min.std),
            opt(r.tnl.mean),
            opt(r.tnl.std),
            r.tnl.n.to_string(),
            opt(r.energy.mean),
            opt(r.energy.std),
        ];
        row.extend(Quadrant::ALL.iter().map(|q| opt(r.quadrant_asr(*q))));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw: f64,
    pub beta: f64,
    #[serde(rename = "T_fused")]
    pub t_fused: f64,
    pub target_id: Option<u32>,
    pub d_clear: f64,
}

impl From<&StepLog> for StepRow {
    fn from(s: &StepLog) -> Self {
        Self {
            t: s.t,
            px: s.position.x,
            py: s.position.y,
            pz: s.position.z,
            vx: s.velocity.x,
            vy: s.velocity.y,
            yaw: s.yaw,
            beta: s.beta,
            t_fused: s.threat_fused,
            target_id: s.target_id,
            d_clear: s.clearance,
        }
    }
}

pub fn write_step_log_csv<W: Write>(w: W, log: &[StepLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in log {
        out.serialize(StepRow::from(s))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_step_log_csv<R: Read>(r: R) -> Result<Vec<StepRow>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_clouds<W: Write>(mut w: W, clouds: &[PointCloud]) -> Result<()> {
    w.write_all(CLOUD_MAGIC)?;
    for c in clouds {
        let count = u32::try_from(c.points.len()).map_err(|_| Error::Format("cloud too large".into()))?;
        w.write_all(&c.timestamp.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        for p in &c.points {
            for x in [p.x, p.y, p.z] {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(Error::Format("truncated point-cloud record".into())),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_clouds<R: Read>(mut r: R) -> Result<Vec<PointCloud>> {
    let mut magic = [0u8; 8];
    if !read_exact_or_eof(&mut r, &mut magic)? || &magic != CLOUD_MAGIC {
        return Err(Error::Format("bad point-cloud magic".into()));
    }
    let mut clouds = Vec::new();
    let mut head = [0u8; 12];
    while read_exact_or_eof(&mut r, &mut head)? {
        let t = f64::from_le_bytes(head[..8].try_into().expect("8 bytes"));
        let count = u32::from_le_bytes(head[8..].try_into().expect("4 bytes")) as usize;
        let mut body = vec![0u8; count * 12];
        if count > 0 && !read_exact_or_eof(&mut r, &mut body)? {
            return Err(Error::Format("truncated point-cloud record".into()));
        }
        let f = |i: usize| f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
        let points = (0..count).map(|k| Vec3::new(f(3 * k), f(3 * k + 1), f(3 * k + 2))).collect();
        clouds.push(PointCloud::new(t, points));
    }
    Ok(clouds)
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    t: f64,
    class: String,
    u_min: f64,
    v_min: f64,
    u_max: f64,
    v_max: f64,
    conf: f64,
}

pub fn write_detections_csv<W: Write>(w: W, dets: &[Detection2D]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for d in dets {
        let [u_min, v_min, u_max, v_max] = d.bbox;
        out.serialize(DetectionRow {
            t: d.time,
            class: d.class.clone(),
            u_min,
            v_min,
            u_max,
            v_max,
            conf: d.confidence,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_detections_csv<R: Read>(r: R) -> Result<Vec<Detection2D>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: DetectionRow = row?;
        let d = Detection2D {
            class: row.class,
            bbox: [row.u_min, row.v_min, row.u_max, row.v_max],
            confidence: row.conf,
            time: row.t,
        };
        let [u0, v0, u1, v1] = d.bbox;
        let ordered = u0 < u1 && v0 < v1 && d.bbox.iter().all(|x| x.is_finite());
        if !ordered || !(0.0..=1.0).contains(&d.confidence) || !d.time.is_finite() {
            return Err(Error::Format(format!("invalid detection at t={}", row.t)));
        }
        out.push(d);
    }
    Ok(out)
}
