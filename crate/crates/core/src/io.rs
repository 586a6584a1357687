//! CSV export and import of scenes, plans, outage reports and SIC traces.
//!
//! Schemas (header row first):
//!
//! | file       | columns                                                  |
//! |------------|----------------------------------------------------------|
//! | positions  | `user_id,x_m,y_m`                                        |
//! | gains      | `user_id,base_id,gain_db`                                |
//! | plan       | `user_id,serving_base,mdiv_bases,power_mw,rate_bps_hz`   |
//! | outage     | `user_id,rate,outage_bound,clamp_count,enum_mode`        |
//! | trace      | `base,iter,user,sinr_db,rate,success`                    |
//!
//! `gain_db` is the noise-normalized gain `g_{k,b}` in dB. `mdiv_bases`
//! lists base ids separated by `;`.

use crate::analysis::OutageReport;
use crate::channel::{ChannelParams, NetworkScene};
use crate::controller::Plan;
use crate::error::{Error, Result};
use crate::sic::SicTrace;
use crate::units::{db_to_linear, linear_to_db};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Serialize, Deserialize)]
struct PositionRow {
    user_id: usize,
    x_m: f64,
    y_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GainRow {
    user_id: usize,
    base_id: usize,
    gain_db: f64,
}

#[derive(Debug, Serialize)]
struct PlanRow {
    user_id: usize,
    serving_base: usize,
    mdiv_bases: String,
    power_mw: f64,
    rate_bps_hz: f64,
}

#[derive(Debug, Serialize)]
struct OutageRow<'a> {
    user_id: usize,
    rate: f64,
    outage_bound: f64,
    clamp_count: usize,
    enum_mode: &'a str,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    base: usize,
    iter: usize,
    user: usize,
    sinr_db: f64,
    rate: f64,
    success: bool,
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_positions<W: Write>(scene: &NetworkScene, w: W) -> Result<()> {
    write_rows(
        w,
        scene.user_positions.iter().enumerate().map(|(k, p)| PositionRow { user_id: k, x_m: p[0], y_m: p[1] }),
    )
}

pub fn write_gains<W: Write>(scene: &NetworkScene, w: W) -> Result<()> {
    if !scene.has_gains() {
        return Err(Error::Domain("scene has no macro state".into()));
    }
    write_rows(
        w,
        scene.gains.iter().enumerate().flat_map(|(k, row)| {
            row.iter().enumerate().map(move |(b, &g)| GainRow { user_id: k, base_id: b, gain_db: linear_to_db(g) })
        }),
    )
}

/// Rebuilds a scene from exported positions and gains. Base positions
/// come from `params`.
pub fn read_scene<P: Read, G: Read>(positions: P, gains: G, params: &ChannelParams) -> Result<NetworkScene> {
    params.validate()?;
    let mut pos: Vec<PositionRow> = csv::Reader::from_reader(positions).deserialize().collect::<std::result::Result<_, _>>()?;
    pos.sort_by_key(|r| r.user_id);
    if pos.iter().enumerate().any(|(i, r)| r.user_id != i) {
        return Err(Error::Config("user ids in the positions file must be 0..K".into()));
    }
    let k = pos.len();
    let n_b = params.n_bases;
    let mut g = vec![vec![f64::NAN; n_b]; k];
    for row in csv::Reader::from_reader(gains).deserialize::<GainRow>() {
        let row = row?;
        if row.user_id >= k || row.base_id >= n_b {
            return Err(Error::Config(format!("gain row ({}, {}) out of range", row.user_id, row.base_id)));
        }
        if !row.gain_db.is_finite() {
            return Err(Error::Config(format!("gain of user {} at base {} is not finite", row.user_id, row.base_id)));
        }
        g[row.user_id][row.base_id] = db_to_linear(row.gain_db);
    }
    if g.iter().flatten().any(|x| x.is_nan()) {
        return Err(Error::Config("gains file does not cover every user and base".into()));
    }
    Ok(NetworkScene {
        base_positions: params.base_positions(),
        user_positions: pos.iter().map(|r| [r.x_m, r.y_m]).collect(),
        gains: g,
    })
}

pub fn write_plan<W: Write>(plan: &Plan, w: W) -> Result<()> {
    write_rows(
        w,
        (0..plan.n_users()).map(|k| PlanRow {
            user_id: k,
            serving_base: plan.assoc.serving[k],
            mdiv_bases: plan.mdiv[k].iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";"),
            power_mw: plan.power[k],
            rate_bps_hz: plan.rates[k],
        }),
    )
}

pub fn write_outage_report<W: Write>(report: &OutageReport, w: W) -> Result<()> {
    write_rows(
        w,
        report.users.iter().map(|u| OutageRow {
            user_id: u.user,
            rate: u.rate,
            outage_bound: u.bound,
            clamp_count: u.clamp_count,
            enum_mode: &u.enum_mode,
        }),
    )
}

pub fn write_trace<W: Write>(traces: &[SicTrace], w: W) -> Result<()> {
    write_rows(
        w,
        traces.iter().flat_map(|t| {
            t.steps.iter().enumerate().map(move |(i, s)| TraceRow {
                base: t.base,
                iter: i + 1,
                user: s.user,
                sinr_db: linear_to_db(s.sinr),
                rate: s.rate,
                success: s.success,
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{AnalysisConfig, OutageAnalyzer};
    use crate::channel::{draw_fading, draw_macro, place_users};
    use crate::controller::{associate_users, mdiv_assign, MdivThreshold};
    use crate::rng::stream;
    use crate::sic::{simulate_realization, DecodeMode};

    fn scene() -> (ChannelParams, NetworkScene) {
        let p = ChannelParams::default();
        let mut rng = stream(3, &[0]);
        let s = place_users(&p, 5, &mut rng).unwrap();
        let s = draw_macro(&s, &p, &mut rng).unwrap();
        (p, s)
    }

    fn text(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let (p, s) = scene();
        let pos = text(|b| write_positions(&s, b));
        let gains = text(|b| write_gains(&s, b));
        assert!(pos.starts_with("user_id,x_m,y_m\n"));
        assert!(gains.starts_with("user_id,base_id,gain_db\n"));
        assert_eq!(gains.lines().count(), 1 + 5 * 2);
        let back = read_scene(pos.as_bytes(), gains.as_bytes(), &p).unwrap();
        assert_eq!(back.user_positions, s.user_positions);
        assert_eq!(back.base_positions, s.base_positions);
        for (a, b) in back.gains.iter().flatten().zip(s.gains.iter().flatten()) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn incomplete_gains_rejected() {
        let (p, s) = scene();
        let pos = text(|b| write_positions(&s, b));
        let gains = "user_id,base_id,gain_db\n0,0,10\n";
        assert!(read_scene(pos.as_bytes(), gains.as_bytes(), &p).is_err());
        let gains = "user_id,base_id,gain_db\n0,7,10\n";
        assert!(read_scene(pos.as_bytes(), gains.as_bytes(), &p).is_err());
    }

    #[test]
    fn plan_report_and_trace_headers() {
        let (_, s) = scene();
        let a = associate_users(&s).unwrap();
        let m = mdiv_assign(&s, &a, MdivThreshold::Db(f64::INFINITY)).unwrap();
        let mut plan = Plan::new(a, m, 1.0);
        plan.rates = vec![0.5; 5];
        let csv = text(|b| write_plan(&plan, b));
        assert!(csv.starts_with("user_id,serving_base,mdiv_bases,power_mw,rate_bps_hz\n"));
        assert!(csv.lines().nth(1).unwrap().contains("0;1"));

        let an = OutageAnalyzer::new(&plan, &s, &AnalysisConfig::default()).unwrap();
        let csv = text(|b| write_outage_report(&an.report(), b));
        assert!(csv.starts_with("user_id,rate,outage_bound,clamp_count,enum_mode\n"));
        assert_eq!(csv.lines().count(), 6);

        let f = draw_fading(5, 2, &mut stream(3, &[1])).unwrap();
        let (_, traces) = simulate_realization(&plan, &s, &f, DecodeMode::FullPropagation).unwrap();
        let csv = text(|b| write_trace(&traces, b));
        assert!(csv.starts_with("base,iter,user,sinr_db,rate,success\n"));
        assert_eq!(csv.lines().count(), 1 + 10);
    }
}
