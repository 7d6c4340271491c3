//! Ship routes, Rice exceedance bounds and fatigue damage.
//!
//! All exceedance quantities live on the log scale of `H_s`; fatigue works
//! on metres.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_ingest::{GridDataset, MarginalStats};
use crate::deformation::DeformParams;
use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_pdf};
use crate::Point;

/// Polyline route sampled at waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub points: Vec<Point>,
    /// Speed in m/s; segment `i` is sailed at `speed[i]`.
    pub speed: Vec<f64>,
    /// Ship heading in radians at each waypoint.
    pub headings: Vec<f64>,
    /// Direction of wave propagation in radians at each waypoint.
    pub wave_direction: Vec<f64>,
    /// Seconds since departure.
    pub timestamps: Vec<f64>,
}

fn circular_mean(a: f64, b: f64) -> f64 {
    (a.sin() + b.sin()).atan2(a.cos() + b.cos())
}

impl Route {
    /// Builds a route. Segment lengths in metres default to the Euclidean
    /// distance times `metres_per_unit`; headings default to the mean of the
    /// adjacent segment directions; wave directions default to the heading.
    pub fn new(
        points: Vec<Point>,
        speed: Vec<f64>,
        headings: Option<Vec<f64>>,
        wave_direction: Option<Vec<f64>>,
        segment_lengths: Option<Vec<f64>>,
        metres_per_unit: f64,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("a route needs at least one waypoint"));
        }
        if speed.len() != n {
            return Err(Error::invalid("one speed value per waypoint is required"));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("waypoints {i} and {} coincide", i + 1)));
        }
        if !(metres_per_unit > 0.0) {
            return Err(Error::invalid("the length scale must be positive"));
        }
        let lengths = match segment_lengths {
            Some(l) => {
                if l.len() + 1 != n && !(n == 1 && l.is_empty()) {
                    return Err(Error::invalid("expected one segment length per consecutive waypoint pair"));
                }
                l
            }
            None => points.windows(2).map(|w| (w[1] - w[0]).norm() * metres_per_unit).collect(),
        };
        let mut timestamps = vec![0.0; n];
        for i in 0..n - 1 {
            if !(speed[i] > 0.0) || !(lengths[i] > 0.0) {
                return Err(Error::invalid(format!("segment {i} needs positive speed and length")));
            }
            timestamps[i + 1] = timestamps[i] + lengths[i] / speed[i];
        }
        let headings = match headings {
            Some(h) if h.len() == n => h,
            Some(_) => return Err(Error::invalid("one heading per waypoint is required")),
            None => {
                let dirs: Vec<f64> = points.windows(2).map(|w| (w[1].y - w[0].y).atan2(w[1].x - w[0].x)).collect();
                (0..n)
                    .map(|i| match (i.checked_sub(1).and_then(|j| dirs.get(j)), dirs.get(i)) {
                        (Some(&a), Some(&b)) => circular_mean(a, b),
                        (Some(&a), None) | (None, Some(&a)) => a,
                        (None, None) => 0.0,
                    })
                    .collect()
            }
        };
        let wave_direction = match wave_direction {
            Some(w) if w.len() == n => w,
            Some(_) => return Err(Error::invalid("one wave direction per waypoint is required")),
            None => headings.clone(),
        };
        Ok(Route {
            points,
            speed,
            headings,
            wave_direction,
            timestamps,
        })
    }

    /// Straight route from `a` to `b` with `n` evenly spaced waypoints.
    pub fn straight(a: Point, b: Point, n: usize, speed: f64, metres_per_unit: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("a straight route needs two waypoints"));
        }
        let pts = (0..n).map(|i| a + (b - a) * (i as f64 / (n - 1) as f64)).collect();
        Route::new(pts, vec![speed; n], None, None, None, metres_per_unit)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total sailing time in seconds.
    pub fn duration(&self) -> f64 {
        *self.timestamps.last().unwrap()
    }

    /// Velocity in coordinate units per second, by differences of
    /// neighbouring waypoints.
    pub fn velocities(&self) -> Vec<nalgebra::Vector2<f64>> {
        let n = self.len();
        if n < 2 {
            return vec![nalgebra::Vector2::zeros(); n];
        }
        (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (self.points[b] - self.points[a]) / (self.timestamps[b] - self.timestamps[a])
            })
            .collect()
    }

    /// The same path sailed backwards; headings turn by π and wave
    /// directions stay fixed in space.
    pub fn reversed(&self) -> Route {
        let n = self.len();
        let t = self.duration();
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        let mut speed = rev(&self.speed);
        if n > 1 {
            // segment speeds shift by one when the direction flips
            speed = (0..n).map(|i| self.speed[(n - 2).saturating_sub(i)]).collect();
        }
        Route {
            points: self.points.iter().rev().copied().collect(),
            speed,
            headings: self
                .headings
                .iter()
                .rev()
                .map(|h| (h + std::f64::consts::PI).sin().atan2((h + std::f64::consts::PI).cos()))
                .collect(),
            wave_direction: rev(&self.wave_direction),
            timestamps: self.timestamps.iter().rev().map(|s| t - s).collect(),
        }
    }

    /// Joins `other` after `self`; the last waypoint of `self` must equal
    /// the first of `other` and is taken from `other`.
    pub fn concat(&self, other: &Route) -> Result<Route> {
        if self.points.last() != other.points.first() {
            return Err(Error::invalid("routes do not meet"));
        }
        let m = self.len() - 1;
        let t = self.duration();
        let join = |a: &[f64], b: &[f64]| a[..m].iter().chain(b).copied().collect::<Vec<_>>();
        Ok(Route {
            points: self.points[..m].iter().chain(&other.points).copied().collect(),
            speed: join(&self.speed, &other.speed),
            headings: join(&self.headings, &other.headings),
            wave_direction: join(&self.wave_direction, &other.wave_direction),
            timestamps: self.timestamps[..m]
                .iter()
                .copied()
                .chain(other.timestamps.iter().map(|s| s + t))
                .collect(),
        })
    }

    /// Reads a route CSV with header columns `x, y` and optional `speed`
    /// (default 10 m/s), `heading`, `wave_direction` and `seg_len` (metres
    /// to the next waypoint).
    pub fn load_csv(path: &Path, metres_per_unit: f64) -> Result<Route> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_err(1, e.to_string()))?;
        let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(cx), Some(cy)) = (col("x"), col("y")) else {
            return Err(parse_err(1, "route files need x and y columns".into()));
        };
        let (cs, ch, cw, cl) = (col("speed"), col("heading"), col("wave_direction"), col("seg_len"));
        let mut pts = Vec::new();
        let mut speed = Vec::new();
        let (mut hd, mut wd, mut sl) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let get = |c: usize| -> Result<Option<f64>> {
                match rec.get(c).unwrap_or("") {
                    "" => Ok(None),
                    s => s
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| parse_err(line, format!("bad number {s:?}"))),
                }
            };
            let need = |c: usize, name: &str| get(c)?.ok_or_else(|| parse_err(line, format!("missing {name}")));
            pts.push(Point::new(need(cx, "x")?, need(cy, "y")?));
            speed.push(match cs {
                Some(c) => get(c)?.unwrap_or(10.0),
                None => 10.0,
            });
            if let Some(c) = ch {
                hd.push(need(c, "heading")?);
            }
            if let Some(c) = cw {
                wd.push(need(c, "wave_direction")?);
            }
            if let Some(c) = cl {
                if let Some(v) = get(c)? {
                    sl.push(v);
                }
            }
        }
        Route::new(
            pts,
            speed,
            ch.map(|_| hd),
            cw.map(|_| wd),
            cl.map(|_| sl),
            metres_per_unit,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,speed,heading,wave_direction,t\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.points[i].x,
                self.points[i].y,
                self.speed[i],
                self.headings[i],
                self.wave_direction[i],
                self.timestamps[i]
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShipConstants {
    pub c: f64,
    pub beta: f64,
    pub gamma_fatigue: f64,
    pub g: f64,
}

impl Default for ShipConstants {
    fn default() -> Self {
        ShipConstants {
            c: 20.0,
            beta: 3.0,
            gamma_fatigue: 10f64.powf(12.73),
            g: 9.81,
        }
    }
}

impl ShipConstants {
    pub fn validate(&self) -> Result<()> {
        if [self.c, self.beta, self.gamma_fatigue, self.g].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("ship constants must be positive"))
        }
    }
}

/// Standard deviation of the derivative of the standardised field along the
/// route at each waypoint.
pub fn sigma_wdot(route: &Route, params: &DeformParams) -> Result<Vec<f64>> {
    let nu = params.nu();
    if nu <= 1.0 {
        return Err(Error::NotDifferentiable { nu });
    }
    Ok(route
        .velocities()
        .iter()
        .zip(&route.points)
        .map(|(v, p)| sigma_wdot_at(v, &params.eval_anisotropy(p).h, params.eval_anisotropy(p).kappa, nu))
        .collect())
}

/// `κ²/(2(ν−1))·ṡᵀH⁻¹ṡ`.
pub fn sigma2_wdot_at(v: &nalgebra::Vector2<f64>, h: &nalgebra::Matrix2<f64>, kappa: f64, nu: f64) -> f64 {
    let hinv = h.try_inverse().unwrap_or_else(|| nalgebra::Matrix2::from_element(f64::NAN));
    (kappa * kappa / (2.0 * (nu - 1.0)) * v.dot(&(hinv * v))).max(0.0)
}

pub fn sigma_wdot_at(v: &nalgebra::Vector2<f64>, h: &nalgebra::Matrix2<f64>, kappa: f64, nu: f64) -> f64 {
    sigma2_wdot_at(v, h, kappa, nu).sqrt()
}

/// `E|Z + a|` for `Z ~ N(0, σ²)`.
pub fn folded_normal_mean(a: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return a.abs();
    }
    2.0 * sigma * normal_pdf(a / sigma) + a * (1.0 - 2.0 * normal_cdf(-a / sigma))
}

/// Quadrature weights at waypoints: half of each adjacent segment duration.
fn waypoint_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i + 1 < n { t[i + 1] - t[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Time derivative by differences of neighbouring waypoints.
fn route_derivative(f: &[f64], t: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (f[b] - f[a]) / (t[b] - t[a])
        })
        .collect()
}

fn rice_sum(route: &Route, mu: &[f64], sd: &[f64], sigma_wdot: &[f64], u: f64, upcrossings: bool) -> Result<f64> {
    let n = route.len();
    if mu.len() != n || sd.len() != n || sigma_wdot.len() != n {
        return Err(Error::invalid("one mean, sd and derivative scale per waypoint is required"));
    }
    if route.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("route timestamps must increase"));
    }
    if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("mean and sd along the route must be finite with sd > 0"));
    }
    let t = &route.timestamps;
    let dmu = route_derivative(mu, t);
    let dsd = route_derivative(sd, t);
    let w = waypoint_weights(t);
    let mut total = normal_cdf((mu[0] - u) / sd[0]);
    for i in 0..n {
        let z = (u - mu[i]) / sd[i];
        let a = z / sd[i] * dsd[i] + dmu[i] / sd[i];
        let s = sigma_wdot[i];
        let first = if s > 0.0 { s * normal_pdf(a / s) } else { 0.0 };
        let second = match (s > 0.0, upcrossings) {
            (true, false) => 0.5 * a * (2.0 * normal_cdf(a / s) - 1.0),
            (true, true) => a * normal_cdf(a / s),
            (false, false) => 0.5 * a.abs(),
            (false, true) => a.max(0.0),
        };
        total += w[i] * (first + second) * normal_pdf(z);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Bound on `P(max_t X(t) > u)` for log `H_s` along the route from half the
/// expected number of level crossings, given the mean `mu`, standard
/// deviation `sd` and derivative scale `sigma_wdot` at each waypoint.
/// Clipped to `[0, 1]`.
///
/// Half the crossing count undercounts upcrossings when the exceedance
/// probability grows along the route, so this is not an upper bound there;
/// see [`upcrossing_bound_with`].
pub fn exceedance_bound_with(route: &Route, mu: &[f64], sd: &[f64], sigma_wdot: &[f64], u: f64) -> Result<f64> {
    rice_sum(route, mu, sd, sigma_wdot, u, false)
}

/// `P(X(0) > u) + E[N⁺_u]` with the expected upcrossing count from Rice's
/// formula. Exceeds [`exceedance_bound_with`] by `½∫ a φ(z) dt`, which is
/// `½(P(X(T) > u) − P(X(0) > u))` up to quadrature error.
pub fn upcrossing_bound_with(route: &Route, mu: &[f64], sd: &[f64], sigma_wdot: &[f64], u: f64) -> Result<f64> {
    rice_sum(route, mu, sd, sigma_wdot, u, true)
}

/// [`exceedance_bound_with`] with the derivative scale from `params`.
pub fn exceedance_bound(route: &Route, mu: &[f64], sd: &[f64], params: &DeformParams, u: f64) -> Result<f64> {
    exceedance_bound_with(route, mu, sd, &sigma_wdot(route, params)?, u)
}

/// Grid location index of the cell containing each waypoint; errors on land.
pub fn route_locations(route: &Route, data: &GridDataset) -> Result<Vec<usize>> {
    let map = data.location_of_cell();
    let nearest = |axis: &[f64], v: f64| {
        (0..axis.len())
            .min_by(|&a, &b| (axis[a] - v).abs().total_cmp(&(axis[b] - v).abs()))
            .unwrap()
    };
    route
        .points
        .iter()
        .map(|p| {
            let cell = nearest(&data.grid.lat, p.y) * data.grid.nx + nearest(&data.grid.lon, p.x);
            map[cell].ok_or_else(|| Error::invalid(format!("waypoint ({}, {}) lies on a land cell", p.x, p.y)))
        })
        .collect()
}

/// Marginal mean and sd of each waypoint's location.
pub fn route_marginals(locs: &[usize], stats: &MarginalStats) -> (Vec<f64>, Vec<f64>) {
    (
        locs.iter().map(|&j| stats.mean[j]).collect(),
        locs.iter().map(|&j| stats.sd[j]).collect(),
    )
}

/// Fraction of replicates whose route maximum exceeds each threshold.
pub fn empirical_exceedance(replicates: &[Vec<f64>], u_grid: &[f64]) -> Result<Vec<f64>> {
    if replicates.is_empty() {
        return Err(Error::invalid("no replicates"));
    }
    let maxima: Vec<f64> = replicates
        .iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let k = maxima.len() as f64;
    Ok(u_grid
        .iter()
        .map(|&u| maxima.iter().filter(|&&m| m > u).count() as f64 / k)
        .collect())
}

/// Instantaneous damage rate before clamping.
pub fn fatigue_rate_raw(h_s: f64, v: f64, theta: f64, consts: &ShipConstants) -> Result<f64> {
    if !(h_s > 0.0) || !h_s.is_finite() {
        return Err(Error::invalid(format!("significant wave height {h_s} must be positive")));
    }
    let tz = 3.75 * h_s.sqrt();
    let amp = 0.47 * consts.c.powf(consts.beta) * h_s.powf(consts.beta) / consts.gamma_fatigue;
    Ok(amp * (1.0 / tz - 2.0 * std::f64::consts::PI * v * theta.cos() / (consts.g * tz * tz)))
}

/// Instantaneous damage rate per second, clamped at zero.
pub fn fatigue_rate(h_s: f64, v: f64, theta: f64, consts: &ShipConstants) -> Result<f64> {
    Ok(fatigue_rate_raw(h_s, v, theta, consts)?.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Damage {
    pub total: f64,
    /// Segments whose raw rate was negative.
    pub clamped: usize,
}

/// Left-rectangle sum of the damage rate over the route segments, with the
/// angle of attack `heading − wave_direction`.
pub fn accumulated_damage(route: &Route, h_s: &[f64], consts: &ShipConstants) -> Result<Damage> {
    if h_s.len() != route.len() {
        return Err(Error::invalid(format!(
            "{} wave heights for {} waypoints",
            h_s.len(),
            route.len()
        )));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for i in 0..route.len().saturating_sub(1) {
        let theta = route.headings[i] - route.wave_direction[i];
        let d = fatigue_rate_raw(h_s[i], route.speed[i], theta, consts)?;
        if d < 0.0 {
            clamped += 1;
        }
        total += d.max(0.0) * (route.timestamps[i + 1] - route.timestamps[i]);
    }
    Ok(Damage { total, clamped })
}

/// Accumulated damage for each replicate (rows over waypoints, metres).
pub fn damage_distribution(replicates: &[Vec<f64>], route: &Route, consts: &ShipConstants) -> Result<Vec<f64>> {
    replicates
        .par_iter()
        .map(|r| accumulated_damage(route, r, consts).map(|d| d.total))
        .collect()
}

/// Linear-interpolation quantile of sorted data at probability `p`.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let x = p * (v.len() - 1) as f64;
    let i = x.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] + (x - i as f64) * (v[i + 1] - v[i])
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Paired quantiles `(sample, reference)` at the plotting positions of the
/// smaller sample.
pub fn qq_pairs(sample: &[f64], reference: &[f64]) -> Vec<(f64, f64)> {
    if sample.is_empty() || reference.is_empty() {
        return Vec::new();
    }
    let (a, b) = (sorted(sample), sorted(reference));
    let m = a.len().min(b.len());
    (0..m)
        .map(|i| {
            let p = if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
            (quantile_sorted(&a, p), quantile_sorted(&b, p))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub p: f64,
    pub data: f64,
    pub sim_min: f64,
    pub sim_max: f64,
}

/// Quantiles of `data` with the pointwise range of the same quantiles over
/// the simulated samples.
pub fn quantile_envelope(data: &[f64], sims: &[Vec<f64>]) -> Result<Vec<EnvelopeRow>> {
    if data.len() < 2 || sims.is_empty() || sims.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("the envelope needs at least two data values and non-empty simulations"));
    }
    let d = sorted(data);
    let ss: Vec<Vec<f64>> = sims.iter().map(|s| sorted(s)).collect();
    Ok((0..d.len())
        .map(|i| {
            let p = i as f64 / (d.len() - 1) as f64;
            let q: Vec<f64> = ss.iter().map(|s| quantile_sorted(s, p)).collect();
            EnvelopeRow {
                p,
                data: d[i],
                sim_min: q.iter().copied().fold(f64::INFINITY, f64::min),
                sim_max: q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

/// Sample variance (n − 1).
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}
