//! Path loss and the spectral-efficiency radial basis functions.
//!
//! Every base station acts as one RBF "neuron": its SE at a location is
//! `log2(1 + (P / B_max) / (σ² L(d)))`, and the network capacity lower bound
//! is the bandwidth-weighted sum of those neurons.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// `L = γ·[(ℒ−ℒ_n)ᵀ Γ (ℒ−ℒ_n)]^{α/2} + β`, all linear (not dB).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Symmetric positive definite; identity gives the isotropic model.
    pub shape: [[f64; 2]; 2],
}

pub const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

impl PathLossParams {
    pub fn isotropic(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            shape: IDENTITY,
        }
    }

    /// Linear form of `intercept_db + 10·exponent·log10(d)`, with the
    /// offset β set to the 1 m value so the loss stays bounded at d = 0.
    pub fn from_db_model(intercept_db: f64, exponent: f64) -> Self {
        let gamma = 10f64.powf(intercept_db / 10.0);
        Self::isotropic(exponent, gamma, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 2.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("path-loss exponent must exceed 2, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("path-loss offset must be positive, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("path-loss scale must be positive, got {}", self.gamma)));
        }
        let [[a, b], [c, d]] = self.shape;
        if (b - c).abs() > 1e-12 * (1.0 + b.abs().max(c.abs())) {
            return Err(invalid("path-loss shape matrix must be symmetric"));
        }
        if !(a > 0.0 && a * d - b * c > 0.0) {
            return Err(invalid("path-loss shape matrix must be positive definite"));
        }
        Ok(())
    }

    /// Quadratic form `δᵀΓδ`.
    #[inline]
    pub fn quad_form(&self, dx: f64, dy: f64) -> f64 {
        let [[a, b], [_, d]] = self.shape;
        a * dx * dx + 2.0 * b * dx * dy + d * dy * dy
    }

    /// Loss as a function of the quadratic form value.
    #[inline]
    pub fn loss_from_quad(&self, q: f64) -> f64 {
        if q <= 0.0 {
            self.beta
        } else {
            self.gamma * q.powf(0.5 * self.alpha) + self.beta
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub location: Point2D,
    /// Hz
    pub bandwidth: f64,
    /// W
    pub tx_power: f64,
    pub loss: PathLossParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDesign {
    pub stations: Vec<BaseStation>,
}

impl NetworkDesign {
    pub fn new(stations: Vec<BaseStation>) -> Result<Self> {
        let design = Self { stations };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.is_empty() {
            return Err(invalid("a design needs at least one base station"));
        }
        for (n, bs) in self.stations.iter().enumerate() {
            if !bs.location.is_finite() {
                return Err(invalid(format!("station {n} has a non-finite location")));
            }
            if !(bs.bandwidth >= 0.0 && bs.bandwidth.is_finite()) {
                return Err(invalid(format!("station {n} bandwidth {} is invalid", bs.bandwidth)));
            }
            if !(bs.tx_power >= 0.0 && bs.tx_power.is_finite()) {
                return Err(invalid(format!("station {n} power {} is invalid", bs.tx_power)));
            }
            bs.loss.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn total_bandwidth(&self) -> f64 {
        self.stations.iter().map(|s| s.bandwidth).sum()
    }

    pub fn total_tx_power(&self) -> f64 {
        self.stations.iter().map(|s| s.tx_power).sum()
    }
}

/// Scenario-level constants every capacity evaluation needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkConstants {
    /// Hz
    pub b_max: f64,
    /// W/Hz
    pub noise_psd: f64,
}

/// Which capacity expression to evaluate per location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityModel {
    /// `Σ B_n S_n` with `B_max` inside the SNR (what the optimizer sees).
    LowerBound,
    /// `Σ B_n log2(1 + P_n/(L σ² B_n))`.
    Exact,
}

pub fn path_loss(loc: Point2D, bs_loc: Point2D, params: &PathLossParams) -> Result<f64> {
    if !loc.is_finite() || !bs_loc.is_finite() {
        return Err(invalid("non-finite coordinate in path-loss evaluation"));
    }
    let q = params.quad_form(loc.x - bs_loc.x, loc.y - bs_loc.y);
    Ok(params.loss_from_quad(q))
}

#[inline]
pub(crate) fn se_from_loss(tx_power: f64, loss: f64, link: &LinkConstants) -> f64 {
    let snr = tx_power / (link.b_max * link.noise_psd * loss);
    snr.ln_1p() / std::f64::consts::LN_2
}

pub fn se_rbf(bs: &BaseStation, loc: Point2D, link: &LinkConstants) -> Result<f64> {
    check_link(link)?;
    let loss = path_loss(loc, bs.location, &bs.loss)?;
    Ok(se_from_loss(bs.tx_power, loss, link))
}

pub fn capacity_lower_bound(design: &NetworkDesign, loc: Point2D, link: &LinkConstants) -> Result<f64> {
    check_link(link)?;
    let mut total = 0.0;
    for bs in &design.stations {
        let loss = path_loss(loc, bs.location, &bs.loss)?;
        total += bs.bandwidth * se_from_loss(bs.tx_power, loss, link);
    }
    Ok(total)
}

pub fn capacity_exact(design: &NetworkDesign, loc: Point2D, link: &LinkConstants) -> Result<f64> {
    check_link(link)?;
    let mut total = 0.0;
    for bs in &design.stations {
        if bs.bandwidth <= 0.0 {
            continue;
        }
        let loss = path_loss(loc, bs.location, &bs.loss)?;
        let snr = bs.tx_power / (loss * link.noise_psd * bs.bandwidth);
        total += bs.bandwidth * snr.ln_1p() / std::f64::consts::LN_2;
    }
    Ok(total)
}

pub fn capacity(design: &NetworkDesign, loc: Point2D, link: &LinkConstants, model: CapacityModel) -> Result<f64> {
    match model {
        CapacityModel::LowerBound => capacity_lower_bound(design, loc, link),
        CapacityModel::Exact => capacity_exact(design, loc, link),
    }
}

fn check_link(link: &LinkConstants) -> Result<()> {
    if !(link.b_max > 0.0 && link.noise_psd > 0.0) {
        return Err(invalid("b_max and noise_psd must be positive"));
    }
    Ok(())
}

/// W/Hz from dBm/Hz.
pub fn dbm_per_hz_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn dbw_to_w(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

pub fn w_to_dbw(w: f64) -> f64 {
    10.0 * w.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2() -> PathLossParams {
        PathLossParams::from_db_model(35.0, 3.8)
    }

    fn link() -> LinkConstants {
        LinkConstants {
            b_max: 36e9,
            noise_psd: dbm_per_hz_to_w(-174.0),
        }
    }

    fn station(x: f64, y: f64, bandwidth: f64, tx_power: f64) -> BaseStation {
        BaseStation {
            location: Point2D::new(x, y),
            bandwidth,
            tx_power,
            loss: table2(),
        }
    }

    #[test]
    fn zero_distance_gives_offset() {
        let p = table2();
        let l = path_loss(Point2D::new(3.0, 4.0), Point2D::new(3.0, 4.0), &p).unwrap();
        assert_eq!(l, p.beta);
    }

    #[test]
    fn table2_model_at_100m() {
        let mut p = table2();
        p.beta = 1e-300;
        let l = path_loss(Point2D::new(100.0, 0.0), Point2D::new(0.0, 0.0), &p).unwrap();
        let expected = 10f64.powf(11.1);
        assert!((l / expected - 1.0).abs() < 1e-12, "{l} vs {expected}");
    }

    #[test]
    fn anisotropic_shape_matches_scaled_distance() {
        let iso = table2();
        let mut aniso = iso;
        aniso.shape = [[4.0, 0.0], [0.0, 4.0]];
        let r = 37.5;
        let a = path_loss(Point2D::new(r, 0.0), Point2D::new(0.0, 0.0), &aniso).unwrap();
        let b = path_loss(Point2D::new(2.0 * r, 0.0), Point2D::new(0.0, 0.0), &iso).unwrap();
        assert!((a / b - 1.0).abs() < 1e-13);
    }

    #[test]
    fn isotropic_matches_closed_form() {
        let p = table2();
        for d in [0.5, 1.0, 17.0, 250.0, 4999.0] {
            let l = path_loss(Point2D::new(0.0, d), Point2D::new(0.0, 0.0), &p).unwrap();
            let closed = p.gamma * d.powf(p.alpha) + p.beta;
            assert!((l / closed - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let p = table2();
        assert!(path_loss(Point2D::new(f64::NAN, 0.0), Point2D::new(0.0, 0.0), &p).is_err());
        assert!(path_loss(Point2D::new(0.0, 0.0), Point2D::new(f64::INFINITY, 0.0), &p).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = table2();
        p.alpha = 2.0;
        assert!(p.validate().is_err());
        let mut p = table2();
        p.shape = [[1.0, 2.0], [2.0, 1.0]];
        assert!(p.validate().is_err());
        let mut p = table2();
        p.shape = [[1.0, 0.1], [0.0, 1.0]];
        assert!(p.validate().is_err());
    }

    #[test]
    fn se_rbf_zero_power() {
        let bs = station(0.0, 0.0, 1e9, 0.0);
        assert_eq!(se_rbf(&bs, Point2D::new(10.0, 0.0), &link()).unwrap(), 0.0);
    }

    #[test]
    fn se_rbf_regression_value() {
        // 1 W at the 10^11.1 loss point with B_max = 36 GHz and -174 dBm/Hz.
        let mut bs = station(0.0, 0.0, 1e9, 1.0);
        bs.loss.beta = 1e-300;
        let s = se_rbf(&bs, Point2D::new(100.0, 0.0), &link()).unwrap();
        assert!((s - 0.07782263145345095).abs() < 1e-12, "{s}");
    }

    #[test]
    fn se_rbf_radially_symmetric() {
        let bs = station(100.0, 100.0, 1e9, 3.0);
        let a = se_rbf(&bs, Point2D::new(130.0, 140.0), &link()).unwrap();
        let b = se_rbf(&bs, Point2D::new(50.0, 100.0), &link()).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn se_rbf_monotone_in_distance_and_power() {
        let l = link();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let d = i as f64 * 7.3;
            let s = se_rbf(&station(0.0, 0.0, 1e9, 2.0), Point2D::new(d, 0.0), &l).unwrap();
            assert!(s <= prev);
            prev = s;
        }
        let mut prev = 0.0;
        for i in 0..100 {
            let p = i as f64 * 0.37;
            let s = se_rbf(&station(0.0, 0.0, 1e9, p), Point2D::new(80.0, 0.0), &l).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn capacity_zero_cases() {
        let l = link();
        let d = NetworkDesign::new(vec![station(0.0, 0.0, 1e9, 0.0), station(50.0, 0.0, 2e9, 0.0)]).unwrap();
        assert_eq!(capacity_lower_bound(&d, Point2D::new(10.0, 0.0), &l).unwrap(), 0.0);
        let d = NetworkDesign::new(vec![station(0.0, 0.0, 0.0, 1.0), station(50.0, 0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(capacity_exact(&d, Point2D::new(10.0, 0.0), &l).unwrap(), 0.0);
    }

    #[test]
    fn single_station_bounds() {
        let l = link();
        let bs = station(0.0, 0.0, 5e9, 2.0);
        let d = NetworkDesign::new(vec![bs]).unwrap();
        let loc = Point2D::new(30.0, 40.0);
        let lb = capacity_lower_bound(&d, loc, &l).unwrap();
        assert!((lb - 5e9 * se_rbf(&bs, loc, &l).unwrap()).abs() < 1e-6);

        let full = NetworkDesign::new(vec![station(0.0, 0.0, l.b_max, 2.0)]).unwrap();
        let a = capacity_lower_bound(&full, loc, &l).unwrap();
        let b = capacity_exact(&full, loc, &l).unwrap();
        assert!((a / b - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_station_midpoint_oracle() {
        let l = LinkConstants {
            b_max: 36e9,
            noise_psd: 10f64.powf(-20.4),
        };
        let d = NetworkDesign::new(vec![station(0.0, 0.0, 10e9, 2.0), station(200.0, 0.0, 20e9, 5.0)]).unwrap();
        let c = capacity_exact(&d, Point2D::new(100.0, 0.0), &l).unwrap();
        assert!((c / 16520957851.659348 - 1.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn lower_bound_never_exceeds_exact() {
        use rand::{Rng, SeedableRng};
        let l = link();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(1..6);
            let mut stations = Vec::new();
            let mut left = l.b_max;
            for _ in 0..n {
                let b = rng.gen_range(0.0..left);
                left -= b;
                stations.push(station(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0), b, rng.gen_range(0.0..20.0)));
            }
            let d = NetworkDesign::new(stations).unwrap();
            for _ in 0..100 {
                let loc = Point2D::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
                let lb = capacity_lower_bound(&d, loc, &l).unwrap();
                let ex = capacity_exact(&d, loc, &l).unwrap();
                assert!(lb >= 0.0 && lb <= ex * (1.0 + 1e-12), "{lb} > {ex}");
            }
        }
    }
}
