//! Raw per-modality samples, as produced by the radio/IMU layer.

#[derive(Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub step: bool,
    /// Heading in radians.
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApReading {
    pub bssid: String,
    pub rssi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WifiScan {
    pub t: f64,
    pub readings: Vec<ApReading>,
}

impl WifiScan {
    /// Strongest reading, ties broken by BSSID.
    pub fn strongest(&self) -> Option<&ApReading> {
        self.readings.iter().max_by(|a, b| {
            a.rssi
                .total_cmp(&b.rssi)
                .then_with(|| b.bssid.cmp(&a.bssid))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSample {
    pub t: f64,
    pub cell_id: String,
    pub rsrp: f64,
    pub rsrq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnssSample {
    pub t: f64,
    pub snr: f64,
    pub satellites: u32,
    pub fix: bool,
}

/// Samples for one summarization window.
///
/// `imu` and `gnss` cover the window itself. `wifi` and `cell` carry a
/// trailing lookback so slope and change features have history; the last
/// element is the most recent sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawWindow {
    pub start: f64,
    pub duration: f64,
    pub hour_of_day: f64,
    pub imu: Vec<ImuSample>,
    pub wifi: Vec<WifiScan>,
    pub cell: Vec<CellSample>,
    pub gnss: Vec<GnssSample>,
}
