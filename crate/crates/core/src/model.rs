//! Network-wide constants and the per-slot energy and age update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants shared by every device in the network. Missing fields
/// deserialize to the defaults (D = 50, B = 100, E = 10, E_min = 1, η = 0.5,
/// Δ_max = 200).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Number of devices sharing the channel.
    pub num_devices: u32,
    /// Battery capacity in energy units.
    pub battery_capacity: u32,
    /// Energy spent on every transmission attempt, acknowledgement included.
    pub tx_cost: u32,
    /// Reserve that must remain in the battery after a transmission.
    pub energy_floor: u32,
    /// Per-slot probability that one energy unit is harvested.
    pub harvest_prob: f64,
    /// Largest permissible age; a packet reaching it is discarded.
    pub aoi_max: u32,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            num_devices: 50,
            battery_capacity: 100,
            tx_cost: 10,
            energy_floor: 1,
            harvest_prob: 0.5,
            aoi_max: 200,
        }
    }
}

impl SystemParams {
    pub fn with_devices(self, num_devices: u32) -> Self {
        Self {
            num_devices,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(Error::param("num_devices", "must be at least 1"));
        }
        if self.tx_cost == 0 {
            return Err(Error::param("tx_cost", "must be at least 1"));
        }
        if self.battery_capacity <= self.energy_floor + self.tx_cost {
            return Err(Error::param(
                "battery_capacity",
                format!(
                    "battery_capacity must exceed energy_floor + tx_cost ({} <= {} + {})",
                    self.battery_capacity, self.energy_floor, self.tx_cost
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.harvest_prob) {
            return Err(Error::param(
                "harvest_prob",
                format!("must lie in [0, 1], got {}", self.harvest_prob),
            ));
        }
        if self.aoi_max == 0 {
            return Err(Error::param("aoi_max", "must be at least 1"));
        }
        Ok(())
    }

    /// Lowest battery level at which the reserve survives a transmission.
    #[inline]
    pub fn eligible_energy(&self) -> u32 {
        self.energy_floor + self.tx_cost
    }
}

/// Battery level and current age of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeviceState {
    pub energy: u32,
    pub aoi: u32,
}

impl DeviceState {
    /// Full battery, fresh packet.
    pub fn initial(params: &SystemParams) -> Self {
        Self {
            energy: params.battery_capacity,
            aoi: 1,
        }
    }
}

/// Battery level after one slot: harvest is added and clipped at capacity,
/// then the transmission cost is taken out.
pub fn update_energy(
    state: DeviceState,
    harvested: bool,
    transmitted: bool,
    params: &SystemParams,
) -> Result<u32> {
    if transmitted && state.energy < params.tx_cost {
        return Err(Error::InsufficientEnergy {
            energy: state.energy,
            tx_cost: params.tx_cost,
        });
    }
    let charged = (state.energy + u32::from(harvested)).min(params.battery_capacity);
    Ok(charged - if transmitted { params.tx_cost } else { 0 })
}

/// Next age and whether the current packet was dropped for reaching `aoi_max`.
#[inline]
pub fn update_aoi(aoi: u32, success: bool, params: &SystemParams) -> (u32, bool) {
    if success {
        (1, false)
    } else if aoi < params.aoi_max {
        (aoi + 1, false)
    } else {
        (1, true)
    }
}

#[inline]
pub fn normalized_energy(energy: u32, params: &SystemParams) -> f64 {
    (f64::from(energy) - f64::from(params.energy_floor))
        / f64::from(params.battery_capacity - params.energy_floor)
}

#[inline]
pub fn normalized_aoi(aoi: u32, params: &SystemParams) -> f64 {
    f64::from(aoi) / f64::from(params.aoi_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> SystemParams {
        SystemParams::default()
    }

    fn st(energy: u32, aoi: u32) -> DeviceState {
        DeviceState { energy, aoi }
    }

    #[test]
    fn energy_update_examples() {
        let p = defaults();
        assert_eq!(update_energy(st(50, 1), true, false, &p), Ok(51));
        assert_eq!(update_energy(st(100, 1), true, true, &p), Ok(90));
        assert_eq!(update_energy(st(11, 1), false, true, &p), Ok(1));
    }

    #[test]
    fn transmitting_without_energy_is_rejected() {
        let p = defaults();
        assert_eq!(
            update_energy(st(9, 1), true, true, &p),
            Err(Error::InsufficientEnergy {
                energy: 9,
                tx_cost: 10
            })
        );
        // the tx cost is payable even when the reserve is not kept
        assert_eq!(update_energy(st(10, 1), false, true, &p), Ok(0));
    }

    #[test]
    fn aoi_update_examples() {
        let p = defaults();
        assert_eq!(update_aoi(5, true, &p), (1, false));
        assert_eq!(update_aoi(199, false, &p), (200, false));
        assert_eq!(update_aoi(200, false, &p), (1, true));
        assert_eq!(update_aoi(200, true, &p), (1, false));
    }

    #[test]
    fn normalization_examples() {
        let p = defaults();
        assert_eq!(normalized_energy(100, &p), 1.0);
        assert_eq!(normalized_energy(1, &p), 0.0);
        assert!((normalized_energy(45, &p) - 44.0 / 99.0).abs() < 1e-15);
        assert_eq!(normalized_aoi(200, &p), 1.0);
        assert_eq!(normalized_aoi(1, &p), 0.005);
        assert_eq!(normalized_aoi(100, &p), 0.5);
    }

    #[test]
    fn validation() {
        assert!(defaults().validate().is_ok());
        let bad = SystemParams {
            battery_capacity: 5,
            ..defaults()
        };
        let err = bad.validate().unwrap_err();
        assert!(err
            .to_string()
            .contains("battery_capacity must exceed energy_floor + tx_cost"));
        // B = E_min + E leaves no room to ever transmit
        let edge = SystemParams {
            battery_capacity: 11,
            ..defaults()
        };
        assert!(edge.validate().is_err());
        let eta = SystemParams {
            harvest_prob: 1.5,
            ..defaults()
        };
        assert!(matches!(
            eta.validate(),
            Err(Error::InvalidParam {
                field: "harvest_prob",
                ..
            })
        ));
    }

    proptest! {
        #[test]
        fn energy_update_is_monotone(e in 10u32..100, h: bool, t: bool) {
            let p = defaults();
            let lo = update_energy(st(e, 1), h, t, &p).unwrap();
            let hi = update_energy(st(e + 1, 1), h, t, &p).unwrap();
            prop_assert!(lo <= hi);
            prop_assert!(hi <= p.battery_capacity);
        }

        #[test]
        fn aoi_stays_in_range(a in 1u32..=200, s: bool) {
            let p = defaults();
            let (next, discarded) = update_aoi(a, s, &p);
            prop_assert!((1..=p.aoi_max).contains(&next));
            if !s && !discarded {
                prop_assert_eq!(next, a + 1);
            }
            prop_assert_eq!(discarded, !s && a == p.aoi_max);
        }
    }
}
