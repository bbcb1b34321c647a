//! Gain-scheduled integral anti-stall blade controller.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Target forward velocity, m/s.
    pub v_target: f64,
    /// Target absolute depth of cut, m.
    pub d_target: f64,
    /// Depth offset Δd̄_z, m.
    pub offset: f64,
    /// Integral gain K_v.
    pub k_v: f64,
    /// Threshold fraction c_vx.
    pub c_vx: f64,
    /// How far above the surface the blade may be raised, m.
    pub offset_margin: f64,
}

impl ControllerState {
    pub fn new(v_target: f64, d_target: f64, k_v: f64, c_vx: f64, offset_margin: f64) -> Self {
        Self { v_target, d_target, offset: 0.0, k_v, c_vx, offset_margin }
    }

    pub fn e_vmin(&self) -> f64 {
        self.v_target * self.c_vx
    }

    pub fn offset_limit(&self) -> f64 {
        (self.d_target + self.offset_margin).max(0.0)
    }

    /// Blade height target `−(d̄_z − Δd̄_z)` for the current offset.
    pub fn blade_target(&self) -> f64 {
        -(self.d_target - self.offset)
    }
}

/// Advances the depth offset with the velocity error `e_vx = v̄_x − v_x` and
/// returns the new blade height target.
pub fn anti_stall_update(state: &mut ControllerState, e_vx: f64) -> f64 {
    let k = state.k_v / state.v_target;
    state.offset = (k * (e_vx - state.e_vmin()) + state.offset).clamp(0.0, state.offset_limit());
    state.blade_target()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_increment_at_threshold() {
        let mut s = ControllerState::new(0.5, 0.2, 0.05, 0.2, 0.05);
        s.offset = 0.03;
        let e = s.e_vmin();
        anti_stall_update(&mut s, e);
        assert_eq!(s.offset, 0.03);
    }

    #[test]
    fn persistent_error_saturates() {
        let mut s = ControllerState::new(0.5, 0.2, 0.05, 0.2, 0.05);
        for _ in 0..1000 {
            anti_stall_update(&mut s, 0.5);
        }
        assert_eq!(s.offset, 0.25);
        assert!((s.blade_target() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn full_depth_without_offset() {
        let mut s = ControllerState::new(0.5, 0.2, 0.05, 0.2, 0.05);
        let u = anti_stall_update(&mut s, 0.0);
        assert_eq!(s.offset, 0.0);
        assert_eq!(u, -0.2);
    }
}
