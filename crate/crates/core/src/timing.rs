//! Two arbitrated resources: the LLC port and the DRAM channel. Both serve
//! requests first-come first-served in issue order.

use crate::cache::{AccessOutcome, HitMiss};
use crate::error::ConfigError;

pub type Cycle = u64;

/// Abstract latencies and occupancies, in simulator cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimingParams {
    pub llc_hit_cycles: Cycle,
    pub dram_latency_cycles: Cycle,
    pub dram_service_interval_cycles: Cycle,
    pub llc_port_interval_cycles: Cycle,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            llc_hit_cycles: 32,
            dram_latency_cycles: 200,
            dram_service_interval_cycles: 4,
            llc_port_interval_cycles: 1,
        }
    }
}

impl TimingParams {
    pub fn new(
        llc_hit_cycles: Cycle,
        dram_latency_cycles: Cycle,
        dram_service_interval_cycles: Cycle,
        llc_port_interval_cycles: Cycle,
    ) -> Result<Self, ConfigError> {
        let p = Self {
            llc_hit_cycles,
            dram_latency_cycles,
            dram_service_interval_cycles,
            llc_port_interval_cycles,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("llc_hit_cycles", self.llc_hit_cycles),
            ("dram_latency_cycles", self.dram_latency_cycles),
            ("dram_service_interval_cycles", self.dram_service_interval_cycles),
            ("llc_port_interval_cycles", self.llc_port_interval_cycles),
        ] {
            if v == 0 {
                return Err(ConfigError::invalid(key, "must be positive"));
            }
        }
        if self.dram_latency_cycles < self.dram_service_interval_cycles {
            return Err(ConfigError::invalid(
                "dram_latency_cycles",
                format!(
                    "must be at least dram_service_interval_cycles ({} < {})",
                    self.dram_latency_cycles, self.dram_service_interval_cycles
                ),
            ));
        }
        Ok(())
    }
}

/// When each shared resource next becomes free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ChannelState {
    pub llc_port_free_at: Cycle,
    pub dram_free_at: Cycle,
}

impl ChannelState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pushes one transaction through the port and, on a miss, the DRAM
    /// channel. Returns its completion cycle.
    pub fn service(&mut self, params: &TimingParams, outcome: HitMiss, issue_time: Cycle) -> Cycle {
        let port_start = issue_time.max(self.llc_port_free_at);
        self.llc_port_free_at = port_start + params.llc_port_interval_cycles;
        match outcome {
            HitMiss::Hit => port_start + params.llc_hit_cycles,
            HitMiss::Miss => {
                let dram_start = port_start.max(self.dram_free_at);
                self.dram_free_at = dram_start + params.dram_service_interval_cycles;
                dram_start + params.dram_latency_cycles
            }
        }
    }
}

/// Free-function form of [`ChannelState::service`].
pub fn service_transaction(
    channel: &mut ChannelState,
    params: &TimingParams,
    outcome: &AccessOutcome,
    issue_time: Cycle,
) -> Cycle {
    channel.service(params, outcome.kind, issue_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_and_miss_on_idle_channel() {
        let p = TimingParams::default();
        let mut ch = ChannelState::new();
        assert_eq!(service_transaction(&mut ch, &p, &AccessOutcome::hit(), 0), 32);
        let mut ch = ChannelState::new();
        assert_eq!(service_transaction(&mut ch, &p, &AccessOutcome::miss(None), 0), 200);
        assert_eq!(ch, ChannelState { llc_port_free_at: 1, dram_free_at: 4 });
    }

    #[test]
    fn back_to_back_misses_queue_on_dram() {
        let p = TimingParams::default();
        let mut ch = ChannelState::new();
        let a = ch.service(&p, HitMiss::Miss, 0);
        let b = ch.service(&p, HitMiss::Miss, 1);
        // port at 1, DRAM busy until 4
        assert_eq!((a, b), (200, 204));
        assert_eq!(ch, ChannelState { llc_port_free_at: 2, dram_free_at: 8 });
    }

    #[test]
    fn port_serializes_hits() {
        let p = TimingParams::new(32, 200, 4, 3).unwrap();
        let mut ch = ChannelState::new();
        let done: Vec<_> = (0..3).map(|_| ch.service(&p, HitMiss::Hit, 0)).collect();
        assert_eq!(done, vec![32, 35, 38]);
    }

    #[test]
    fn validation() {
        assert!(TimingParams::new(0, 200, 4, 1).is_err());
        assert_eq!(
            TimingParams::new(32, 3, 4, 1).unwrap_err().key(),
            "dram_latency_cycles"
        );
        assert!(TimingParams::default().validate().is_ok());
    }
}
