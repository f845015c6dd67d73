#![allow(dead_code)]

use gcast::cccp::Problem;
use gcast::channel::{sample_channels, ChannelConfig, ChannelModel, ChannelState, OneRingConfig};
use gcast::region::SystemParams;
use gcast::{build_layers, compute_partition, Demands, LayerScheme, LayerStructure, MessagePartition};

/// Three users; every nonempty user set has one message.
pub fn three_user_demands() -> Demands {
    Demands::new(vec![
        vec!["1", "4", "5", "7"],
        vec!["2", "4", "6", "7"],
        vec!["3", "5", "6", "7"],
    ])
    .unwrap()
}

pub fn params() -> SystemParams {
    SystemParams {
        power: 1.0,
        noise: 1e-9,
        bandwidth: 30e3,
    }
}

pub fn one_ring(groups: usize) -> ChannelConfig {
    ChannelConfig {
        model: ChannelModel::OneRing(OneRingConfig::with_groups(groups)),
        path_gain_db: -80.0,
    }
}

pub fn iid() -> ChannelConfig {
    ChannelConfig {
        model: ChannelModel::Iid,
        path_gain_db: -80.0,
    }
}

/// Owns everything a [`Problem`] borrows.
pub struct Setup {
    pub partition: MessagePartition,
    pub layers: LayerStructure,
    pub channel: ChannelState,
    pub weights: Vec<f64>,
    pub params: SystemParams,
}

impl Setup {
    pub fn new(
        demands: &Demands,
        scheme: LayerScheme,
        antennas: usize,
        subcarriers: usize,
        config: &ChannelConfig,
        seed: u64,
    ) -> Self {
        let partition = compute_partition(demands).unwrap();
        let layers = build_layers(&partition, scheme).unwrap();
        let channel = sample_channels(demands.users(), antennas, subcarriers, config, seed).unwrap();
        let weights = layers.uniform_weights();
        Setup {
            partition,
            layers,
            channel,
            weights,
            params: params(),
        }
    }

    /// Three users, full splitting, one-ring channel with three groups.
    pub fn three_users(antennas: usize, subcarriers: usize, seed: u64) -> Self {
        Self::new(
            &three_user_demands(),
            LayerScheme::Full,
            antennas,
            subcarriers,
            &one_ring(3),
            seed,
        )
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            layers: &self.layers,
            channel: &self.channel,
            weights: &self.weights,
            params: self.params,
        }
    }
}
