//! Built-in networks, hardware configurations and published reference values.

use crate::arch::HwConfig;
use crate::spec::{ConvSpec, NetworkSpec, PoolSpec, SuperLayerSpec};

pub const NETWORK_PRESETS: &[&str] = &["alexnet"];
pub const HW_PRESETS: &[&str] = &["alexnet-full", "kintex-layer2", "kintex-layer345"];

/// AlexNet's five convolutional super layers at batch 128. Layers 2, 4 and 5
/// are grouped convolutions (two groups each); layer specs describe one group.
pub fn alexnet() -> NetworkSpec {
    let pool = Some(PoolSpec::new(3, 2));
    let layers = vec![
        SuperLayerSpec::new(
            ConvSpec::new(3, 96, 11, 4, 1).with_pad_end(2),
            true,
            pool,
            224,
            224,
        ),
        SuperLayerSpec::new(ConvSpec::new(48, 128, 5, 1, 2), true, pool, 27, 27),
        SuperLayerSpec::new(ConvSpec::new(256, 384, 3, 1, 1), true, None, 13, 13),
        SuperLayerSpec::new(ConvSpec::new(192, 192, 3, 1, 1), true, None, 13, 13),
        SuperLayerSpec::new(ConvSpec::new(192, 128, 3, 1, 1), true, pool, 13, 13),
    ];
    NetworkSpec::new("alexnet", 128, layers).with_groups(vec![1, 2, 1, 2, 2])
}

pub fn network_preset(name: &str) -> Option<NetworkSpec> {
    match name {
        "alexnet" => Some(alexnet()),
        _ => None,
    }
}

fn kintex_base() -> HwConfig {
    HwConfig {
        num_cu: 16,
        word_bytes: 4,
        relu_pool_units: 2,
        clock_hz: 137e6,
        bitstream_bytes: 11.4e6,
        cfg_bus_bytes_per_cycle: 2.0,
        cfg_clock_hz: 66e6,
        dram_bytes_per_s: 19.2e9,
        max_n: 48,
        max_m: 128,
        max_k: 5,
        line_buffer_bytes: None,
    }
}

/// * `kintex-layer2`: 16 CUs sized for one group of AlexNet layer 2.
/// * `kintex-layer345`: 48 CUs sized for layer 3 (256→384, k=3), shared by layers 3-5.
/// * `alexnet-full`: 16 CUs with an envelope large enough for every AlexNet layer.
pub fn hw_preset(name: &str) -> Option<HwConfig> {
    match name {
        "kintex-layer2" => Some(kintex_base()),
        "kintex-layer345" => Some(HwConfig {
            num_cu: 48,
            max_n: 256,
            max_m: 384,
            max_k: 3,
            ..kintex_base()
        }),
        "alexnet-full" => Some(HwConfig {
            max_n: 384,
            max_m: 384,
            max_k: 11,
            ..kintex_base()
        }),
        _ => None,
    }
}

/// Published values used by the comparison reports.
pub mod published {
    pub const TABLE1_INPUT_STORAGE_MB: f64 = 17.9;
    pub const TABLE1_CONV_OUTPUT_STORAGE_MB: f64 = 47.8;
    pub const TABLE1_POOL_OUTPUT_STORAGE_MB: f64 = 11.0;
    pub const TABLE1_KERNEL_STORAGE_KB: f64 = 614.4;
    pub const TABLE1_CONV_INPUT_TRAFFIC_GB: f64 = 114.7;
    pub const TABLE1_CONV_OUTPUT_TRAFFIC_GB: f64 = 2.3;
    pub const TABLE1_CONV_TOTAL_GB: f64 = 117.0;
    pub const TABLE1_ACT_TOTAL_MB: f64 = 95.6;
    pub const TABLE1_POOL_TOTAL_MB: f64 = 110.7;
    pub const TABLE1_CONV_OPS_G: f64 = 28.67;
    pub const TABLE1_ACT_OPS_M: f64 = 11.9;
    pub const TABLE1_POOL_OPS_M: f64 = 24.9;

    /// Layer-2 normalized bandwidth after strategies 1, 1-2, 1-3 and 1-5.
    pub const CASCADE_MB_PER_GFLOP: [(usize, f64); 4] =
        [(1, 2085.0), (2, 96.1), (3, 17.3), (5, 1.01)];

    pub const FIG6_REDUCTION: f64 = 3976.0;

    pub const TABLE3_OPS_G: [f64; 5] = [27.01, 57.34, 38.27, 28.74, 19.14];
    pub const TABLE3_OPS_TOTAL_G: f64 = 170.50;
    pub const TABLE3_FP: [f64; 5] = [4.18, 1.01, 1.45, 2.31, 1.98];
    pub const TABLE3_DP: [Option<f64>; 5] = [None, Some(4.25), Some(3.37), Some(2.31), Some(2.89)];
    pub const TABLE3_KU: [f64; 5] = [8.36, 2.29, 1.45, 2.31, 2.89];
    pub const TABLE3_TOTAL_FP: f64 = 1.94;
    pub const TABLE3_TOTAL_DP: f64 = 3.45;
    pub const TABLE3_TOTAL_KU: f64 = 3.92;
    /// 16-bit forward figures of the Eyeriss comparison column (MB/Gop).
    pub const TABLE3_EYERISS_16BIT: [f64; 5] = [7.11, 3.13, 4.26, 4.21, 4.13];
    pub const TABLE3_EYERISS_TOTAL_16BIT: f64 = 4.31;

    pub const DDR4_BYTES_PER_S: f64 = 19.2e9;
    pub const FIG14_ATTAINABLE_TFLOPS: f64 = 9.90;
    pub const FIG14_BASELINE_TFLOPS: f64 = 5.37;

    /// Prior work: (label, normalized MB/GFlop, reported throughput GFlop/s).
    pub const PRIOR_WORK: [(&str, f64, f64); 5] = [
        ("fpga2015", 25.15, 61.62),
        ("neuflow", 24.7, 160.0),
        ("nn-x", 20.0, 227.0),
        ("eyeriss", 4.31, 84.0),
        ("iccd2013", 3.57, 42.0),
    ];

    pub const RECONFIG_SECONDS: f64 = 0.087;
    pub const RECONFIG_OVERHEAD: f64 = 0.11;
    /// Measured compute time of super layer 2 at batch 128.
    pub const LAYER2_COMPUTE_SECONDS: f64 = 0.7;

    pub const NAIVE_EFFICIENCY: [f64; 3] = [1.0, 0.375, 0.25];
    pub const CONTROLLED_EFFICIENCY: [f64; 3] = [1.0, 1.0, 0.889];

    pub const PEAK_GFLOPS: f64 = 113.0;
    pub const ULTRASCALE_GFLOPS: f64 = 1244.0;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alexnet_is_consistent() {
        let net = alexnet();
        net.validate().unwrap();
        assert_eq!(net.layers.len(), 5);
        assert_eq!(net.batch, 128);
        assert_eq!((net.layers[1].conv.n, net.layers[1].conv.m), (48, 128));
    }

    #[test]
    fn hw_presets_valid() {
        for name in HW_PRESETS {
            hw_preset(name).unwrap().validate().unwrap();
        }
        assert!(hw_preset("nope").is_none());
    }
}
