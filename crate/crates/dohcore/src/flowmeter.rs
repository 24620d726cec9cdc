//! Bidirectional flow assembly and per-flow statistical features.
//!
//! Packets are grouped by unordered endpoint pair; the first packet's source
//! is the initiator. A flow is finalized when it reaches `max_packets`, when
//! it has been idle for `expiration` seconds at a flush, or when its duration
//! reaches `max_duration` (long-lived flows are cut so sustained transfers
//! become a sequence of flows).

use std::collections::HashMap;
use std::io::{BufRead, Write};

/// CSV column names, in schema order.
pub const COLUMNS: [&str; 34] = [
    "SourceIP",
    "DestinationIP",
    "SourcePort",
    "DestinationPort",
    "TimeStamp",
    "Duration",
    "FlowBytesSent",
    "FlowSentRate",
    "FlowBytesReceived",
    "FlowReceivedRate",
    "PacketLengthVariance",
    "PacketLengthStandardDeviation",
    "PacketLengthMean",
    "PacketLengthMedian",
    "PacketLengthMode",
    "PacketLengthSkewFromMedian",
    "PacketLengthSkewFromMode",
    "PacketLengthCoefficientofVariation",
    "PacketTimeVariance",
    "PacketTimeStandardDeviation",
    "PacketTimeMean",
    "PacketTimeMedian",
    "PacketTimeMode",
    "PacketTimeSkewFromMedian",
    "PacketTimeSkewFromMode",
    "PacketTimeCoefficientofVariation",
    "ResponseTimeTimeVariance",
    "ResponseTimeTimeStandardDeviation",
    "ResponseTimeTimeMean",
    "ResponseTimeTimeMedian",
    "ResponseTimeTimeMode",
    "ResponseTimeTimeSkewFromMedian",
    "ResponseTimeTimeSkewFromMode",
    "ResponseTimeTimeCoefficientofVariation",
];

pub const LABEL_COLUMN: &str = "Label";

/// The numeric feature columns — everything except SourceIP, DestinationIP
/// and TimeStamp — in the order used by `FeatureVector::features`.
pub const NUMERIC_FEATURES: [&str; 31] = [
    "SourcePort",
    "DestinationPort",
    "Duration",
    "FlowBytesSent",
    "FlowSentRate",
    "FlowBytesReceived",
    "FlowReceivedRate",
    "PacketLengthVariance",
    "PacketLengthStandardDeviation",
    "PacketLengthMean",
    "PacketLengthMedian",
    "PacketLengthMode",
    "PacketLengthSkewFromMedian",
    "PacketLengthSkewFromMode",
    "PacketLengthCoefficientofVariation",
    "PacketTimeVariance",
    "PacketTimeStandardDeviation",
    "PacketTimeMean",
    "PacketTimeMedian",
    "PacketTimeMode",
    "PacketTimeSkewFromMedian",
    "PacketTimeSkewFromMode",
    "PacketTimeCoefficientofVariation",
    "ResponseTimeTimeVariance",
    "ResponseTimeTimeStandardDeviation",
    "ResponseTimeTimeMean",
    "ResponseTimeTimeMedian",
    "ResponseTimeTimeMode",
    "ResponseTimeTimeSkewFromMedian",
    "ResponseTimeTimeSkewFromMode",
    "ResponseTimeTimeCoefficientofVariation",
];

pub const FEATURE_COUNT: usize = NUMERIC_FEATURES.len();

/// Index of a feature name within [`NUMERIC_FEATURES`].
pub fn feature_index(name: &str) -> Option<usize> {
    NUMERIC_FEATURES.iter().position(|n| *n == name)
}

/// One observed packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketEvent {
    pub ts: f64,
    pub src_ip: String,
    pub src_port: u16,
    pub dst_ip: String,
    pub dst_port: u16,
    pub length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// A finalized (or in-progress) bidirectional flow.
#[derive(Debug, Clone)]
pub struct Flow {
    pub initiator: (String, u16),
    pub responder: (String, u16),
    /// (timestamp, length, direction) in arrival order.
    pub packets: Vec<(f64, u64, Direction)>,
    pub first_ts: f64,
    pub last_ts: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MeterConfig {
    /// Idle seconds after which a flow is finalized at flush time.
    pub expiration: f64,
    /// Packet count that finalizes a flow immediately.
    pub max_packets: usize,
    /// How often the flush driver is expected to run.
    pub cleanup_period: f64,
    /// Flow duration that finalizes a flow immediately.
    pub max_duration: f64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            expiration: 20.0,
            max_packets: 4000,
            cleanup_period: 5.0,
            max_duration: 90.0,
        }
    }
}

/// Feature row for one flow: addressing metadata plus the 31 numeric
/// features in [`NUMERIC_FEATURES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub source_ip: String,
    pub destination_ip: String,
    pub timestamp: f64,
    pub features: [f64; FEATURE_COUNT],
    pub label: Option<String>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.features[i])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MeterError {
    #[error("flow has no packets")]
    EmptyFlow,
    #[error("bad capture line: {0}")]
    BadCaptureLine(String),
    #[error("bad csv: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type EndpointPair = ((String, u16), (String, u16));

fn flow_key(ev: &PacketEvent) -> EndpointPair {
    let a = (ev.src_ip.clone(), ev.src_port);
    let b = (ev.dst_ip.clone(), ev.dst_port);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Groups packets into flows under [`MeterConfig`] timeouts.
pub struct FlowMeter {
    cfg: MeterConfig,
    table: HashMap<EndpointPair, Flow>,
}

impl FlowMeter {
    pub fn new(cfg: MeterConfig) -> Self {
        FlowMeter {
            cfg,
            table: HashMap::new(),
        }
    }

    pub fn config(&self) -> &MeterConfig {
        &self.cfg
    }

    /// Append one packet; returns the flow if this packet finalized it.
    pub fn ingest(&mut self, ev: PacketEvent) -> Option<Flow> {
        let key = flow_key(&ev);
        let flow = self.table.entry(key.clone()).or_insert_with(|| Flow {
            initiator: (ev.src_ip.clone(), ev.src_port),
            responder: (ev.dst_ip.clone(), ev.dst_port),
            packets: Vec::new(),
            first_ts: ev.ts,
            last_ts: ev.ts,
        });
        let direction = if (ev.src_ip.as_str(), ev.src_port)
            == (flow.initiator.0.as_str(), flow.initiator.1)
        {
            Direction::Sent
        } else {
            Direction::Received
        };
        flow.packets.push((ev.ts, ev.length, direction));
        flow.last_ts = ev.ts;
        let cut = flow.packets.len() >= self.cfg.max_packets
            || flow.last_ts - flow.first_ts >= self.cfg.max_duration;
        if cut {
            return self.table.remove(&key);
        }
        None
    }

    /// Finalize and return every flow idle for `expiration` seconds,
    /// ordered by first packet time.
    pub fn flush(&mut self, now: f64) -> Vec<Flow> {
        let expired: Vec<EndpointPair> = self
            .table
            .iter()
            .filter(|(_, f)| now - f.last_ts >= self.cfg.expiration)
            .map(|(k, _)| k.clone())
            .collect();
        let mut flows: Vec<Flow> = expired
            .into_iter()
            .filter_map(|k| self.table.remove(&k))
            .collect();
        flows.sort_by(|a, b| a.first_ts.total_cmp(&b.first_ts));
        flows
    }

    /// Finalize everything still in the table (end of capture).
    pub fn drain(&mut self) -> Vec<Flow> {
        let mut flows: Vec<Flow> = self.table.drain().map(|(_, f)| f).collect();
        flows.sort_by(|a, b| a.first_ts.total_cmp(&b.first_ts));
        flows
    }

    pub fn active_flows(&self) -> usize {
        self.table.len()
    }
}

/// Parse one line of the replay capture format
/// `ts,src_ip,src_port,dst_ip,dst_port,length`.
pub fn parse_capture_line(line: &str) -> Result<PacketEvent, MeterError> {
    let bad = || MeterError::BadCaptureLine(line.to_string());
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 6 {
        return Err(bad());
    }
    Ok(PacketEvent {
        ts: fields[0].parse().map_err(|_| bad())?,
        src_ip: fields[1].to_string(),
        src_port: fields[2].parse().map_err(|_| bad())?,
        dst_ip: fields[3].to_string(),
        dst_port: fields[4].parse().map_err(|_| bad())?,
        length: fields[5].parse().map_err(|_| bad())?,
    })
}

struct StatFamily {
    variance: f64,
    std: f64,
    mean: f64,
    median: f64,
    mode: f64,
    skew_from_median: f64,
    skew_from_mode: f64,
    cv: f64,
}

/// Descriptive statistics with fixed conventions: population variance, mode
/// as the smallest most-frequent value, and zero whenever a denominator is
/// zero or there is no data.
fn stat_family(values: &[f64]) -> StatFamily {
    if values.is_empty() {
        return StatFamily {
            variance: 0.0,
            std: 0.0,
            mean: 0.0,
            median: 0.0,
            mode: 0.0,
            skew_from_median: 0.0,
            skew_from_mode: 0.0,
            cv: 0.0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    let mode = {
        let mut best = sorted[0];
        let mut best_count = 0usize;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            if j - i > best_count {
                best_count = j - i;
                best = sorted[i];
            }
            i = j;
        }
        best
    };
    let div = |num: f64, den: f64| if den != 0.0 { num / den } else { 0.0 };
    StatFamily {
        variance,
        std,
        mean,
        median,
        mode,
        skew_from_median: div(mean - median, std),
        skew_from_mode: div(mean - mode, std),
        cv: div(std, mean),
    }
}

/// Compute the full feature vector for one finalized flow.
pub fn features(flow: &Flow) -> Result<FeatureVector, MeterError> {
    if flow.packets.is_empty() {
        return Err(MeterError::EmptyFlow);
    }
    let mut packets = flow.packets.clone();
    packets.sort_by(|a, b| a.0.total_cmp(&b.0));

    let duration = flow.last_ts - flow.first_ts;
    let bytes_sent: u64 = packets
        .iter()
        .filter(|p| p.2 == Direction::Sent)
        .map(|p| p.1)
        .sum();
    let bytes_received: u64 = packets
        .iter()
        .filter(|p| p.2 == Direction::Received)
        .map(|p| p.1)
        .sum();
    let rate = |bytes: u64| {
        if duration > 0.0 {
            bytes as f64 / duration
        } else {
            0.0
        }
    };

    let lengths: Vec<f64> = packets.iter().map(|p| p.1 as f64).collect();
    let gaps: Vec<f64> = packets.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let mut pending: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
    let mut response_times = Vec::new();
    for (ts, _, direction) in &packets {
        match direction {
            Direction::Sent => pending.push_back(*ts),
            Direction::Received => {
                if let Some(req_ts) = pending.pop_front() {
                    response_times.push(ts - req_ts);
                }
            }
        }
    }

    let length_stats = stat_family(&lengths);
    let time_stats = stat_family(&gaps);
    let response_stats = stat_family(&response_times);

    let fam = |s: &StatFamily| {
        [
            s.variance,
            s.std,
            s.mean,
            s.median,
            s.mode,
            s.skew_from_median,
            s.skew_from_mode,
            s.cv,
        ]
    };
    let mut features = [0.0; FEATURE_COUNT];
    features[0] = flow.initiator.1 as f64;
    features[1] = flow.responder.1 as f64;
    features[2] = duration;
    features[3] = bytes_sent as f64;
    features[4] = rate(bytes_sent);
    features[5] = bytes_received as f64;
    features[6] = rate(bytes_received);
    features[7..15].copy_from_slice(&fam(&length_stats));
    features[15..23].copy_from_slice(&fam(&time_stats));
    features[23..31].copy_from_slice(&fam(&response_stats));

    Ok(FeatureVector {
        source_ip: flow.initiator.0.clone(),
        destination_ip: flow.responder.0.clone(),
        timestamp: flow.first_ts,
        features,
        label: None,
    })
}

/// Write feature vectors as CSV. When `label` is given, a Label column is
/// appended; rows carrying their own label keep it, others take `label`.
pub fn export_csv(
    vectors: &[FeatureVector],
    out: &mut dyn Write,
    label: Option<&str>,
) -> Result<(), MeterError> {
    let mut header: Vec<&str> = COLUMNS.to_vec();
    if label.is_some() {
        header.push(LABEL_COLUMN);
    }
    writeln!(out, "{}", header.join(","))?;
    for v in vectors {
        let mut fields: Vec<String> = Vec::with_capacity(35);
        fields.push(v.source_ip.clone());
        fields.push(v.destination_ip.clone());
        fields.push(v.features[0].to_string());
        fields.push(v.features[1].to_string());
        fields.push(v.timestamp.to_string());
        for f in &v.features[2..] {
            fields.push(f.to_string());
        }
        if let Some(default_label) = label {
            fields.push(v.label.clone().unwrap_or_else(|| default_label.to_string()));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Read a feature CSV produced by [`export_csv`] or any file with at least
/// the schema's feature columns (extra columns are ignored; a Label column
/// is picked up when present).
pub fn parse_csv(input: &mut dyn BufRead) -> Result<Vec<FeatureVector>, MeterError> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| MeterError::BadCsv("empty file".into()))??;
    let names: Vec<String> = header_line
        .trim_end_matches('\r')
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let position = |name: &str| names.iter().position(|n| n == name);
    let mut col_sources = Vec::with_capacity(COLUMNS.len());
    for required in COLUMNS {
        match position(required) {
            Some(idx) => col_sources.push(idx),
            None => {
                return Err(MeterError::BadCsv(format!("missing column {required}")));
            }
        }
    }
    let label_idx = position(LABEL_COLUMN);

    let mut vectors = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < names.len() {
            return Err(MeterError::BadCsv(format!(
                "row {}: expected {} fields, found {}",
                line_no + 2,
                names.len(),
                fields.len()
            )));
        }
        let num = |schema_pos: usize| -> Result<f64, MeterError> {
            let raw = fields[col_sources[schema_pos]];
            raw.parse::<f64>().map_err(|_| {
                MeterError::BadCsv(format!(
                    "row {}: bad number {:?} in {}",
                    line_no + 2,
                    raw,
                    COLUMNS[schema_pos]
                ))
            })
        };
        let mut features = [0.0; FEATURE_COUNT];
        features[0] = num(2)?;
        features[1] = num(3)?;
        for (offset, feature_slot) in (5..COLUMNS.len()).zip(2..FEATURE_COUNT) {
            features[feature_slot] = num(offset)?;
        }
        vectors.push(FeatureVector {
            source_ip: fields[col_sources[0]].to_string(),
            destination_ip: fields[col_sources[1]].to_string(),
            timestamp: num(4)?,
            features,
            label: label_idx.map(|i| fields[i].to_string()),
        });
    }
    Ok(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn packet(ts: f64, from_client: bool, length: u64) -> PacketEvent {
        let (src_ip, src_port, dst_ip, dst_port) = if from_client {
            ("172.18.0.2".to_string(), 40000, "172.18.0.5".to_string(), 443)
        } else {
            ("172.18.0.5".to_string(), 443, "172.18.0.2".to_string(), 40000)
        };
        PacketEvent {
            ts,
            src_ip,
            src_port,
            dst_ip,
            dst_port,
            length,
        }
    }

    fn flow_of(packets: Vec<(f64, bool, u64)>) -> Flow {
        let mut meter = FlowMeter::new(MeterConfig::default());
        for (ts, from_client, len) in packets {
            assert!(meter.ingest(packet(ts, from_client, len)).is_none());
        }
        let mut flows = meter.drain();
        assert_eq!(flows.len(), 1);
        flows.pop().unwrap()
    }

    #[test]
    fn header_matches_the_schema_order() {
        let expected = "SourceIP,DestinationIP,SourcePort,DestinationPort,TimeStamp,Duration,\
            FlowBytesSent,FlowSentRate,FlowBytesReceived,FlowReceivedRate,\
            PacketLengthVariance,PacketLengthStandardDeviation,PacketLengthMean,\
            PacketLengthMedian,PacketLengthMode,PacketLengthSkewFromMedian,\
            PacketLengthSkewFromMode,PacketLengthCoefficientofVariation,\
            PacketTimeVariance,PacketTimeStandardDeviation,PacketTimeMean,\
            PacketTimeMedian,PacketTimeMode,PacketTimeSkewFromMedian,\
            PacketTimeSkewFromMode,PacketTimeCoefficientofVariation,\
            ResponseTimeTimeVariance,ResponseTimeTimeStandardDeviation,\
            ResponseTimeTimeMean,ResponseTimeTimeMedian,ResponseTimeTimeMode,\
            ResponseTimeTimeSkewFromMedian,ResponseTimeTimeSkewFromMode,\
            ResponseTimeTimeCoefficientofVariation";
        let expected: String = expected.split_whitespace().collect();
        assert_eq!(COLUMNS.join(","), expected);
        let mut out = Vec::new();
        export_csv(&[], &mut out, None).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim_end(), expected);
    }

    #[test]
    fn reference_length_statistics() {
        let flow = flow_of(vec![
            (0.0, true, 100),
            (1.0, true, 200),
            (2.0, true, 600),
        ]);
        let v = features(&flow).unwrap();
        assert_eq!(v.get("PacketLengthMean").unwrap(), 300.0);
        assert_eq!(v.get("PacketLengthMedian").unwrap(), 200.0);
        assert!((v.get("PacketLengthVariance").unwrap() - 46666.666666666664).abs() < 1e-6);
        assert!((v.get("PacketLengthStandardDeviation").unwrap() - 216.02468994692867).abs() < 1e-9);
        assert!((v.get("PacketLengthSkewFromMedian").unwrap() - 0.4629100498862757).abs() < 1e-9);
        assert_eq!(v.get("PacketLengthMode").unwrap(), 100.0);
    }

    #[test]
    fn constant_lengths_zero_out_variation_statistics() {
        let flow = flow_of(vec![
            (0.0, true, 150),
            (0.5, true, 150),
            (1.0, true, 150),
        ]);
        let v = features(&flow).unwrap();
        assert_eq!(v.get("PacketLengthVariance").unwrap(), 0.0);
        assert_eq!(v.get("PacketLengthCoefficientofVariation").unwrap(), 0.0);
        assert_eq!(v.get("PacketLengthSkewFromMedian").unwrap(), 0.0);
        assert_eq!(v.get("PacketLengthSkewFromMode").unwrap(), 0.0);
    }

    #[test]
    fn single_packet_flow_uses_zero_conventions() {
        let flow = flow_of(vec![(5.0, true, 80)]);
        let v = features(&flow).unwrap();
        assert_eq!(v.get("Duration").unwrap(), 0.0);
        assert_eq!(v.get("FlowSentRate").unwrap(), 0.0);
        assert_eq!(v.get("FlowBytesSent").unwrap(), 80.0);
        for name in NUMERIC_FEATURES.iter().filter(|n| {
            n.starts_with("PacketTime") || n.starts_with("ResponseTimeTime")
        }) {
            assert_eq!(v.get(name).unwrap(), 0.0, "{name}");
        }
    }

    #[test]
    fn directions_split_sent_and_received_bytes() {
        let flow = flow_of(vec![
            (0.0, true, 100),
            (0.0, false, 50),
            (1.0, true, 200),
            (1.5, false, 60),
        ]);
        let v = features(&flow).unwrap();
        assert_eq!(v.get("FlowBytesSent").unwrap(), 300.0);
        assert_eq!(v.get("FlowBytesReceived").unwrap(), 110.0);
        assert_eq!(v.get("Duration").unwrap(), 1.5);
        assert_eq!(v.get("FlowSentRate").unwrap(), 200.0);
        assert_eq!(v.source_ip, "172.18.0.2");
        assert_eq!(v.destination_ip, "172.18.0.5");
        assert_eq!(v.get("SourcePort").unwrap(), 40000.0);
        assert_eq!(v.get("DestinationPort").unwrap(), 443.0);
    }

    #[test]
    fn response_times_pair_requests_fifo() {
        let flow = flow_of(vec![
            (0.0, true, 10),
            (0.3, false, 10),
            (1.0, true, 10),
            (2.0, true, 10),
            (2.5, false, 10),
        ]);
        let v = features(&flow).unwrap();
        assert!((v.get("ResponseTimeTimeMean").unwrap() - (0.3 + 1.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn max_packets_finalizes_immediately() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        for i in 0..3999 {
            assert!(meter.ingest(packet(i as f64 * 0.001, true, 100)).is_none());
        }
        let flow = meter.ingest(packet(4.0, true, 100)).expect("finalized");
        assert_eq!(flow.packets.len(), 4000);
        assert_eq!(meter.active_flows(), 0);
    }

    #[test]
    fn idle_expiration_boundary() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(packet(0.0, true, 100));
        assert!(meter.flush(19.9).is_empty());
        let flows = meter.flush(20.0);
        assert_eq!(flows.len(), 1);
        assert!(meter.flush(20.0).is_empty());
    }

    #[test]
    fn long_flows_are_cut_at_max_duration() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        let mut finalized = 0;
        for i in 0..400 {
            if meter.ingest(packet(i as f64 * 0.5, true, 100)).is_some() {
                finalized += 1;
            }
        }
        finalized += meter.drain().len();
        assert_eq!(finalized, 3);
    }

    #[test]
    fn reversed_direction_joins_the_same_flow() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(packet(0.0, true, 100));
        meter.ingest(packet(0.1, false, 60));
        assert_eq!(meter.active_flows(), 1);
        let flow = &meter.drain()[0];
        assert_eq!(flow.packets[0].2, Direction::Sent);
        assert_eq!(flow.packets[1].2, Direction::Received);
    }

    #[test]
    fn capture_lines_parse_into_events() {
        let ev = parse_capture_line("1.5,10.0.0.1,40000,10.0.0.2,443,120").unwrap();
        assert_eq!(ev.ts, 1.5);
        assert_eq!(ev.src_ip, "10.0.0.1");
        assert_eq!(ev.length, 120);
        assert!(parse_capture_line("not,a,line").is_err());
        assert!(parse_capture_line("x,10.0.0.1,40000,10.0.0.2,443,120").is_err());
    }

    #[test]
    fn csv_round_trips() {
        let flow = flow_of(vec![
            (0.25, true, 100),
            (0.5, false, 64),
            (1.0, true, 230),
        ]);
        let mut v = features(&flow).unwrap();
        v.label = Some("Malicious".into());
        let mut out = Vec::new();
        export_csv(&[v.clone()], &mut out, Some("Benign")).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",Label"));
        assert!(text.lines().nth(1).unwrap().ends_with(",Malicious"));
        let parsed = parse_csv(&mut text.as_bytes()).unwrap();
        assert_eq!(parsed, vec![v]);
    }

    #[test]
    fn csv_reports_missing_columns() {
        let bad = "SourceIP,DestinationIP\n1,2\n";
        let err = parse_csv(&mut bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing column SourcePort"));
    }

    // Independent re-implementation used as the statistics oracle: naive
    // formulas, no shared helpers with the production path.
    mod oracle {
        pub fn mean(v: &[f64]) -> f64 {
            if v.is_empty() {
                return 0.0;
            }
            v.iter().sum::<f64>() / v.len() as f64
        }

        pub fn variance(v: &[f64]) -> f64 {
            if v.is_empty() {
                return 0.0;
            }
            let m = mean(v);
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        }

        pub fn median(v: &[f64]) -> f64 {
            if v.is_empty() {
                return 0.0;
            }
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if s.len() % 2 == 1 {
                s[s.len() / 2]
            } else {
                (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0
            }
        }

        pub fn mode(v: &[f64]) -> f64 {
            if v.is_empty() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            let mut best_count = 0usize;
            for x in v {
                let count = v.iter().filter(|y| *y == x).count();
                if count > best_count || (count == best_count && *x < best) {
                    best = *x;
                    best_count = count;
                }
            }
            best
        }

        pub fn family(v: &[f64]) -> [f64; 8] {
            let variance = variance(v);
            let std = variance.sqrt();
            let mean = mean(v);
            let median = median(v);
            let mode = mode(v);
            let guard = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
            [
                variance,
                std,
                mean,
                median,
                mode,
                guard(mean - median, std),
                guard(mean - mode, std),
                guard(std, mean),
            ]
        }

        pub fn response_times(packets: &[(f64, bool, u64)], initiator: bool) -> Vec<f64> {
            let mut deltas = Vec::new();
            let mut used = vec![false; packets.len()];
            for (i, p) in packets.iter().enumerate() {
                if p.1 != initiator {
                    continue;
                }
                for (j, q) in packets.iter().enumerate().skip(i + 1) {
                    if q.1 != initiator && !used[j] {
                        deltas.push(q.0 - p.0);
                        used[j] = true;
                        break;
                    }
                }
            }
            deltas
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]
        #[test]
        fn features_match_the_brute_force_oracle(
            raw in proptest::collection::vec(
                (0.0f64..50.0, any::<bool>(), 40u64..1500),
                1..50,
            ),
        ) {
            let mut packets = raw.clone();
            packets.sort_by(|a, b| a.0.total_cmp(&b.0));
            let flow = flow_of(packets.clone());
            let v = features(&flow).unwrap();

            let close = |a: f64, b: f64| {
                let scale = a.abs().max(b.abs()).max(1e-300);
                (a - b).abs() <= 1e-9 * scale
            };

            let initiator = packets[0].1;
            let lengths: Vec<f64> = packets.iter().map(|p| p.2 as f64).collect();
            let times: Vec<f64> = packets.iter().map(|p| p.0).collect();
            let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            let responses = oracle::response_times(&packets, initiator);

            let duration = times.last().unwrap() - times[0];
            prop_assert!(close(v.get("Duration").unwrap(), duration));
            let sent: f64 = packets
                .iter()
                .filter(|p| p.1 == initiator)
                .map(|p| p.2 as f64)
                .sum();
            let received: f64 = packets
                .iter()
                .filter(|p| p.1 != initiator)
                .map(|p| p.2 as f64)
                .sum();
            prop_assert!(close(v.get("FlowBytesSent").unwrap(), sent));
            prop_assert!(close(v.get("FlowBytesReceived").unwrap(), received));
            let rate = |b: f64| if duration > 0.0 { b / duration } else { 0.0 };
            prop_assert!(close(v.get("FlowSentRate").unwrap(), rate(sent)));
            prop_assert!(close(v.get("FlowReceivedRate").unwrap(), rate(received)));

            for (family_name, values) in [
                ("PacketLength", &lengths),
                ("PacketTime", &gaps),
                ("ResponseTimeTime", &responses),
            ] {
                let expected = oracle::family(values);
                let suffixes = [
                    "Variance",
                    "StandardDeviation",
                    "Mean",
                    "Median",
                    "Mode",
                    "SkewFromMedian",
                    "SkewFromMode",
                    "CoefficientofVariation",
                ];
                for (suffix, want) in suffixes.iter().zip(expected) {
                    let got = v.get(&format!("{family_name}{suffix}")).unwrap();
                    prop_assert!(
                        close(got, want),
                        "{family_name}{suffix}: got {got}, want {want}"
                    );
                }
            }
        }

        #[test]
        fn every_packet_lands_in_exactly_one_flow(
            raw in proptest::collection::vec(
                (0u8..6, 0.0f64..200.0, 40u64..300),
                1..200,
            ),
        ) {
            let mut meter = FlowMeter::new(MeterConfig::default());
            let mut events: Vec<PacketEvent> = raw
                .iter()
                .map(|(pair, ts, len)| {
                    let client_to_resolver = pair % 2 == 0;
                    let port = 40000 + (pair / 2) as u16;
                    if client_to_resolver {
                        PacketEvent {
                            ts: *ts,
                            src_ip: "10.0.0.1".into(),
                            src_port: port,
                            dst_ip: "10.0.0.9".into(),
                            dst_port: 443,
                            length: *len,
                        }
                    } else {
                        PacketEvent {
                            ts: *ts,
                            src_ip: "10.0.0.9".into(),
                            src_port: 443,
                            dst_ip: "10.0.0.1".into(),
                            dst_port: port,
                            length: *len,
                        }
                    }
                })
                .collect();
            events.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            let total = events.len();
            let mut collected = 0usize;
            for ev in events {
                if let Some(flow) = meter.ingest(ev) {
                    collected += flow.packets.len();
                }
            }
            for flow in meter.drain() {
                collected += flow.packets.len();
            }
            prop_assert_eq!(collected, total);
            prop_assert_eq!(meter.active_flows(), 0);
        }
    }
}
