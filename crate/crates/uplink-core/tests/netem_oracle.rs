//! Cross-checks the event-driven bottleneck against an independent per-bit
//! brute-force simulation on small scenarios with one mid-service capacity
//! switch. Delivery times must agree to 1 microsecond.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uplink_core::netem::{Bottleneck, CapacitySchedule, CapacitySegment, LinkEventKind};

/// Brute force: walk every packet bit by bit, advancing a clock by one bit
/// time at the capacity in force when the bit starts. FIFO service, tail
/// drop on a byte-limited queue; returns per-packet delivery times (None
/// for drops).
fn per_bit_reference(
    packets: &[(f64, u64)],
    schedule: &CapacitySchedule,
    prop_delay: f64,
    queue_limit: u64,
) -> Vec<Option<f64>> {
    #[derive(Clone, Copy)]
    struct Queued {
        index: usize,
        bytes: u64,
        arrival: f64,
    }
    let mut results = vec![None; packets.len()];
    let mut queue: Vec<Queued> = Vec::new();
    let mut server_free_at = 0.0_f64;
    let mut next = 0usize;

    // Event times are packet arrivals; between arrivals, serve greedily.
    while next < packets.len() || !queue.is_empty() {
        if !queue.is_empty() {
            let head = queue[0];
            let start = server_free_at.max(head.arrival);
            // Serve one bit at a time at the instantaneous capacity.
            let mut clock = start;
            for _ in 0..(8 * head.bytes) {
                clock += 1.0 / schedule.capacity_at(clock);
            }
            // Accept arrivals that happened strictly before this departure.
            while next < packets.len() && packets[next].0 < clock {
                let (arrival, bytes) = packets[next];
                let in_queue: u64 = queue.iter().map(|q| q.bytes).sum();
                if in_queue + bytes <= queue_limit {
                    queue.push(Queued {
                        index: next,
                        bytes,
                        arrival,
                    });
                } // else: dropped, stays None
                next += 1;
            }
            queue.remove(0);
            server_free_at = clock;
            results[head.index] = Some(clock + prop_delay);
        } else {
            // Idle server: admit the next packet.
            let (arrival, bytes) = packets[next];
            if bytes <= queue_limit {
                queue.push(Queued {
                    index: next,
                    bytes,
                    arrival,
                });
            }
            next += 1;
        }
    }
    results
}

fn run_event_driven(
    packets: &[(f64, u64)],
    schedule: &CapacitySchedule,
    prop_delay: f64,
    queue_limit: u64,
) -> Vec<Option<f64>> {
    let mut link = Bottleneck::new(schedule.clone(), prop_delay, queue_limit).unwrap();
    let mut results = vec![None; packets.len()];
    for (i, (arrival, bytes)) in packets.iter().enumerate() {
        if let Some(ev) = link.offer(i, *bytes, *arrival).unwrap() {
            assert_eq!(ev.kind, LinkEventKind::Dropped);
        }
        while let Some(t) = link.next_delivery() {
            if t <= *arrival {
                let ev = link.pop_delivery().unwrap();
                results[ev.payload] = Some(ev.deliver_time);
            } else {
                break;
            }
        }
    }
    while let Some(ev) = link.pop_delivery() {
        results[ev.payload] = Some(ev.deliver_time);
    }
    results
}

fn compare(packets: &[(f64, u64)], schedule: &CapacitySchedule, queue_limit: u64) {
    let prop = 0.005;
    let reference = per_bit_reference(packets, schedule, prop, queue_limit);
    let actual = run_event_driven(packets, schedule, prop, queue_limit);
    for (i, (r, a)) in reference.iter().zip(&actual).enumerate() {
        match (r, a) {
            (Some(r), Some(a)) => assert!(
                (r - a).abs() <= 1e-6,
                "packet {i}: reference {r} vs event-driven {a}"
            ),
            (None, None) => {}
            _ => panic!("packet {i}: drop disagreement: {r:?} vs {a:?}"),
        }
    }
}

#[test]
fn burst_through_one_capacity_switch() {
    let schedule = CapacitySchedule {
        segments: vec![
            CapacitySegment {
                start: 0.0,
                bps: 20e6,
            },
            CapacitySegment {
                start: 0.004,
                bps: 8e6,
            },
        ],
    };
    // A 16-packet burst whose service straddles the switch.
    let packets: Vec<(f64, u64)> = (0..16).map(|i| (i as f64 * 1e-5, 1_200)).collect();
    compare(&packets, &schedule, 1_000_000);
}

#[test]
fn randomized_small_scenarios_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    for case in 0..60 {
        let n = rng.random_range(1..=20usize);
        let rate_a = rng.random_range(2e6..40e6);
        let rate_b = rng.random_range(2e6..40e6);
        let switch = rng.random_range(0.0005..0.02);
        let schedule = CapacitySchedule {
            segments: vec![
                CapacitySegment {
                    start: 0.0,
                    bps: rate_a,
                },
                CapacitySegment {
                    start: switch,
                    bps: rate_b,
                },
            ],
        };
        let mut t = 0.0;
        let packets: Vec<(f64, u64)> = (0..n)
            .map(|_| {
                t += rng.random_range(0.0..0.002);
                (t, rng.random_range(60..1_500u64))
            })
            .collect();
        // Small queue in some cases so tail drops get cross-checked too.
        let queue_limit = if case % 3 == 0 { 4_000 } else { 1_000_000 };
        compare(&packets, &schedule, queue_limit);
    }
}

#[test]
fn constant_rate_closed_form() {
    // Sanity anchor: k-th delivery of a burst equals k * 8B/c + prop.
    let schedule = CapacitySchedule::constant(10e6);
    let packets: Vec<(f64, u64)> = (0..12).map(|_| (0.0, 1_250)).collect();
    let out = run_event_driven(&packets, &schedule, 0.005, 1_000_000);
    for (k, t) in out.iter().enumerate() {
        let expect = (k + 1) as f64 * 8.0 * 1_250.0 / 10e6 + 0.005;
        assert!((t.unwrap() - expect).abs() < 1e-9);
    }
}
