//! Independent random substreams keyed by channel, so that adding agents or
//! channels leaves every existing stream untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::DropModel;
use crate::linalg::Vector;
use crate::model::UniformNoise;

/// FNV-1a; fixed across platforms and releases, unlike the std hasher.
fn stream_id(tag: &str, a: u64, b: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.bytes().chain(a.to_le_bytes()).chain(b.to_le_bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn substream(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha12Rng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream_id(tag, a, b));
    r
}

fn uniform(r: &mut ChaCha12Rng, h: f64) -> f64 {
    // one draw per call regardless of h keeps streams aligned
    let s: f64 = r.random();
    h * (2.0 * s - 1.0)
}

pub(super) struct Streams {
    noise: Option<UniformNoise>,
    process: Vec<ChaCha12Rng>,
    measurement: Vec<ChaCha12Rng>,
    /// Indexed `sender * agents + receiver`.
    links: Vec<ChaCha12Rng>,
    agents: usize,
}

impl Streams {
    pub(super) fn new(seed: u64, output_blocks: &[usize], noise: Option<&UniformNoise>) -> Self {
        let agents = output_blocks.len();
        let process = noise
            .map(|u| (0..u.process_half_widths.len()).map(|j| substream(seed, "process", j as u64, 0)).collect())
            .unwrap_or_default();
        let measurement = match noise {
            Some(_) => output_blocks
                .iter()
                .enumerate()
                .flat_map(|(i, &p)| (0..p).map(move |c| substream(seed, "measurement", i as u64, c as u64)))
                .collect(),
            None => Vec::new(),
        };
        let links = (0..agents * agents).map(|l| substream(seed, "link", (l / agents) as u64, (l % agents) as u64)).collect();
        Self { noise: noise.cloned(), process, measurement, links, agents }
    }

    pub(super) fn process(&mut self, n: usize) -> Vector {
        match &self.noise {
            None => Vector::zeros(n),
            Some(u) => {
                let nu = Vector::from_iterator(
                    self.process.len(),
                    self.process.iter_mut().zip(&u.process_half_widths).map(|(r, &h)| uniform(r, h)),
                );
                &u.process_map * nu
            }
        }
    }

    pub(super) fn measurement(&mut self, p: usize) -> Vector {
        match &self.noise {
            None => Vector::zeros(p),
            Some(u) => Vector::from_iterator(
                p,
                self.measurement.iter_mut().zip(&u.measurement_half_widths).map(|(r, &h)| uniform(r, h)),
            ),
        }
    }

    /// Lost `(sender, receiver)` pairs at step `k` among the transmitting agents.
    pub(super) fn drops(&mut self, model: DropModel, k: usize, agents: usize, transmit: &[usize]) -> Vec<(usize, usize)> {
        debug_assert_eq!(agents, self.agents);
        let mut lost = Vec::new();
        match model {
            DropModel::None => {}
            DropModel::Bernoulli { p_loss } => {
                // every link draws every step, so the pattern does not depend on the trajectory
                for m in 0..agents {
                    for i in 0..agents {
                        if m == i {
                            continue;
                        }
                        let hit = self.links[m * agents + i].random::<f64>() < p_loss;
                        if hit && transmit.binary_search(&m).is_ok() {
                            lost.push((m, i));
                        }
                    }
                }
            }
            DropModel::MinSpacing { k0 } => {
                if (k - 1).is_multiple_of(k0) && !transmit.is_empty() {
                    let m = transmit[((k - 1) / k0) % transmit.len()];
                    lost.extend((0..agents).filter(|&i| i != m).map(|i| (m, i)));
                }
            }
        }
        lost
    }
}
