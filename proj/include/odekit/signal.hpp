#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace odekit::signal {

// Multichannel time-domain recording. samples is row-major channels x S.
struct SignalRecord {
  int channels = 0;
  double sample_rate = 0.0;
  std::vector<float> samples;          // channels * num_samples
  std::vector<uint8_t> label_track;    // empty or num_samples entries in {0,1}
  size_t num_samples = 0;

  double duration_s() const { return sample_rate > 0 ? static_cast<double>(num_samples) / sample_rate : 0.0; }
  const float* channel(int c) const { return samples.data() + static_cast<size_t>(c) * num_samples; }
  void validate(const char* op) const;
};

struct SyntheticSpec {
  int channels = 19;
  double sample_rate = 256.0;
  double duration_s = 60.0;
  // [start, end) in seconds; must not overlap
  std::vector<std::pair<double, double>> event_windows;
  uint64_t seed = 0;
  // segmentation window the record must at least cover
  double window_seconds = 12.0;

  // Generator shape knobs. Background is a per-channel mixture of <= 12 Hz
  // sinusoids with slow amplitude drift plus colored noise whose gain and
  // tilt vary per record. Events superimpose 20-32 Hz bursts: a coupled
  // clique shares one carrier (small per-channel lags), remaining channels
  // get weaker incoherent bursts at channel-specific frequencies.
  double record_gain_min = 0.75;
  double record_gain_max = 1.45;
  double noise_scale_min = 0.45;
  double noise_scale_max = 0.80;
  int clique_size = 7;
  double clique_amp_min = 1.15;
  double clique_amp_max = 1.85;
  double weak_amp_min = 0.45;
  double weak_amp_max = 0.80;
};

struct EpochSequence {
  int channels = 0;
  int epoch_len = 0;  // L, samples per epoch
  double window_seconds = 0.0;
  double step_seconds = 0.0;
  double sample_rate = 0.0;
  std::vector<size_t> start_samples;      // per-epoch start offset in the record
  std::vector<std::vector<double>> epochs;  // each channels*L, row-major
  std::vector<uint8_t> epoch_labels;

  size_t count() const { return epochs.size(); }
};

struct SpectralFeatures {
  int channels = 0;
  int bins = 0;  // d = fft_size/2 + 1
  int fft_size = 0;
  int hop = 0;
  double floor_epsilon = 0.0;
  std::vector<std::vector<double>> per_epoch;  // each channels*bins

  size_t count() const { return per_epoch.size(); }
};

// Deterministic in spec.seed, bit for bit.
SignalRecord generate_synthetic_record(const SyntheticSpec& spec);

// Left-aligned tiling; trailing partial window discarded; an epoch is
// labeled 1 iff more than half of its label_track samples are 1.
EpochSequence segment_epochs(const SignalRecord& record, double window_seconds,
                             double step_seconds);

// Per channel: Hann-windowed frames, magnitude spectra averaged across the
// epoch, then log(max(mean, floor_epsilon)). threads > 1 parallelizes over
// epochs; output order is by epoch index regardless.
SpectralFeatures stft_log_spectrum(const EpochSequence& epochs, int fft_size, int hop,
                                   double floor_epsilon, int threads = 1);

size_t expected_epoch_count(double duration_s, double window_seconds, double step_seconds);

// Binary record format: magic "ODKR", u32 version, u32 channels, u32 flags
// (bit 0: label track present), f64 sample rate, u64 sample count, then
// row-major float32 samples, then one byte per sample of labels when present.
// All fields little-endian.
void save_record(const SignalRecord& record, const std::string& path);
SignalRecord load_record(const std::string& path);

// CSV: header row of channel names, one sample per row, one channel per column.
SignalRecord load_record_csv(const std::string& path, double sample_rate);

}  // namespace odekit::signal
