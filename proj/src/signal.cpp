#include "odekit/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "odekit/common.hpp"

namespace odekit::signal {

namespace {

constexpr const char* kModule = "signal_pipeline";

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Iterative radix-2 FFT, in place. n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Raised-cosine on/off envelope inside [0, span_s], ramps of ramp_s.
double burst_envelope(double t, double span_s, double ramp_s) {
  if (t < 0.0 || t > span_s) return 0.0;
  if (t < ramp_s) return 0.5 * (1.0 - std::cos(std::numbers::pi * t / ramp_s));
  if (t > span_s - ramp_s) return 0.5 * (1.0 - std::cos(std::numbers::pi * (span_s - t) / ramp_s));
  return 1.0;
}

}  // namespace

void SignalRecord::validate(const char* op) const {
  check(channels > 0 && num_samples > 0, kModule, op, "record has no samples");
  check(sample_rate > 0.0, kModule, op, "sample_rate must be positive");
  check(samples.size() == static_cast<size_t>(channels) * num_samples, kModule, op,
        "sample buffer does not match channels x samples");
  if (!label_track.empty()) {
    check(label_track.size() == num_samples, kModule, op, "label track length mismatch");
    for (uint8_t v : label_track)
      check(v <= 1, kModule, op, "label track values must be 0 or 1");
  }
}

size_t expected_epoch_count(double duration_s, double window_seconds, double step_seconds) {
  if (duration_s < window_seconds) return 0;
  return static_cast<size_t>(std::floor((duration_s - window_seconds) / step_seconds)) + 1;
}

SignalRecord generate_synthetic_record(const SyntheticSpec& spec) {
  check(spec.channels >= 2, kModule, "generate_synthetic_record", "need at least 2 channels");
  check(spec.sample_rate > 0.0, kModule, "generate_synthetic_record", "sample_rate must be positive");
  check(spec.duration_s > spec.window_seconds, kModule, "generate_synthetic_record",
        "duration " + std::to_string(spec.duration_s) + " s is shorter than one window (" +
            std::to_string(spec.window_seconds) + " s)");
  auto windows = spec.event_windows;
  std::sort(windows.begin(), windows.end());
  for (size_t i = 0; i < windows.size(); ++i) {
    check(windows[i].first >= 0.0 && windows[i].second <= spec.duration_s &&
              windows[i].first < windows[i].second,
          kModule, "generate_synthetic_record", "event window out of range");
    if (i > 0)
      check(windows[i].first >= windows[i - 1].second, kModule, "generate_synthetic_record",
            "event windows overlap");
  }

  const int n_ch = spec.channels;
  const size_t n_smp = static_cast<size_t>(std::llround(spec.duration_s * spec.sample_rate));
  const double dt = 1.0 / spec.sample_rate;

  SignalRecord rec;
  rec.channels = n_ch;
  rec.sample_rate = spec.sample_rate;
  rec.num_samples = n_smp;
  rec.samples.assign(static_cast<size_t>(n_ch) * n_smp, 0.0f);
  rec.label_track.assign(n_smp, 0);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double gain = uniform(rng, spec.record_gain_min, spec.record_gain_max);
  // Colored-noise mix: per-record tilt so band-power statistics vary across
  // records while within-record correlation structure stays comparable.
  const double mix_low = uniform(rng, 0.20, 0.60);
  const double lp_alpha = uniform(rng, 0.55, 0.85);
  const double lp_gain = std::sqrt(1.0 - lp_alpha * lp_alpha);  // unit stationary variance

  // Coupled clique for the event bursts.
  std::vector<int> order(static_cast<size_t>(n_ch));
  for (int c = 0; c < n_ch; ++c) order[static_cast<size_t>(c)] = c;
  std::shuffle(order.begin(), order.end(), rng);
  const int clique_n = std::min(spec.clique_size, n_ch);
  std::vector<bool> in_clique(static_cast<size_t>(n_ch), false);
  for (int i = 0; i < clique_n; ++i) in_clique[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

  // Background: per-channel sinusoid mixture with slow amplitude drift.
  struct Tone {
    double freq, amp, phase, mod_period, mod_phase;
  };
  constexpr int kTones = 3;
  std::vector<Tone> tones(static_cast<size_t>(n_ch) * kTones);
  std::vector<double> noise_sigma(static_cast<size_t>(n_ch));
  for (int c = 0; c < n_ch; ++c) {
    for (int k = 0; k < kTones; ++k) {
      Tone& t = tones[static_cast<size_t>(c) * kTones + k];
      t.freq = uniform(rng, 1.0, 12.0);
      t.amp = gain * uniform(rng, 0.5, 1.0);
      t.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      t.mod_period = uniform(rng, 15.0, 40.0);
      t.mod_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    noise_sigma[static_cast<size_t>(c)] = gain * uniform(rng, spec.noise_scale_min, spec.noise_scale_max);
  }

  for (int c = 0; c < n_ch; ++c) {
    float* out = rec.samples.data() + static_cast<size_t>(c) * n_smp;
    double lp_state = 0.0;
    for (size_t s = 0; s < n_smp; ++s) {
      const double t = static_cast<double>(s) * dt;
      double v = 0.0;
      for (int k = 0; k < kTones; ++k) {
        const Tone& tone = tones[static_cast<size_t>(c) * kTones + k];
        const double drift =
            1.0 + 0.35 * std::sin(2.0 * std::numbers::pi * t / tone.mod_period + tone.mod_phase);
        v += tone.amp * drift * std::sin(2.0 * std::numbers::pi * tone.freq * t + tone.phase);
      }
      const double white = gauss(rng);
      lp_state = lp_alpha * lp_state + lp_gain * gauss(rng);
      v += noise_sigma[static_cast<size_t>(c)] *
           (std::sqrt(1.0 - mix_low) * white + std::sqrt(mix_low) * lp_state);
      out[s] = static_cast<float>(v);
    }
  }

  // Events: 20-32 Hz bursts. The clique shares one carrier per segment with
  // small per-channel lags; the remaining channels get weaker bursts at
  // channel-specific frequencies so only the clique becomes spectrally
  // coherent.
  for (const auto& [w_start, w_end] : windows) {
    const size_t s0 = static_cast<size_t>(std::llround(w_start * spec.sample_rate));
    const size_t s1 = std::min(n_smp, static_cast<size_t>(std::llround(w_end * spec.sample_rate)));
    for (size_t s = s0; s < s1; ++s) rec.label_track[s] = 1;

    std::vector<double> lag(static_cast<size_t>(n_ch), 0.0);
    std::vector<double> amp(static_cast<size_t>(n_ch), 0.0);
    for (int c = 0; c < n_ch; ++c) {
      lag[static_cast<size_t>(c)] = uniform(rng, 0.0, 0.005);
      amp[static_cast<size_t>(c)] =
          in_clique[static_cast<size_t>(c)]
              ? gain * uniform(rng, spec.clique_amp_min, spec.clique_amp_max)
              : gain * uniform(rng, spec.weak_amp_min, spec.weak_amp_max);
    }

    double seg_start = w_start;
    while (seg_start < w_end - 1e-9) {
      const double seg_len = std::min(uniform(rng, 1.5, 3.0), w_end - seg_start);
      const double clique_freq = uniform(rng, 20.0, 32.0);
      const double clique_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      std::vector<double> weak_freq(static_cast<size_t>(n_ch)), weak_phase(static_cast<size_t>(n_ch));
      for (int c = 0; c < n_ch; ++c) {
        weak_freq[static_cast<size_t>(c)] = uniform(rng, 20.0, 32.0);
        weak_phase[static_cast<size_t>(c)] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      }

      const size_t a = static_cast<size_t>(std::llround(seg_start * spec.sample_rate));
      const size_t b = std::min(n_smp, static_cast<size_t>(std::llround((seg_start + seg_len) * spec.sample_rate)));
      for (int c = 0; c < n_ch; ++c) {
        float* out = rec.samples.data() + static_cast<size_t>(c) * n_smp;
        const bool coupled = in_clique[static_cast<size_t>(c)];
        const double f = coupled ? clique_freq : weak_freq[static_cast<size_t>(c)];
        const double ph = coupled ? clique_phase : weak_phase[static_cast<size_t>(c)];
        const double dly = coupled ? lag[static_cast<size_t>(c)] : 0.0;
        for (size_t s = a; s < b; ++s) {
          const double t = static_cast<double>(s) * dt;
          const double env = burst_envelope(t - seg_start, seg_len, 0.25);
          out[s] += static_cast<float>(
              amp[static_cast<size_t>(c)] * env *
              std::sin(2.0 * std::numbers::pi * f * (t - dly) + ph));
        }
      }
      seg_start += seg_len;
    }
  }

  rec.validate("generate_synthetic_record");
  return rec;
}

EpochSequence segment_epochs(const SignalRecord& record, double window_seconds,
                             double step_seconds) {
  record.validate("segment_epochs");
  check(step_seconds > 0.0, kModule, "segment_epochs", "step_seconds must be positive");
  const long L = std::llround(window_seconds * record.sample_rate);
  const long hop = std::llround(step_seconds * record.sample_rate);
  check(L > 0 && hop > 0, kModule, "segment_epochs", "window and step must cover >= 1 sample");
  check(static_cast<size_t>(L) <= record.num_samples, kModule, "segment_epochs",
        "record (" + std::to_string(record.duration_s()) + " s) is shorter than one window (" +
            std::to_string(window_seconds) + " s)");

  const size_t count = (record.num_samples - static_cast<size_t>(L)) / static_cast<size_t>(hop) + 1;

  EpochSequence seq;
  seq.channels = record.channels;
  seq.epoch_len = static_cast<int>(L);
  seq.window_seconds = window_seconds;
  seq.step_seconds = step_seconds;
  seq.sample_rate = record.sample_rate;
  seq.epochs.reserve(count);
  for (size_t e = 0; e < count; ++e) {
    const size_t start = e * static_cast<size_t>(hop);
    std::vector<double> epoch(static_cast<size_t>(record.channels) * static_cast<size_t>(L));
    for (int c = 0; c < record.channels; ++c) {
      const float* src = record.channel(c) + start;
      double* dst = epoch.data() + static_cast<size_t>(c) * static_cast<size_t>(L);
      for (long i = 0; i < L; ++i) dst[i] = static_cast<double>(src[i]);
    }
    seq.start_samples.push_back(start);
    seq.epochs.push_back(std::move(epoch));

    uint8_t label = 0;
    if (!record.label_track.empty()) {
      size_t ones = 0;
      for (long i = 0; i < L; ++i) ones += record.label_track[start + static_cast<size_t>(i)];
      label = (2 * ones > static_cast<size_t>(L)) ? 1 : 0;  // strictly more than half
    }
    seq.epoch_labels.push_back(label);
  }
  return seq;
}

SpectralFeatures stft_log_spectrum(const EpochSequence& epochs, int fft_size, int hop,
                                   double floor_epsilon, int threads) {
  check(!epochs.epochs.empty(), kModule, "stft_log_spectrum", "epoch sequence is empty");
  check(fft_size >= 2 && (fft_size & (fft_size - 1)) == 0, kModule, "stft_log_spectrum",
        "fft_size must be a power of two, got " + std::to_string(fft_size));
  check(fft_size <= epochs.epoch_len, kModule, "stft_log_spectrum",
        "fft_size " + std::to_string(fft_size) + " exceeds epoch length " +
            std::to_string(epochs.epoch_len));
  check(hop > 0, kModule, "stft_log_spectrum", "hop must be positive");
  check(floor_epsilon > 0.0, kModule, "stft_log_spectrum", "floor_epsilon must be positive");

  const int bins = fft_size / 2 + 1;
  const int n_frames = (epochs.epoch_len - fft_size) / hop + 1;
  const int n_ch = epochs.channels;

  // Symmetric Hann window.
  std::vector<double> window(static_cast<size_t>(fft_size));
  for (int i = 0; i < fft_size; ++i) {
    window[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (fft_size - 1)));
  }

  SpectralFeatures feats;
  feats.channels = n_ch;
  feats.bins = bins;
  feats.fft_size = fft_size;
  feats.hop = hop;
  feats.floor_epsilon = floor_epsilon;
  feats.per_epoch.assign(epochs.count(), {});

  parallel_for(static_cast<int>(epochs.count()), threads, [&](int e) {
    const std::vector<double>& epoch = epochs.epochs[static_cast<size_t>(e)];
    std::vector<double> out(static_cast<size_t>(n_ch) * bins, 0.0);
    std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size));
    for (int c = 0; c < n_ch; ++c) {
      const double* x = epoch.data() + static_cast<size_t>(c) * epochs.epoch_len;
      double* row = out.data() + static_cast<size_t>(c) * bins;
      for (int f = 0; f < n_frames; ++f) {
        const double* frame = x + static_cast<size_t>(f) * hop;
        for (int i = 0; i < fft_size; ++i)
          buf[static_cast<size_t>(i)] = frame[i] * window[static_cast<size_t>(i)];
        fft_inplace(buf);
        for (int k = 0; k < bins; ++k) row[k] += std::abs(buf[static_cast<size_t>(k)]);
      }
      for (int k = 0; k < bins; ++k) {
        const double mean_mag = row[k] / n_frames;
        row[k] = std::log(std::max(mean_mag, floor_epsilon));
      }
      for (int k = 0; k < bins; ++k)
        check(std::isfinite(row[k]), kModule, "stft_log_spectrum", "non-finite spectral value");
    }
    feats.per_epoch[static_cast<size_t>(e)] = std::move(out);
  });
  return feats;
}

namespace {

template <typename T>
void write_le(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& is, const std::string& path, size_t& offset) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(is.good(), kModule, "load_record",
        path + ": truncated at byte offset " + std::to_string(offset));
  offset += sizeof(T);
  return v;
}

constexpr uint32_t kMagic = 0x524b444fu;  // "ODKR"

}  // namespace

void save_record(const SignalRecord& record, const std::string& path) {
  record.validate("save_record");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), kModule, "save_record", "cannot open " + path);
  write_le<uint32_t>(os, kMagic);
  write_le<uint32_t>(os, 1u);
  write_le<uint32_t>(os, static_cast<uint32_t>(record.channels));
  write_le<uint32_t>(os, record.label_track.empty() ? 0u : 1u);
  write_le<double>(os, record.sample_rate);
  write_le<uint64_t>(os, static_cast<uint64_t>(record.num_samples));
  os.write(reinterpret_cast<const char*>(record.samples.data()),
           static_cast<std::streamsize>(record.samples.size() * sizeof(float)));
  if (!record.label_track.empty()) {
    os.write(reinterpret_cast<const char*>(record.label_track.data()),
             static_cast<std::streamsize>(record.label_track.size()));
  }
  check(os.good(), kModule, "save_record", "write failed for " + path);
}

SignalRecord load_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), kModule, "load_record", "cannot open " + path);
  size_t offset = 0;
  const uint32_t magic = read_le<uint32_t>(is, path, offset);
  check(magic == kMagic, kModule, "load_record",
        path + ": bad magic at byte offset 0 (not a record file)");
  const uint32_t version = read_le<uint32_t>(is, path, offset);
  check(version == 1, kModule, "load_record",
        path + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  SignalRecord rec;
  rec.channels = static_cast<int>(read_le<uint32_t>(is, path, offset));
  const uint32_t flags = read_le<uint32_t>(is, path, offset);
  rec.sample_rate = read_le<double>(is, path, offset);
  rec.num_samples = static_cast<size_t>(read_le<uint64_t>(is, path, offset));
  check(rec.channels > 0 && rec.num_samples > 0, kModule, "load_record",
        path + ": empty record header at byte offset 8");
  rec.samples.resize(static_cast<size_t>(rec.channels) * rec.num_samples);
  is.read(reinterpret_cast<char*>(rec.samples.data()),
          static_cast<std::streamsize>(rec.samples.size() * sizeof(float)));
  check(is.good(), kModule, "load_record",
        path + ": truncated sample payload at byte offset " + std::to_string(offset));
  offset += rec.samples.size() * sizeof(float);
  if (flags & 1u) {
    rec.label_track.resize(rec.num_samples);
    is.read(reinterpret_cast<char*>(rec.label_track.data()),
            static_cast<std::streamsize>(rec.num_samples));
    check(is.good(), kModule, "load_record",
          path + ": truncated label track at byte offset " + std::to_string(offset));
  }
  rec.validate("load_record");
  return rec;
}

SignalRecord load_record_csv(const std::string& path, double sample_rate) {
  std::ifstream is(path);
  check(is.good(), kModule, "load_record_csv", "cannot open " + path);
  std::string line;
  check(static_cast<bool>(std::getline(is, line)), kModule, "load_record_csv",
        path + ": missing header row");
  int n_ch = line.empty() ? 0 : 1;
  for (char ch : line)
    if (ch == ',') ++n_ch;
  check(n_ch >= 2, kModule, "load_record_csv", path + ": need at least 2 channel columns");

  std::vector<std::vector<float>> columns(static_cast<size_t>(n_ch));
  size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (int c = 0; c < n_ch; ++c) {
      check(static_cast<bool>(std::getline(ss, cell, ',')), kModule, "load_record_csv",
            path + ": line " + std::to_string(line_no) + " has fewer than " +
                std::to_string(n_ch) + " columns");
      try {
        columns[static_cast<size_t>(c)].push_back(std::stof(cell));
      } catch (const std::exception&) {
        fail(kModule, "load_record_csv",
             path + ": line " + std::to_string(line_no) + " column " + std::to_string(c + 1) +
                 " is not a number");
      }
    }
  }
  check(!columns[0].empty(), kModule, "load_record_csv", path + ": no sample rows");

  SignalRecord rec;
  rec.channels = n_ch;
  rec.sample_rate = sample_rate;
  rec.num_samples = columns[0].size();
  rec.samples.resize(static_cast<size_t>(n_ch) * rec.num_samples);
  for (int c = 0; c < n_ch; ++c)
    std::copy(columns[static_cast<size_t>(c)].begin(), columns[static_cast<size_t>(c)].end(),
              rec.samples.begin() + static_cast<size_t>(c) * rec.num_samples);
  rec.validate("load_record_csv");
  return rec;
}

}  // namespace odekit::signal
