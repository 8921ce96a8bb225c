#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "odekit/common.hpp"
#include "odekit/signal.hpp"

using namespace odekit;
using signal::SignalRecord;
using signal::SyntheticSpec;

namespace {

// Test-side oracle: symmetric Hann window plus a naive O(L^2) DFT.
std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
  return w;
}

std::vector<double> naive_dft_mag(const std::vector<double>& frame) {
  const int n = static_cast<int>(frame.size());
  std::vector<double> mag(static_cast<size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (int t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * k * t / n;
      acc += frame[static_cast<size_t>(t)] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    mag[static_cast<size_t>(k)] = std::abs(acc);
  }
  return mag;
}

// Band power of one channel over [t0, t1) via the DFT oracle on Hann frames.
double oracle_band_power(const SignalRecord& rec, int channel, double t0, double t1, double f_lo,
                         double f_hi, int fft = 256, int hop = 128) {
  const auto w = hann_window(fft);
  const size_t s0 = static_cast<size_t>(t0 * rec.sample_rate);
  const size_t s1 = static_cast<size_t>(t1 * rec.sample_rate);
  const int k_lo = static_cast<int>(std::ceil(f_lo * fft / rec.sample_rate));
  const int k_hi = static_cast<int>(std::floor(f_hi * fft / rec.sample_rate));
  double acc = 0.0;
  int frames = 0;
  for (size_t s = s0; s + static_cast<size_t>(fft) <= s1; s += static_cast<size_t>(hop)) {
    std::vector<double> frame(static_cast<size_t>(fft));
    const float* x = rec.channel(channel);
    for (int i = 0; i < fft; ++i) frame[static_cast<size_t>(i)] = x[s + static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
    auto mag = naive_dft_mag(frame);
    for (int k = k_lo; k <= k_hi; ++k) acc += mag[static_cast<size_t>(k)] * mag[static_cast<size_t>(k)];
    ++frames;
  }
  return acc / frames;
}

SyntheticSpec default_spec() {
  SyntheticSpec spec;
  spec.channels = 19;
  spec.sample_rate = 256.0;
  spec.duration_s = 60.0;
  spec.seed = 0;
  return spec;
}

}  // namespace

TEST_CASE("synthetic record has the documented shape") {
  SignalRecord rec = signal::generate_synthetic_record(default_spec());
  CHECK(rec.channels == 19);
  CHECK(rec.num_samples == 15360);  // 256 * 60
  CHECK(rec.samples.size() == 19u * 15360u);
  CHECK(rec.label_track.size() == 15360);
}

TEST_CASE("synthetic generation is deterministic in the seed, bit for bit") {
  SyntheticSpec spec = default_spec();
  spec.event_windows = {{20.0, 30.0}};
  spec.seed = 42;
  SignalRecord a = signal::generate_synthetic_record(spec);
  SignalRecord b = signal::generate_synthetic_record(spec);
  CHECK(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(float)) == 0);
  CHECK(a.label_track == b.label_track);

  spec.seed = 43;
  SignalRecord c = signal::generate_synthetic_record(spec);
  CHECK(std::memcmp(a.samples.data(), c.samples.data(), a.samples.size() * sizeof(float)) != 0);
}

TEST_CASE("event windows raise 20-32 Hz band power on every channel") {
  SyntheticSpec spec = default_spec();
  spec.event_windows = {{20.0, 30.0}};
  spec.seed = 7;
  SignalRecord rec = signal::generate_synthetic_record(spec);
  for (int c = 0; c < rec.channels; ++c) {
    const double event_power = oracle_band_power(rec, c, 20.0, 30.0, 20.0, 32.0);
    const double base_power = oracle_band_power(rec, c, 0.0, 10.0, 20.0, 32.0);
    INFO("channel " << c);
    CHECK(event_power > base_power);
  }
}

TEST_CASE("generator rejects bad specs") {
  SyntheticSpec spec = default_spec();
  spec.duration_s = 5.0;  // shorter than one 12 s window
  CHECK_THROWS_AS(signal::generate_synthetic_record(spec), Error);

  spec = default_spec();
  spec.event_windows = {{10.0, 20.0}, {15.0, 25.0}};  // overlap
  CHECK_THROWS_AS(signal::generate_synthetic_record(spec), Error);
}

TEST_CASE("epoch count formula") {
  SignalRecord rec = signal::generate_synthetic_record(default_spec());
  signal::EpochSequence seq = signal::segment_epochs(rec, 12.0, 1.0);
  CHECK(seq.count() == 49);  // floor((60-12)/1)+1

  SyntheticSpec spec = default_spec();
  spec.duration_s = 12.5;
  spec.window_seconds = 12.0;
  SignalRecord boundary = signal::generate_synthetic_record(spec);
  // Exactly one window fits a 12 s slice of the 12.5 s record.
  signal::EpochSequence one = signal::segment_epochs(boundary, 12.0, 12.0);
  CHECK(one.count() == 1);
}

TEST_CASE("epoch count formula holds over random triples") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dur_s(5, 90);
  std::uniform_int_distribution<int> win_s(1, 20);
  std::uniform_int_distribution<int> step_s(1, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const int duration = dur_s(rng);
    const int window = std::min(win_s(rng), duration);
    const int step = step_s(rng);
    SyntheticSpec spec = default_spec();
    spec.channels = 2;
    spec.sample_rate = 64.0;
    spec.duration_s = duration + 0.5;  // strictly longer than the window
    spec.window_seconds = window;
    SignalRecord rec = signal::generate_synthetic_record(spec);
    signal::EpochSequence seq = signal::segment_epochs(rec, window, step);
    const size_t expected =
        signal::expected_epoch_count(rec.duration_s(), window, step);
    CHECK(seq.count() == expected);
    for (const auto& e : seq.epochs) CHECK(e.size() == 2u * static_cast<size_t>(seq.epoch_len));
  }
}

TEST_CASE("record shorter than one window is rejected by segmentation") {
  SyntheticSpec spec = default_spec();
  spec.duration_s = 13.0;
  SignalRecord rec = signal::generate_synthetic_record(spec);
  CHECK_THROWS_AS(signal::segment_epochs(rec, 30.0, 1.0), Error);
}

TEST_CASE("epoch labels follow the strict majority rule") {
  SyntheticSpec spec = default_spec();
  spec.event_windows = {{20.0, 30.0}};
  spec.seed = 3;
  SignalRecord rec = signal::generate_synthetic_record(spec);
  signal::EpochSequence seq = signal::segment_epochs(rec, 12.0, 1.0);

  // Brute-force the window/event overlap: a 12 s window starting at s covers
  // [s, s+12); the event is [20, 30). Label 1 iff overlap > 6 s.
  for (size_t e = 0; e < seq.count(); ++e) {
    const double s = static_cast<double>(e) * 1.0;
    const double overlap = std::max(0.0, std::min(s + 12.0, 30.0) - std::max(s, 20.0));
    CHECK(static_cast<int>(seq.epoch_labels[e]) == (overlap > 6.0 ? 1 : 0));
  }
  // The derived range: starts 15..23 inclusive are the labeled ones.
  for (int s = 0; s <= 48; ++s) {
    const bool expect = (s >= 15 && s <= 23);
    CHECK(static_cast<bool>(seq.epoch_labels[static_cast<size_t>(s)]) == expect);
  }
}

TEST_CASE("all-zero epoch hits the log floor everywhere") {
  SignalRecord rec;
  rec.channels = 2;
  rec.sample_rate = 64.0;
  rec.num_samples = 128;
  rec.samples.assign(2 * 128, 0.0f);
  signal::EpochSequence seq = signal::segment_epochs(rec, 2.0, 2.0);
  signal::SpectralFeatures feats = signal::stft_log_spectrum(seq, 64, 32, 1e-8);
  for (const auto& epoch : feats.per_epoch)
    for (double v : epoch) CHECK(v == std::log(1e-8));
}

TEST_CASE("pure bin-centered sinusoid peaks at its bin") {
  const double fs = 256.0;
  const int fft = 64;
  for (int k : {3, 7, 12}) {
    const double freq = k * fs / fft;
    SignalRecord rec;
    rec.channels = 2;
    rec.sample_rate = fs;
    rec.num_samples = 1024;
    rec.samples.assign(2 * 1024, 0.0f);
    for (size_t i = 0; i < 1024; ++i) {
      rec.samples[i] = static_cast<float>(std::sin(2.0 * std::numbers::pi * freq * i / fs));
      rec.samples[1024 + i] = rec.samples[i];
    }
    signal::EpochSequence seq = signal::segment_epochs(rec, 4.0, 4.0);
    signal::SpectralFeatures feats = signal::stft_log_spectrum(seq, fft, 32, 1e-8);
    const double* row = feats.per_epoch[0].data();
    int argmax = 0;
    for (int b = 1; b < feats.bins; ++b)
      if (row[b] > row[argmax]) argmax = b;
    CHECK(argmax == k);
  }
}

TEST_CASE("stft agrees with the naive DFT oracle to 1e-6 relative") {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int fft = 64;
  const auto w = hann_window(fft);
  for (int trial = 0; trial < 20; ++trial) {
    SignalRecord rec;
    rec.channels = 2;
    rec.sample_rate = 64.0;
    rec.num_samples = 64;
    rec.samples.resize(2 * 64);
    for (float& v : rec.samples) v = static_cast<float>(gauss(rng));
    signal::EpochSequence seq = signal::segment_epochs(rec, 1.0, 1.0);
    signal::SpectralFeatures feats = signal::stft_log_spectrum(seq, fft, fft, 1e-12);

    for (int c = 0; c < 2; ++c) {
      std::vector<double> frame(static_cast<size_t>(fft));
      for (int i = 0; i < fft; ++i)
        frame[static_cast<size_t>(i)] =
            static_cast<double>(rec.samples[static_cast<size_t>(c) * 64 + static_cast<size_t>(i)]) *
            w[static_cast<size_t>(i)];
      auto mag = naive_dft_mag(frame);
      for (int b = 0; b < feats.bins; ++b) {
        const double got = std::exp(feats.per_epoch[0][static_cast<size_t>(c) * feats.bins + b]);
        const double want = std::max(mag[static_cast<size_t>(b)], 1e-12);
        CHECK(std::fabs(got - want) <= 1e-6 * std::max(1.0, std::fabs(want)));
      }
    }
  }
}

TEST_CASE("white-noise mean magnitude spectrum is flat within 20 percent") {
  std::vector<double> bin_mean;
  const int fft = 64;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    SignalRecord rec;
    rec.channels = 2;
    rec.sample_rate = 64.0;
    rec.num_samples = 256;
    rec.samples.resize(2 * 256);
    for (float& v : rec.samples) v = static_cast<float>(gauss(rng));
    signal::EpochSequence seq = signal::segment_epochs(rec, 4.0, 4.0);
    signal::SpectralFeatures feats = signal::stft_log_spectrum(seq, fft, 32, 1e-12);
    if (bin_mean.empty()) bin_mean.assign(static_cast<size_t>(feats.bins), 0.0);
    for (int b = 0; b < feats.bins; ++b)
      bin_mean[static_cast<size_t>(b)] += std::exp(feats.per_epoch[0][static_cast<size_t>(b)]);
  }
  double total = 0.0;
  for (double v : bin_mean) total += v;
  const double avg = total / static_cast<double>(bin_mean.size());
  for (double v : bin_mean) {
    CHECK(v >= 0.8 * avg);
    CHECK(v <= 1.2 * avg);
  }
}

TEST_CASE("stft rejects fft sizes that do not fit") {
  SignalRecord rec;
  rec.channels = 2;
  rec.sample_rate = 64.0;
  rec.num_samples = 128;
  rec.samples.assign(2 * 128, 0.1f);
  signal::EpochSequence seq = signal::segment_epochs(rec, 1.0, 1.0);  // L = 64
  CHECK_THROWS_AS(signal::stft_log_spectrum(seq, 128, 64, 1e-8), Error);
  CHECK_THROWS_AS(signal::stft_log_spectrum(seq, 48, 24, 1e-8), Error);  // not a power of two
}

TEST_CASE("stft output does not depend on the thread count") {
  SyntheticSpec spec = default_spec();
  spec.duration_s = 20.0;
  spec.event_windows = {{13.0, 16.0}};
  SignalRecord rec = signal::generate_synthetic_record(spec);
  signal::EpochSequence seq = signal::segment_epochs(rec, 4.0, 1.0);
  signal::SpectralFeatures one = signal::stft_log_spectrum(seq, 128, 64, 1e-8, 1);
  signal::SpectralFeatures four = signal::stft_log_spectrum(seq, 128, 64, 1e-8, 4);
  REQUIRE(one.count() == four.count());
  for (size_t e = 0; e < one.count(); ++e) {
    CHECK(std::memcmp(one.per_epoch[e].data(), four.per_epoch[e].data(),
                      one.per_epoch[e].size() * sizeof(double)) == 0);
  }
}

TEST_CASE("binary record format round-trips bit-exactly") {
  SyntheticSpec spec = default_spec();
  spec.duration_s = 15.0;
  spec.event_windows = {{13.0, 14.0}};
  SignalRecord rec = signal::generate_synthetic_record(spec);
  const std::string path = "record_roundtrip_tmp.rec";
  signal::save_record(rec, path);
  SignalRecord loaded = signal::load_record(path);
  CHECK(loaded.channels == rec.channels);
  CHECK(loaded.sample_rate == rec.sample_rate);
  CHECK(loaded.num_samples == rec.num_samples);
  CHECK(std::memcmp(loaded.samples.data(), rec.samples.data(),
                    rec.samples.size() * sizeof(float)) == 0);
  CHECK(loaded.label_track == rec.label_track);
  std::filesystem::remove(path);
}

TEST_CASE("malformed record files report a byte offset") {
  const std::string path = "record_truncated_tmp.rec";
  {
    std::ofstream os(path, std::ios::binary);
    const uint32_t magic = 0x524b444fu;
    os.write(reinterpret_cast<const char*>(&magic), 4);
    // header cut short
  }
  try {
    (void)signal::load_record(path);
    FAIL("expected a truncation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("csv loader reads one channel per column") {
  const std::string path = "record_csv_tmp.csv";
  {
    std::ofstream os(path);
    os << "c1,c2,c3\n";
    os << "0.5,1.0,-1.5\n";
    os << "0.25,2.0,0.0\n";
  }
  SignalRecord rec = signal::load_record_csv(path, 100.0);
  CHECK(rec.channels == 3);
  CHECK(rec.num_samples == 2);
  CHECK(rec.channel(1)[1] == 2.0f);
  CHECK(rec.channel(2)[0] == -1.5f);
  std::filesystem::remove(path);
}
