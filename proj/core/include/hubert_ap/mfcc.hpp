#pragma once

#include <string>
#include <vector>

#include "hubert_ap/common.hpp"
#include "hubert_ap/wav.hpp"

namespace hubert_ap {

struct MfccConfig {
  double window_ms = 25.0;
  double hop_ms = 20.0;  // one frame per code at the label framerate
  int mel_bands = 26;
  int cepstral_coeffs = 13;
  bool include_deltas = true;
  double log_floor = 1e-10;

  int window_samples() const;
  int hop_samples() const;
  int fft_size() const;
  int feature_dim() const { return cepstral_coeffs * (include_deltas ? 3 : 1); }
  /// Throws Error when the configuration is inconsistent.
  void validate() const;
};

struct FeatureMatrix {
  std::string utt_id;
  Matrix frames;  // T x D

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
};

/// floor((n - window) / hop) + 1; zero when n < window.
int frame_count(int num_samples, int window_samples, int hop_samples);

/// Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist, as a
/// mel_bands x (fft_size/2 + 1) weight matrix over power-spectrum bins.
Matrix mel_filterbank(const MfccConfig& config, int sample_rate = kSampleRate);

/// Center frequency in Hz of every mel band.
std::vector<double> mel_band_centers_hz(const MfccConfig& config, int sample_rate = kSampleRate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Filterbank energies before the log: Hamming window, power spectrum,
/// triangular filters. T x mel_bands.
Matrix mel_energies(const AudioBuffer& audio, const MfccConfig& config);

/// log(max(energy, log_floor)) of mel_energies.
Matrix log_mel_energies(const AudioBuffer& audio, const MfccConfig& config);

/// Regression deltas over +-2 frames with edge replication.
Matrix compute_deltas(const Matrix& feats);

FeatureMatrix compute_mfcc(const AudioBuffer& audio, const MfccConfig& config,
                           std::string utt_id = {});

}  // namespace hubert_ap
