#include "hubert_ap/mfcc.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace hubert_ap {
namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }

  /// |X_k|^2 for k in [0, n/2].
  void power(Eigen::Ref<Eigen::RowVectorXd> out) {
    fftw_execute(plan_);
    for (int k = 0; k <= n_ / 2; ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace

int MfccConfig::window_samples() const {
  return static_cast<int>(std::lround(window_ms * kSampleRate / 1000.0));
}

int MfccConfig::hop_samples() const {
  return static_cast<int>(std::lround(hop_ms * kSampleRate / 1000.0));
}

int MfccConfig::fft_size() const {
  int n = 1;
  while (n < window_samples()) n <<= 1;
  return n;
}

void MfccConfig::validate() const {
  if (window_samples() < 2) throw Error("mfcc: window_ms too small");
  if (hop_samples() < 1) throw Error("mfcc: hop_ms too small");
  if (hop_ms > window_ms) throw Error("mfcc: hop_ms must not exceed window_ms");
  if (mel_bands < 1) throw Error("mfcc: mel_bands must be positive");
  if (cepstral_coeffs < 1 || cepstral_coeffs > mel_bands) {
    throw Error("mfcc: cepstral_coeffs must be in [1, mel_bands]");
  }
  if (!(log_floor > 0.0)) throw Error("mfcc: log_floor must be positive");
}

int frame_count(int num_samples, int window_samples, int hop_samples) {
  if (num_samples < window_samples) return 0;
  return (num_samples - window_samples) / hop_samples + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges_hz(const MfccConfig& config, int sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(config.mel_bands + 2);
  for (int i = 0; i < config.mel_bands + 2; ++i) {
    edges[i] = mel_to_hz(top * i / (config.mel_bands + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> mel_band_centers_hz(const MfccConfig& config, int sample_rate) {
  const auto edges = mel_edges_hz(config, sample_rate);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(const MfccConfig& config, int sample_rate) {
  const int nfft = config.fft_size();
  const int bins = nfft / 2 + 1;
  const auto edges = mel_edges_hz(config, sample_rate);
  Matrix fb = Matrix::Zero(config.mel_bands, bins);
  for (int m = 0; m < config.mel_bands; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / nfft;
      if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

Matrix mel_energies(const AudioBuffer& audio, const MfccConfig& config) {
  config.validate();
  if (audio.sample_rate != kSampleRate) {
    throw Error("mfcc: sample_rate=" + std::to_string(audio.sample_rate) + " unsupported");
  }
  const int win = config.window_samples();
  const int hop = config.hop_samples();
  const int n = static_cast<int>(audio.samples.size());
  const int frames = frame_count(n, win, hop);
  if (frames == 0) {
    throw Error("mfcc: audio has " + std::to_string(n) + " samples, shorter than one window (" +
                std::to_string(win) + ")");
  }
  const int nfft = config.fft_size();
  std::vector<double> hamming(win);
  for (int i = 0; i < win; ++i) {
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));
  }
  const Matrix fb = mel_filterbank(config, audio.sample_rate);
  RealFft fft(nfft);
  Eigen::RowVectorXd power(nfft / 2 + 1);
  Matrix energies(frames, config.mel_bands);
  for (int t = 0; t < frames; ++t) {
    double* buf = fft.input();
    const double* src = audio.samples.data() + static_cast<std::ptrdiff_t>(t) * hop;
    for (int i = 0; i < win; ++i) buf[i] = src[i] * hamming[i];
    std::fill(buf + win, buf + nfft, 0.0);
    fft.power(power);
    energies.row(t) = power * fb.transpose();
  }
  return energies;
}

Matrix log_mel_energies(const AudioBuffer& audio, const MfccConfig& config) {
  const double floor = config.log_floor;
  return mel_energies(audio, config).unaryExpr([floor](double e) { return std::log(std::max(e, floor)); });
}

Matrix compute_deltas(const Matrix& feats) {
  const Eigen::Index T = feats.rows();
  Matrix out(T, feats.cols());
  auto clamp_row = [T](Eigen::Index t) { return std::clamp<Eigen::Index>(t, 0, T - 1); };
  for (Eigen::Index t = 0; t < T; ++t) {
    out.row(t) = (feats.row(clamp_row(t + 1)) - feats.row(clamp_row(t - 1)) +
                  2.0 * (feats.row(clamp_row(t + 2)) - feats.row(clamp_row(t - 2)))) /
                 10.0;
  }
  return out;
}

FeatureMatrix compute_mfcc(const AudioBuffer& audio, const MfccConfig& config, std::string utt_id) {
  const Matrix logmel = log_mel_energies(audio, config);
  const int M = config.mel_bands;
  const int C = config.cepstral_coeffs;
  // Orthonormal DCT-II basis, M x C.
  Matrix dct(M, C);
  for (int c = 0; c < C; ++c) {
    const double scale = c == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (int m = 0; m < M; ++m) dct(m, c) = scale * std::cos(std::numbers::pi * c * (m + 0.5) / M);
  }
  const Matrix ceps = logmel * dct;
  FeatureMatrix out;
  out.utt_id = std::move(utt_id);
  if (!config.include_deltas) {
    out.frames = ceps;
    return out;
  }
  const Matrix d1 = compute_deltas(ceps);
  const Matrix d2 = compute_deltas(d1);
  out.frames.resize(ceps.rows(), 3 * C);
  out.frames << ceps, d1, d2;
  return out;
}

}  // namespace hubert_ap
